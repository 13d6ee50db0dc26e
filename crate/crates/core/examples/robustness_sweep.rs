//! The whole fixture experiment: detector, Baseline, Robust and CPNMT
//! models, then BLEU over noise ratios 0 to 0.5. Takes several minutes.
//!
//! ```text
//! cargo run --release -p homonmt --example robustness_sweep [output-dir]
//! ```

use homonmt::fixture;
use homonmt::pinyin::bundled_table;
use homonmt::pipeline::{run_pipeline, PipelineConfig};

fn main() -> homonmt::error::Result<()> {
    let table = bundled_table();
    let data = fixture::bundled(&table)?;
    let mut config = PipelineConfig::fixture();
    config.nmt_train.verbose = true;
    let out = run_pipeline(&config, &data, &table)?;
    for (stage, t) in &out.timings {
        println!("{stage:<16} {:>7.1}s", t.as_secs_f64());
    }
    println!(
        "detector: precision {:.3}, recall {:.3}",
        out.detection.precision, out.detection.recall
    );
    if let Some(p) = &out.probe {
        println!("{} -> {} -> {}", p.input, p.mixed, p.translation);
    }
    print!("{:<16}", "ratio");
    println!(
        "{:>8}{}",
        "clean",
        out.sweep
            .ratios
            .iter()
            .map(|r| format!("{r:>8}"))
            .collect::<String>()
    );
    for system in &out.sweep.systems {
        let clean = out
            .sweep
            .clean_cell(system)
            .map_or(f64::NAN, |c| c.bleu.score);
        let row: String = out
            .sweep
            .column(system)
            .iter()
            .map(|b| format!("{b:>8.2}"))
            .collect();
        println!("{system:<16}{clean:>8.2}{row}");
    }
    if let Some(dir) = std::env::args().nth(1) {
        out.write(std::path::Path::new(&dir))?;
    }
    Ok(())
}
