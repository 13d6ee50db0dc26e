//! Trains the homophone detector on the bundled monolingual corpus, reports
//! detection quality on held-out sentences with one injected error each, and
//! rewrites the noisy showcase sentence.
//!
//! ```text
//! cargo run --release -p homonmt --example detect_homophones [epochs]
//! ```

use homonmt::detector::{
    build_self_supervised_data, default_config, evaluate_detection, score, split_holdout, to_mixed,
    train_detector, DEFAULT_BETA,
};
use homonmt::fixture;
use homonmt::noise::render_mixed;
use homonmt::pinyin::{bundled_table, tokenize};
use homonmt::train::TrainOptions;

fn main() -> homonmt::error::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(12);
    let table = bundled_table();
    let data = fixture::bundled(&table)?;
    let examples = build_self_supervised_data(&data.monolingual, &table);
    let (train, valid) = split_holdout(&examples.pairs, 0.05);
    let opts = TrainOptions {
        epochs,
        learning_rate: 1e-3,
        verbose: true,
        ..TrainOptions::default()
    };
    let started = std::time::Instant::now();
    let (model, report) = train_detector(&train, &valid, &table, &default_config(), &opts)?;
    println!(
        "trained {} epochs in {:.1}s, best epoch {}",
        report.epochs.len(),
        started.elapsed().as_secs_f64(),
        report.best_epoch
    );

    let held_out: Vec<_> = data.test.pairs.iter().map(|p| p.source.clone()).collect();
    let eval = evaluate_detection(&model, &held_out, &table, DEFAULT_BETA, 7)?;
    println!("{}", serde_json::to_string_pretty(&eval)?);

    let noisy = tokenize("建议所小学");
    let report = score(&model, &noisy, &table, DEFAULT_BETA)?;
    for p in &report.positions {
        println!(
            "{}  lls {:>8.4}  {}",
            p.token,
            p.lls,
            if p.flagged { "flagged" } else { "" }
        );
    }
    println!("{}", render_mixed(&to_mixed(&noisy, &report, &table)));
    Ok(())
}
