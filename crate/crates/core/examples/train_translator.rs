//! Trains one translator on the bundled fixture and translates plain,
//! mixed and all-syllable input.
//!
//! ```text
//! cargo run --release -p homonmt --example train_translator [mode] [epochs]
//! ```

use homonmt::eval::bleu;
use homonmt::fixture;
use homonmt::noise::parse_mixed;
use homonmt::pinyin::bundled_table;
use homonmt::sanmt::{
    build_training_set, prepare_corpus, prepare_source, train_nmt, translate, translate_all,
    TrainingMode,
};
use homonmt::train::TrainOptions;
use homonmt_nnet::ModelConfig;

fn main() -> homonmt::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: TrainingMode = args.next().as_deref().unwrap_or("robust").parse()?;
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    let table = bundled_table();
    let data = fixture::bundled(&table)?;
    let train = build_training_set(&data.train, &table, mode, 1)?;
    let valid = prepare_corpus(mode, &data.valid, &table);
    let opts = TrainOptions {
        epochs,
        batch_tokens: 512,
        learning_rate: 1e-3,
        warmup_steps: 100,
        verbose: true,
        ..TrainOptions::default()
    };
    println!("{mode}: {} training pairs", train.len());
    let (model, report) = train_nmt(&train, &valid, &table, mode, &ModelConfig::default(), &opts)?;
    println!(
        "best epoch {} (valid loss {:.4})",
        report.best_epoch, report.best_valid_loss
    );

    for line in [
        "建一所小学",
        "建 yi 所小学",
        "jian yi suo xiao xue",
        "她在公园画了一只猫",
    ] {
        let source = prepare_source(mode, &parse_mixed(line, &table), &table);
        println!(
            "{line:<24} -> {}",
            translate(&model, &source, 4, None)?.join(" ")
        );
    }

    let sources: Vec<_> = data
        .test
        .pairs
        .iter()
        .map(|p| prepare_source(mode, &p.source, &table))
        .collect();
    let refs: Vec<_> = data.test.pairs.iter().map(|p| p.target.clone()).collect();
    println!(
        "clean test BLEU {:.2}",
        bleu(&translate_all(&model, &sources, 4)?, &refs)?.score
    );
    Ok(())
}
