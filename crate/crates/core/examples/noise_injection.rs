//! Shows the three kinds of noisy source text built from one sentence, then
//! the realized substitution rate of an artificial-noise test set.
//!
//! ```text
//! cargo run -p homonmt --example noise_injection [ratio]
//! ```

use homonmt::fixture;
use homonmt::noise::{
    build_ant, make_ant, make_natd, make_smtd, render_mixed, substitutable_positions, NoiseMode,
};
use homonmt::pinyin::{bundled_table, tokenize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> homonmt::error::Result<()> {
    let ratio: f64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(0.4);
    let table = bundled_table();
    let sentence = tokenize("昨天我们在学校画了一只小猫");
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let (ant, _) = make_ant(&sentence, &table, ratio, &mut rng)?;
    let (smtd, records) = make_smtd(&sentence, &table, ratio, &mut rng)?;
    let (natd, skipped) = make_natd(&sentence, &records, &table, &mut rng);
    println!("original  {}", render_mixed(&sentence));
    println!("ANT       {}", render_mixed(&ant));
    println!("SMTD      {}", render_mixed(&smtd));
    println!(
        "NATD      {}  ({skipped} positions without a homophone)",
        render_mixed(&natd)
    );

    let data = fixture::bundled(&table)?;
    let noisy = build_ant(&data.test, &table, ratio, 1)?;
    let eligible: usize = data
        .test
        .pairs
        .iter()
        .map(|p| substitutable_positions(&p.source, &table, NoiseMode::Homophone).len())
        .sum();
    let changed: usize = noisy.substitutions.iter().map(Vec::len).sum();
    println!(
        "fixture test set at ratio {ratio}: {changed} of {eligible} eligible characters replaced ({:.3})",
        changed as f64 / eligible as f64
    );
    for pair in noisy.pairs.iter().take(3) {
        println!("  {}", pair.to_line());
    }
    Ok(())
}
