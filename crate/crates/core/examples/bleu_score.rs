//! Corpus BLEU on a few hand-written hypotheses.

use homonmt::corpus::tokenize_target;
use homonmt::eval::bleu;

fn main() -> homonmt::error::Result<()> {
    let cases = [
        ("build a primary school", "build a small school"),
        ("Build a primary school", "build a primary school"),
        ("he drew a cat", "she drew a cat"),
        ("school", "build a primary school"),
    ];
    for (hyp, reference) in cases {
        let s = bleu(&[tokenize_target(hyp)], &[tokenize_target(reference)])?;
        let p: Vec<String> = s.precisions.iter().map(|p| format!("{p:.3}")).collect();
        println!(
            "{:>6.2}  BP {:.3}  p [{}]  {hyp:?} vs {reference:?}",
            s.score,
            s.brevity_penalty,
            p.join(" ")
        );
    }
    let hyps: Vec<_> = cases.iter().map(|(h, _)| tokenize_target(h)).collect();
    let refs: Vec<_> = cases.iter().map(|(_, r)| tokenize_target(r)).collect();
    println!("corpus  {:.2}", bleu(&hyps, &refs)?.score);
    Ok(())
}
