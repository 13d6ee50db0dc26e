//! Corpus BLEU and the noise-ratio robustness sweep.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::ParallelCorpus;
use crate::detector::{to_mixed, DetectorModel};
use crate::error::{Error, Result};
use crate::noise::build_ant;
use crate::pinyin::{SyllableTable, Token};
use crate::sanmt::{prepare_source, translate_all, NmtModel};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

fn ngram_counts(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for gram in words.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 over lowercased tokens with clipped n-gram counts.
///
/// For orders two and up, a precision with no matches is smoothed to
/// `1 / (total + 1)`. A corpus with no unigram match scores 0.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        return Err(Error::Config(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyInput("BLEU corpus".into()));
    }
    let lower = |s: &[String]| s.iter().map(|w| w.to_lowercase()).collect::<Vec<_>>();
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut c, mut r) = (0, 0);
    for (h, rf) in hypotheses.iter().zip(references) {
        let (h, rf) = (lower(h), lower(rf));
        c += h.len();
        r += rf.len();
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(&rf, n);
            for (gram, count) in ngram_counts(&h, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if n > 0 && matches[n] == 0 {
            1.0 / (totals[n] + 1) as f64
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let score = if matches[0] == 0 {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        brevity_penalty * mean_log.exp() * 100.0
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        hypothesis_length: c,
        reference_length: r,
        matches,
        totals,
    })
}

/// A translator, optionally preceded by the detector rewrite.
pub struct System<'a> {
    pub name: String,
    pub model: &'a NmtModel,
    pub detector: Option<&'a DetectorModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub ratios: Vec<f64>,
    pub seed: u64,
    pub beta: f64,
    pub beam_size: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            seed: 1,
            beta: crate::detector::DEFAULT_BETA,
            beam_size: crate::sanmt::DEFAULT_BEAM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub system: String,
    /// Noise ratio; 0 is the clean test set.
    pub ratio: f64,
    pub bleu: BleuScore,
    /// SHA-256 of the (noised) test corpus fed to every system.
    pub corpus_sha256: String,
    /// Source characters rewritten to syllables by the detector.
    pub flagged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub systems: Vec<String>,
    pub ratios: Vec<f64>,
    pub clean: Vec<SweepCell>,
    pub grid: Vec<SweepCell>,
    pub metadata: Value,
}

impl SweepReport {
    pub fn cell(&self, system: &str, ratio: f64) -> Option<&SweepCell> {
        self.grid
            .iter()
            .find(|c| c.system == system && c.ratio == ratio)
    }

    pub fn clean_cell(&self, system: &str) -> Option<&SweepCell> {
        self.clean.iter().find(|c| c.system == system)
    }

    /// BLEU by ratio for one system, in grid order.
    pub fn column(&self, system: &str) -> Vec<f64> {
        self.ratios
            .iter()
            .filter_map(|&r| self.cell(system, r).map(|c| c.bleu.score))
            .collect()
    }

    /// One row per cell, clean rows first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("system\tratio\tbleu\tcorpus_sha256\n");
        for c in self.clean.iter().chain(&self.grid) {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{}\n",
                c.system, c.ratio, c.bleu.score, c.corpus_sha256
            ));
        }
        out
    }
}

pub fn corpus_sha256(corpus: &ParallelCorpus) -> String {
    let digest = Sha256::digest(corpus.to_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs one system over a corpus: optional detector rewrite, then beam
/// search. Returns the outputs and the number of rewritten characters.
pub fn run_system(
    system: &System,
    sources: &[Vec<Token>],
    table: &SyllableTable,
    beta: f64,
    beam_size: usize,
) -> Result<(Vec<Vec<String>>, usize)> {
    let mut flagged = 0;
    let inputs: Vec<Vec<Token>> = match system.detector {
        Some(det) => {
            let reports = crate::detector::score_all(det, sources, table, beta)?;
            sources
                .iter()
                .zip(&reports)
                .map(|(s, r)| {
                    flagged += r.flagged().len();
                    prepare_source(system.model.mode, &to_mixed(s, r, table), table)
                })
                .collect()
        }
        None => sources
            .iter()
            .map(|s| prepare_source(system.model.mode, s, table))
            .collect(),
    };
    Ok((translate_all(system.model, &inputs, beam_size)?, flagged))
}

/// Single-corpus BLEU for one system.
pub fn evaluate_system(
    system: &System,
    corpus: &ParallelCorpus,
    table: &SyllableTable,
    beta: f64,
    beam_size: usize,
) -> Result<(BleuScore, Vec<Vec<String>>)> {
    let sources: Vec<Vec<Token>> = corpus.pairs.iter().map(|p| p.source.clone()).collect();
    let references: Vec<Vec<String>> = corpus.pairs.iter().map(|p| p.target.clone()).collect();
    let (outputs, _) = run_system(system, &sources, table, beta, beam_size)?;
    Ok((bleu(&outputs, &references)?, outputs))
}

/// Evaluates every system on the clean test set and on one shared
/// artificial-noise copy per ratio.
pub fn run_sweep(
    systems: &[System],
    clean_test: &ParallelCorpus,
    table: &SyllableTable,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    if let Some(r) = opts.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("noise ratio {r} outside [0, 1]")));
    }
    let references: Vec<Vec<String>> = clean_test.pairs.iter().map(|p| p.target.clone()).collect();
    let evaluate = |corpus: &ParallelCorpus, ratio: f64| -> Result<Vec<SweepCell>> {
        let hash = corpus_sha256(corpus);
        let sources: Vec<Vec<Token>> = corpus.pairs.iter().map(|p| p.source.clone()).collect();
        systems
            .iter()
            .map(|system| {
                let (outputs, flagged) =
                    run_system(system, &sources, table, opts.beta, opts.beam_size)?;
                Ok(SweepCell {
                    system: system.name.clone(),
                    ratio,
                    bleu: bleu(&outputs, &references)?,
                    corpus_sha256: hash.clone(),
                    flagged,
                })
            })
            .collect()
    };
    let clean = evaluate(clean_test, 0.0)?;
    let mut grid = Vec::new();
    for &ratio in &opts.ratios {
        let noisy = build_ant(clean_test, table, ratio, opts.seed)?;
        grid.extend(evaluate(&noisy, ratio)?);
    }
    Ok(SweepReport {
        systems: systems.iter().map(|s| s.name.clone()).collect(),
        ratios: opts.ratios.clone(),
        clean,
        grid,
        metadata: json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seed": opts.seed,
            "beta": opts.beta,
            "beam_size": opts.beam_size,
            "test_sha256": corpus_sha256(clean_test),
            "test_pairs": clean_test.len(),
            "bleu": "corpus BLEU-4, lowercased whitespace tokens, zero matches of order >= 2 smoothed to 1/(total+1)",
            "detectors": systems.iter().map(|s| (s.name.clone(), s.detector.is_some())).collect::<HashMap<_, _>>(),
        }),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::tokenize_target;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent BLEU: n-grams matched by repeated linear scans, clipping
    /// by removing each matched reference n-gram from a pool.
    pub(crate) fn brute_force_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
        let mut matched = [0usize; 4];
        let mut total = [0usize; 4];
        let (mut c, mut r) = (0usize, 0usize);
        for (h, rf) in hyps.iter().zip(refs) {
            c += h.len();
            r += rf.len();
            for n in 1..=4 {
                let mut pool: Vec<Vec<String>> = Vec::new();
                let mut i = 0;
                while i + n <= rf.len() {
                    pool.push(rf[i..i + n].to_vec());
                    i += 1;
                }
                let mut j = 0;
                while j + n <= h.len() {
                    total[n - 1] += 1;
                    let gram = h[j..j + n].to_vec();
                    if let Some(k) = pool.iter().position(|p| *p == gram) {
                        pool.remove(k);
                        matched[n - 1] += 1;
                    }
                    j += 1;
                }
            }
        }
        if matched[0] == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..4 {
            let p = if n >= 1 && matched[n] == 0 {
                1.0 / (total[n] as f64 + 1.0)
            } else {
                matched[n] as f64 / total[n] as f64
            };
            log_sum += p.ln();
        }
        let bp = if c < r {
            (1.0 - r as f64 / c as f64).exp()
        } else {
            1.0
        };
        bp * (log_sum / 4.0).exp() * 100.0
    }

    fn words(s: &str) -> Vec<String> {
        tokenize_target(s)
    }

    #[test]
    fn showcase_example() {
        let s = bleu(
            &[words("build a primary school")],
            &[words("build a small school")],
        )
        .unwrap();
        assert_eq!(s.precisions[0], 0.75);
        assert!((s.precisions[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.brevity_penalty, 1.0);
        let oracle = brute_force_bleu(
            &[words("build a primary school")],
            &[words("build a small school")],
        );
        assert!((s.score - oracle).abs() < 1e-9);
        // (3/4 · 1/3 · 1/3 · 1/2)^(1/4)
        assert!((s.score - 45.180100180492246).abs() < 1e-9, "{}", s.score);
    }

    #[test]
    fn identity_and_zero_overlap() {
        let h = vec![words("a b c"), words("d")];
        assert_eq!(bleu(&h, &h).unwrap().score, 100.0);
        assert_eq!(bleu(&[words("x y")], &[words("a b")]).unwrap().score, 0.0);
        assert_eq!(bleu(&[vec![]], &[words("a b")]).unwrap().score, 0.0);
        assert!(bleu(&[], &[]).is_err());
        assert!(bleu(&[words("a")], &[]).is_err());
    }

    #[test]
    fn case_insensitive() {
        let s = bleu(
            &[words("Build A School")],
            &[vec!["build".into(), "a".into(), "school".into()]],
        )
        .unwrap();
        assert_eq!(s.score, 100.0);
    }

    pub(crate) fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
        let n = rng.gen_range(1..=3);
        let vocab = rng.gen_range(1..=10);
        let sent = |rng: &mut ChaCha8Rng| {
            let len = rng.gen_range(1..=8);
            (0..len)
                .map(|_| format!("w{}", rng.gen_range(0..vocab)))
                .collect::<Vec<_>>()
        };
        let hyps = (0..n).map(|_| sent(rng)).collect();
        let refs = (0..n).map(|_| sent(rng)).collect();
        (hyps, refs)
    }

    #[test]
    fn matches_oracle_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..50 {
            let (h, r) = random_case(&mut rng);
            let fast = bleu(&h, &r).unwrap().score;
            let slow = brute_force_bleu(&h, &r);
            assert!(
                (fast - slow).abs() < 1e-9,
                "{fast} vs {slow} on {h:?} / {r:?}"
            );
        }
    }

    proptest! {
        #[test]
        fn self_bleu_is_100(s in proptest::collection::vec("[a-e]{1,3}", 1..10)) {
            let h = vec![s];
            prop_assert_eq!(bleu(&h, &h).unwrap().score, 100.0);
        }

        #[test]
        fn score_in_range(seed in any::<u64>()) {
            let (h, r) = random_case(&mut ChaCha8Rng::seed_from_u64(seed));
            let s = bleu(&h, &r).unwrap();
            prop_assert!((0.0..=100.0).contains(&s.score));
            prop_assert!((0.0..=1.0).contains(&s.brevity_penalty));
        }
    }
}
