//! Homophone noise and syllable mixing.
//!
//! Three dataset builders share one position sampler:
//!
//! * artificial-noise test data (ANT): characters replaced by a different
//!   character with the same syllable;
//! * syllable-mixed training data (SMTD): characters replaced by their
//!   syllable;
//! * noise-adversarial training data (NATD): homophone characters placed at
//!   exactly the positions an SMTD pass rewrote.
//!
//! Each sentence draws from its own stream derived from `(seed, index)`.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, Provenance, SentencePair};
use crate::error::{Error, Result};
use crate::pinyin::{homophones, is_cjk, SyllableTable, Token};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    Homophone,
    SyllableMix,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ratio: f64,
    pub seed: u64,
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub fn new(ratio: f64, seed: u64, mode: NoiseMode) -> Result<Self> {
        check_ratio(ratio)?;
        Ok(Self { ratio, seed, mode })
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::Config(format!("noise ratio {ratio} outside [0, 1]")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionRecord {
    pub position: usize,
    pub original: Token,
    pub replacement: Token,
}

/// Positions eligible for substitution: characters with at least one
/// homophone, or every character when mixing in syllables.
pub fn substitutable_positions(
    tokens: &[Token],
    table: &SyllableTable,
    mode: NoiseMode,
) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| match (t, mode) {
            (Token::Han(c), NoiseMode::Homophone) => {
                homophones(table, *c).is_ok_and(|h| !h.is_empty())
            }
            (Token::Han(_), NoiseMode::SyllableMix) => true,
            _ => false,
        })
        .map(|(i, _)| i)
        .collect()
}

/// Exactly `round(ratio · k)` of the `k` substitutable positions, drawn
/// uniformly without replacement, in ascending order.
pub fn select_positions(
    tokens: &[Token],
    table: &SyllableTable,
    mode: NoiseMode,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    check_ratio(ratio)?;
    let eligible = substitutable_positions(tokens, table, mode);
    let count = ((ratio * eligible.len() as f64).round() as usize).min(eligible.len());
    let mut picked: Vec<usize> = sample(rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Replaces the character at each of `positions` with a uniformly drawn
/// homophone. Positions without a homophone are left alone.
pub fn inject_homophones(
    sentence: &[Token],
    positions: &[usize],
    table: &SyllableTable,
    rng: &mut ChaCha8Rng,
) -> (Vec<Token>, Vec<SubstitutionRecord>) {
    let mut out = sentence.to_vec();
    let mut records = Vec::with_capacity(positions.len());
    for &p in positions {
        let Token::Han(c) = sentence[p] else { continue };
        let Ok(choices) = homophones(table, c) else {
            continue;
        };
        if choices.is_empty() {
            continue;
        }
        let replacement = Token::Han(choices[rng.gen_range(0..choices.len())]);
        out[p] = replacement.clone();
        records.push(SubstitutionRecord {
            position: p,
            original: Token::Han(c),
            replacement,
        });
    }
    (out, records)
}

/// One artificial-noise sentence.
pub fn make_ant(
    sentence: &[Token],
    table: &SyllableTable,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Token>, Vec<SubstitutionRecord>)> {
    let positions = select_positions(sentence, table, NoiseMode::Homophone, ratio, rng)?;
    Ok(inject_homophones(sentence, &positions, table, rng))
}

/// One syllable-mixed sentence.
pub fn make_smtd(
    sentence: &[Token],
    table: &SyllableTable,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Token>, Vec<SubstitutionRecord>)> {
    for (position, t) in sentence.iter().enumerate() {
        if let Token::Han(c) = t {
            if !table.contains_char(*c) {
                return Err(Error::Unmapped { ch: *c, position });
            }
        }
    }
    let positions = select_positions(sentence, table, NoiseMode::SyllableMix, ratio, rng)?;
    let mut out = sentence.to_vec();
    let mut records = Vec::with_capacity(positions.len());
    for p in positions {
        let Token::Han(c) = sentence[p] else {
            unreachable!()
        };
        let syllable = Token::Syllable(table.syllable_of(c).expect("checked above").to_string());
        out[p] = syllable.clone();
        records.push(SubstitutionRecord {
            position: p,
            original: Token::Han(c),
            replacement: syllable,
        });
    }
    Ok((out, records))
}

/// Noise-adversarial counterpart of an SMTD sentence: a different homophone
/// at every recorded position. Returns the sentence and the number of
/// recorded positions kept unchanged for lack of a homophone.
pub fn make_natd(
    original: &[Token],
    smtd_records: &[SubstitutionRecord],
    table: &SyllableTable,
    rng: &mut ChaCha8Rng,
) -> (Vec<Token>, usize) {
    let positions: Vec<usize> = smtd_records.iter().map(|r| r.position).collect();
    let (out, records) = inject_homophones(original, &positions, table, rng);
    (out, positions.len() - records.len())
}

/// Per-sentence noise ratio for augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioSampler {
    Fixed(f64),
    /// Uniform over the listed ratios.
    Choice(Vec<f64>),
}

impl Default for RatioSampler {
    fn default() -> Self {
        RatioSampler::Choice(vec![0.1, 0.2, 0.3, 0.4, 0.5])
    }
}

impl RatioSampler {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            RatioSampler::Fixed(r) => *r,
            RatioSampler::Choice(options) => options[rng.gen_range(0..options.len())],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RatioSampler::Fixed(r) => check_ratio(*r),
            RatioSampler::Choice(options) if options.is_empty() => {
                Err(Error::Config("empty ratio choice list".into()))
            }
            RatioSampler::Choice(options) => options.iter().try_for_each(|r| check_ratio(*r)),
        }
    }
}

/// Artificial-noise version of a clean corpus; targets are untouched.
pub fn build_ant(
    corpus: &ParallelCorpus,
    table: &SyllableTable,
    ratio: f64,
    seed: u64,
) -> Result<ParallelCorpus> {
    check_ratio(ratio)?;
    let mut pairs = Vec::with_capacity(corpus.len());
    let mut subs = Vec::with_capacity(corpus.len());
    for (i, pair) in corpus.pairs.iter().enumerate() {
        let mut rng = seed::stream(seed, seed::ANT, i as u64);
        let (source, records) = make_ant(&pair.source, table, ratio, &mut rng)?;
        subs.push(records.iter().map(|r| r.position).collect());
        pairs.push(SentencePair {
            source,
            target: pair.target.clone(),
        });
    }
    Ok(ParallelCorpus {
        pairs,
        provenance: Provenance::Ant,
        substitutions: subs,
    })
}

fn smtd_pass(
    corpus: &ParallelCorpus,
    table: &SyllableTable,
    sampler: &RatioSampler,
    seed: u64,
    copy: u64,
) -> Result<Vec<(SentencePair, Vec<SubstitutionRecord>)>> {
    corpus
        .pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = seed::stream(seed, seed::SMTD ^ (copy << 32), i as u64);
            let ratio = sampler.sample(&mut rng);
            let (source, records) = make_smtd(&pair.source, table, ratio, &mut rng)?;
            Ok((
                SentencePair {
                    source,
                    target: pair.target.clone(),
                },
                records,
            ))
        })
        .collect()
}

/// The original pairs followed by `copies` syllable-mixed passes over them.
pub fn augment_corpus(
    corpus: &ParallelCorpus,
    table: &SyllableTable,
    copies: usize,
    sampler: &RatioSampler,
    seed: u64,
) -> Result<ParallelCorpus> {
    sampler.validate()?;
    let mut out = ParallelCorpus {
        pairs: corpus.pairs.clone(),
        provenance: Provenance::Mix,
        substitutions: vec![Vec::new(); corpus.len()],
    };
    for copy in 0..copies as u64 {
        for (pair, records) in smtd_pass(corpus, table, sampler, seed, copy)? {
            out.pairs.push(pair);
            out.substitutions
                .push(records.iter().map(|r| r.position).collect());
        }
    }
    Ok(out)
}

/// The original pairs followed by `copies` noise-adversarial passes whose
/// positions are those of the matching [`augment_corpus`] passes. Also
/// returns how many recorded positions lacked a homophone.
pub fn adversarial_corpus(
    corpus: &ParallelCorpus,
    table: &SyllableTable,
    copies: usize,
    sampler: &RatioSampler,
    seed: u64,
) -> Result<(ParallelCorpus, usize)> {
    sampler.validate()?;
    let mut out = ParallelCorpus {
        pairs: corpus.pairs.clone(),
        provenance: Provenance::Mix,
        substitutions: vec![Vec::new(); corpus.len()],
    };
    let mut skipped = 0;
    for copy in 0..copies as u64 {
        let pass = smtd_pass(corpus, table, sampler, seed, copy)?;
        for (i, ((_, records), original)) in pass.iter().zip(&corpus.pairs).enumerate() {
            let mut rng = seed::stream(seed, seed::NATD ^ (copy << 32), i as u64);
            let (source, missing) = make_natd(&original.source, records, table, &mut rng);
            skipped += missing;
            let positions = records
                .iter()
                .map(|r| r.position)
                .filter(|&p| source[p] != original.source[p])
                .collect();
            out.pairs.push(SentencePair {
                source,
                target: original.target.clone(),
            });
            out.substitutions.push(positions);
        }
    }
    Ok((out, skipped))
}

/// Characters are concatenated; each syllable is separated from its
/// neighbours by one space; foreign runs are copied verbatim.
pub fn render_mixed(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 && (t.is_syllable() || tokens[i - 1].is_syllable()) {
            out.push(' ');
        }
        match t {
            Token::Han(c) => out.push(*c),
            Token::Syllable(s) | Token::Foreign(s) => out.push_str(s),
        }
    }
    out
}

/// Inverse of [`render_mixed`]. Whitespace-delimited words that are table
/// syllables become `Syllable` tokens; other non-CJK text stays `Foreign`.
pub fn parse_mixed(text: &str, table: &SyllableTable) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            split_run(&run, table, &mut tokens);
            run.clear();
            tokens.push(Token::Han(c));
        } else {
            run.push(c);
        }
    }
    split_run(&run, table, &mut tokens);
    tokens
}

fn split_run(run: &str, table: &SyllableTable, tokens: &mut Vec<Token>) {
    if run.is_empty() {
        return;
    }
    // alternate whitespace / non-whitespace pieces
    let mut pieces: Vec<(bool, &str)> = Vec::new();
    let mut start = 0;
    let mut current_ws = None;
    for (i, c) in run.char_indices() {
        let ws = c.is_whitespace();
        if current_ws.is_some_and(|w| w != ws) {
            pieces.push((current_ws.unwrap(), &run[start..i]));
            start = i;
        }
        current_ws = Some(ws);
    }
    pieces.push((current_ws.unwrap_or(false), &run[start..]));

    let is_syl = |k: usize| -> bool {
        pieces
            .get(k)
            .is_some_and(|(ws, p)| !ws && table.contains_syllable(p))
    };
    let mut pending = String::new();
    for (k, (ws, piece)) in pieces.iter().enumerate() {
        if is_syl(k) {
            if !pending.is_empty() {
                tokens.push(Token::Foreign(std::mem::take(&mut pending)));
            }
            tokens.push(Token::Syllable(piece.to_string()));
            continue;
        }
        if !ws {
            pending.push_str(piece);
            continue;
        }
        let left = k > 0 && is_syl(k - 1);
        let right = is_syl(k + 1);
        let mut s: &str = piece;
        if left && right && s == " " {
            s = "";
        } else {
            if left {
                s = s.strip_prefix(' ').unwrap_or(s);
            }
            if right {
                s = s.strip_suffix(' ').unwrap_or(s);
            }
        }
        pending.push_str(s);
    }
    if !pending.is_empty() {
        tokens.push(Token::Foreign(pending));
    }
}
