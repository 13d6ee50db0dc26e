//! Homophone-error detector.
//!
//! A transformer encoder reads the syllable sequence of a sentence and
//! predicts the character at every position. The log-likelihood score (LLS)
//! of a position is the log probability of the character actually written
//! there; characters whose probability falls below `beta` are rewritten to
//! their syllable.

use std::path::Path;

use homonmt_nnet::checkpoint::{load_checkpoint, save_checkpoint};
use homonmt_nnet::layers::{Encoder, Linear};
use homonmt_nnet::{log_softmax_rows, Graph, ModelConfig, ParamStore, Var};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::noise::{inject_homophones, substitutable_positions, NoiseMode};
use crate::pinyin::{SyllableTable, Token};
use crate::seed;
use crate::train::{fit, Example, TrainOptions, TrainReport};

/// Placeholder for non-Chinese runs on both sides of the detector.
pub const FOREIGN: &str = "<foreign>";
pub const DEFAULT_BETA: f64 = 0.1;

/// One self-supervised example: syllables in, characters out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyllablePair {
    pub input: Vec<String>,
    pub label: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfSupervised {
    pub pairs: Vec<SyllablePair>,
    /// Sentences containing a character outside the table.
    pub dropped: usize,
}

/// Converts monolingual text into syllable → character pairs.
pub fn build_self_supervised_data(
    monolingual: &[Vec<Token>],
    table: &SyllableTable,
) -> SelfSupervised {
    let mut out = SelfSupervised::default();
    'sentences: for sentence in monolingual {
        let mut pair = SyllablePair {
            input: Vec::with_capacity(sentence.len()),
            label: Vec::with_capacity(sentence.len()),
        };
        for token in sentence {
            match token {
                Token::Han(c) => match table.syllable_of(*c) {
                    Some(s) => {
                        pair.input.push(s.to_string());
                        pair.label.push(c.to_string());
                    }
                    None => {
                        out.dropped += 1;
                        continue 'sentences;
                    }
                },
                Token::Syllable(s) => {
                    pair.input.push(s.clone());
                    pair.label.push(FOREIGN.to_string());
                }
                Token::Foreign(_) => {
                    pair.input.push(FOREIGN.to_string());
                    pair.label.push(FOREIGN.to_string());
                }
            }
        }
        if !pair.input.is_empty() {
            out.pairs.push(pair);
        }
    }
    out
}

/// Splits off the last `fraction` of `pairs` as a held-out set.
pub fn split_holdout<T: Clone>(items: &[T], fraction: f64) -> (Vec<T>, Vec<T>) {
    let held = ((items.len() as f64 * fraction).round() as usize).min(items.len());
    let cut = items.len() - held;
    (items[..cut].to_vec(), items[cut..].to_vec())
}

pub struct DetectorModel {
    pub config: ModelConfig,
    pub inputs: Vocabulary,
    pub outputs: Vocabulary,
    pub params: ParamStore,
    encoder: Encoder,
    projection: Linear,
}

/// Detector architecture: the shared transformer defaults without a decoder.
pub fn default_config() -> ModelConfig {
    ModelConfig {
        decoder_layers: 0,
        ..ModelConfig::default()
    }
}

impl DetectorModel {
    /// Fresh model whose vocabularies cover every syllable and character of
    /// `table`. Vocabulary sizes in `config` are overwritten.
    pub fn new(table: &SyllableTable, config: &ModelConfig, seed: u64) -> Result<Self> {
        let inputs = Vocabulary::from_tokens(
            std::iter::once(FOREIGN.to_string()).chain(table.syllables().iter().cloned()),
        );
        let outputs = Vocabulary::from_tokens(
            std::iter::once(FOREIGN.to_string()).chain(table.chars().iter().map(|c| c.to_string())),
        );
        Self::with_vocabularies(inputs, outputs, config, seed)
    }

    fn with_vocabularies(
        inputs: Vocabulary,
        outputs: Vocabulary,
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        let config = ModelConfig {
            src_vocab: inputs.len(),
            tgt_vocab: outputs.len(),
            ..config.clone()
        };
        config.validate()?;
        let mut rng = seed::stream(seed, seed::INIT, 0);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, "encoder", &config, config.src_vocab, &mut rng);
        let projection = Linear::new(
            &mut params,
            "projection",
            config.d_model,
            config.tgt_vocab,
            &mut rng,
        );
        Ok(Self {
            config,
            inputs,
            outputs,
            params,
            encoder,
            projection,
        })
    }

    fn foreign_output(&self) -> usize {
        self.outputs
            .id(FOREIGN)
            .expect("vocabulary built with placeholder")
    }

    fn logits(&self, g: &mut Graph, ids: &[usize]) -> homonmt_nnet::Result<Var> {
        let h = self.encoder.forward(g, ids, None)?;
        self.projection.forward(g, h)
    }

    fn encode_pair(&self, pair: &SyllablePair) -> DetectorExample {
        DetectorExample {
            input: pair
                .input
                .iter()
                .map(|s| self.inputs.id_or_unk(s))
                .collect(),
            label: pair
                .label
                .iter()
                .map(|s| self.outputs.id_or_unk(s))
                .collect(),
            ignore: self.foreign_output(),
        }
    }

    pub fn save(&self, path: &Path, extra: Value) -> Result<()> {
        let meta = json!({
            "kind": "detector",
            "inputs": self.inputs,
            "outputs": self.outputs,
            "run": extra,
        });
        save_checkpoint(path, &self.config, &meta, &self.params)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        if ck.metadata["kind"] != "detector" {
            return Err(Error::Config(format!(
                "{} is not a detector checkpoint",
                path.display()
            )));
        }
        let inputs: Vocabulary = serde_json::from_value(ck.metadata["inputs"].clone())?;
        let outputs: Vocabulary = serde_json::from_value(ck.metadata["outputs"].clone())?;
        let mut model = Self::with_vocabularies(inputs, outputs, &ck.config, 0)?;
        if model.config != ck.config {
            return Err(Error::Config(
                "checkpoint vocabularies disagree with its config".into(),
            ));
        }
        model.params.load_from(&ck.params)?;
        Ok(model)
    }

    /// Per-position log probabilities `(len, outputs)` for a syllable input.
    pub fn log_probs(&self, input: &[String]) -> Result<homonmt_nnet::Tensor> {
        let ids: Vec<usize> = input.iter().map(|s| self.inputs.id_or_unk(s)).collect();
        let mut g = Graph::new(&self.params);
        let logits = self.logits(&mut g, &ids)?;
        Ok(log_softmax_rows(g.value(logits)))
    }
}

struct DetectorExample {
    input: Vec<usize>,
    label: Vec<usize>,
    ignore: usize,
}

impl Example for DetectorExample {
    fn tokens(&self) -> usize {
        self.input.len()
    }

    fn targets(&self) -> usize {
        self.label.iter().filter(|&&l| l != self.ignore).count()
    }
}

/// Trains a detector on `train`, selecting the epoch with the lowest
/// held-out loss on `valid`. Sentences longer than `config.max_len` and
/// sentences without any character are skipped.
pub fn train_detector(
    train: &[SyllablePair],
    valid: &[SyllablePair],
    table: &SyllableTable,
    config: &ModelConfig,
    opts: &TrainOptions,
) -> Result<(DetectorModel, TrainReport)> {
    let mut model = DetectorModel::new(table, config, opts.seed)?;
    let encode = |pairs: &[SyllablePair]| -> Vec<DetectorExample> {
        pairs
            .iter()
            .filter(|p| p.input.len() <= model.config.max_len)
            .map(|p| model.encode_pair(p))
            .filter(|e| e.targets() > 0)
            .collect()
    };
    let train = encode(train);
    let valid = encode(valid);
    if train.is_empty() {
        return Err(Error::EmptyInput("detector training data".into()));
    }
    let DetectorModel {
        encoder,
        projection,
        params,
        config,
        ..
    } = &mut model;
    let report = fit(
        params,
        &train,
        &valid,
        config.dropout,
        opts,
        |g: &mut Graph, e: &DetectorExample, denom| {
            let h = encoder.forward(g, &e.input, None)?;
            let logits = projection.forward(g, h)?;
            g.cross_entropy(logits, &e.label, Some(e.ignore), 0.0, Some(denom))
        },
    )?;
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionScore {
    pub token: Token,
    /// Natural-log probability of the observed character; `-inf` (written as
    /// `null` in JSON) for characters outside the table.
    pub lls: f64,
    pub flagged: bool,
    pub unknown: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlsReport {
    pub beta: f64,
    pub positions: Vec<PositionScore>,
}

impl LlsReport {
    /// The same scores thresholded at another `beta`.
    pub fn with_beta(&self, beta: f64) -> LlsReport {
        let positions = self
            .positions
            .iter()
            .map(|p| PositionScore {
                flagged: p.token.is_han() && p.lls.exp() < beta,
                ..p.clone()
            })
            .collect();
        LlsReport { beta, positions }
    }

    pub fn flagged(&self) -> Vec<usize> {
        self.positions
            .iter()
            .enumerate()
            .filter(|(_, p)| p.flagged)
            .map(|(i, _)| i)
            .collect()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("beta {beta} outside (0, 1)")))
    }
}

/// Scores every character of `sentence` in one evaluation-mode pass.
pub fn score(
    model: &DetectorModel,
    sentence: &[Token],
    table: &SyllableTable,
    beta: f64,
) -> Result<LlsReport> {
    check_beta(beta)?;
    if sentence.is_empty() {
        return Ok(LlsReport {
            beta,
            positions: Vec::new(),
        });
    }
    let input: Vec<String> = sentence
        .iter()
        .map(|t| match t {
            Token::Han(c) => table.syllable_of(*c).unwrap_or(FOREIGN).to_string(),
            Token::Syllable(s) => s.clone(),
            Token::Foreign(_) => FOREIGN.to_string(),
        })
        .collect();
    let log_probs = model.log_probs(&input)?;
    let positions = sentence
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (lls, unknown) = match t {
                Token::Han(c) if table.contains_char(*c) => {
                    let id = model
                        .outputs
                        .id(&c.to_string())
                        .unwrap_or(crate::corpus::UNK_ID);
                    (log_probs.get(i, id), false)
                }
                Token::Han(_) => (f64::NEG_INFINITY, true),
                _ => (0.0, false),
            };
            PositionScore {
                token: t.clone(),
                lls,
                flagged: t.is_han() && lls.exp() < beta,
                unknown,
            }
        })
        .collect();
    Ok(LlsReport { beta, positions })
}

/// Scores many sentences concurrently; order is preserved.
pub fn score_all(
    model: &DetectorModel,
    sentences: &[Vec<Token>],
    table: &SyllableTable,
    beta: f64,
) -> Result<Vec<LlsReport>> {
    sentences
        .par_iter()
        .map(|s| score(model, s, table, beta))
        .collect()
}

/// Replaces flagged characters with their syllables. Unknown characters
/// have no syllable and stay as they are.
pub fn to_mixed(sentence: &[Token], report: &LlsReport, table: &SyllableTable) -> Vec<Token> {
    sentence
        .iter()
        .zip(&report.positions)
        .map(|(t, p)| match t {
            Token::Han(c) if p.flagged => table
                .syllable_of(*c)
                .map_or_else(|| t.clone(), |s| Token::Syllable(s.to_string())),
            _ => t.clone(),
        })
        .collect()
}

/// Detection quality on sentences with one injected homophone each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEval {
    pub sentences: usize,
    pub beta: f64,
    pub mean_lls_error: f64,
    pub mean_lls_clean: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Injects exactly one homophone error into each sentence that has a
/// substitutable character, then scores it.
pub fn evaluate_detection(
    model: &DetectorModel,
    clean: &[Vec<Token>],
    table: &SyllableTable,
    beta: f64,
    seed: u64,
) -> Result<DetectionEval> {
    let probes: Vec<(Vec<Token>, usize)> = clean
        .iter()
        .enumerate()
        .filter_map(|(i, sentence)| {
            let eligible = substitutable_positions(sentence, table, NoiseMode::Homophone);
            if eligible.is_empty() {
                return None;
            }
            let mut rng = seed::stream(seed, seed::PROBE, i as u64);
            let position = eligible[rng.gen_range(0..eligible.len())];
            let (noisy, _) = inject_homophones(sentence, &[position], table, &mut rng);
            Some((noisy, position))
        })
        .collect();
    let sentences: Vec<Vec<Token>> = probes.iter().map(|(s, _)| s.clone()).collect();
    let reports = score_all(model, &sentences, table, beta)?;
    let (mut err_sum, mut clean_sum, mut clean_n) = (0.0, 0.0, 0usize);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for ((_, error_at), report) in probes.iter().zip(&reports) {
        for (i, p) in report.positions.iter().enumerate() {
            if !p.token.is_han() {
                continue;
            }
            if i == *error_at {
                err_sum += p.lls;
                if p.flagged {
                    tp += 1;
                } else {
                    fn_ += 1;
                }
            } else {
                clean_sum += p.lls;
                clean_n += 1;
                if p.flagged {
                    fp += 1;
                }
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(DetectionEval {
        sentences: probes.len(),
        beta,
        mean_lls_error: err_sum / probes.len().max(1) as f64,
        mean_lls_clean: clean_sum / clean_n.max(1) as f64,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pinyin::{bundled_table, tokenize, transcribe};
    use homonmt_nnet::Tensor;
    use proptest::prelude::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            encoder_layers: 1,
            decoder_layers: 0,
            max_len: 16,
            dropout: 0.0,
            src_vocab: 1,
            tgt_vocab: 1,
        }
    }

    fn small_table() -> SyllableTable {
        SyllableTable::from_pairs([
            ('建', "jian"),
            ('一', "yi"),
            ('议', "yi"),
            ('医', "yi"),
            ('所', "suo"),
            ('小', "xiao"),
            ('学', "xue"),
            ('区', "qu"),
        ])
        .unwrap()
    }

    #[test]
    fn self_supervised_examples() {
        let table = small_table();
        let data = build_self_supervised_data(
            &[tokenize("建一所小学"), tokenize("A区"), tokenize("好")],
            &table,
        );
        assert_eq!(data.dropped, 1);
        assert_eq!(data.pairs[0].input, ["jian", "yi", "suo", "xiao", "xue"]);
        assert_eq!(data.pairs[0].label, ["建", "一", "所", "小", "学"]);
        assert_eq!(data.pairs[1].input, [FOREIGN, "qu"]);
        assert_eq!(data.pairs[1].label, [FOREIGN, "区"]);
        assert!(build_self_supervised_data(&[], &table).pairs.is_empty());
    }

    /// A model whose projection is zero predicts the uniform distribution.
    fn uniform_model(table: &SyllableTable) -> DetectorModel {
        let mut m = DetectorModel::new(table, &tiny_config(), 0).unwrap();
        let w = m.projection.weight;
        let shape = m.params.get(w).shape().to_vec();
        *m.params.get_mut(w) = Tensor::zeros(&shape);
        m
    }

    #[test]
    fn uniform_model_flags_everything() {
        let table = bundled_table();
        let m = uniform_model(&table);
        let report = score(&m, &tokenize("建一所小学"), &table, 0.1).unwrap();
        let expected = -(m.outputs.len() as f64).ln();
        for p in &report.positions {
            assert!((p.lls - expected).abs() < 1e-12);
            assert!(p.flagged);
        }
        // vocabulary: four reserved ids, the placeholder, and every character
        assert_eq!(m.outputs.len(), 5 + table.chars().len());
    }

    #[test]
    fn uniform_over_three_thousand() {
        // arithmetic behind the uniform example: exp(-ln 3000) < 0.1
        let lls = -(3000f64).ln();
        assert!((lls + 8.006).abs() < 1e-3);
        assert!(lls.exp() < 0.1);
    }

    fn certain_report(sentence: &[Token]) -> LlsReport {
        LlsReport {
            beta: 0.1,
            positions: sentence
                .iter()
                .map(|t| PositionScore {
                    token: t.clone(),
                    lls: 0.0,
                    flagged: false,
                    unknown: false,
                })
                .collect(),
        }
    }

    #[test]
    fn to_mixed_examples() {
        let table = small_table();
        let noisy = tokenize("建议所小学");
        let mut report = certain_report(&noisy);
        assert_eq!(to_mixed(&noisy, &report, &table), noisy);
        report.positions[1].lls = -5.0;
        let report = report.with_beta(0.1);
        assert_eq!(report.flagged(), vec![1]);
        let mixed = to_mixed(&noisy, &report, &table);
        assert_eq!(crate::noise::render_mixed(&mixed), "建 yi 所小学");
        let all = LlsReport {
            beta: 0.5,
            positions: report
                .positions
                .iter()
                .map(|p| PositionScore {
                    lls: -9.0,
                    ..p.clone()
                })
                .collect(),
        }
        .with_beta(0.5);
        assert_eq!(
            crate::noise::render_mixed(&to_mixed(&noisy, &all, &table)),
            "jian yi suo xiao xue"
        );
    }

    #[test]
    fn foreign_and_unknown_positions() {
        let table = small_table();
        let m = DetectorModel::new(&table, &tiny_config(), 3).unwrap();
        let report = score(&m, &tokenize("A建好"), &table, 0.1).unwrap();
        assert_eq!(report.positions[0].lls, 0.0);
        assert!(!report.positions[0].flagged);
        assert!(report.positions[2].unknown && report.positions[2].flagged);
        assert_eq!(report.positions[2].lls, f64::NEG_INFINITY);
        let mixed = to_mixed(&tokenize("A建好"), &report, &table);
        assert_eq!(mixed[2], Token::Han('好'));
        assert!(score(&m, &tokenize("建"), &table, 1.0).is_err());
    }

    #[test]
    fn memorizes_one_sentence_and_is_deterministic() {
        let table = small_table();
        let data = build_self_supervised_data(&[tokenize("建一所小学")], &table);
        let opts = TrainOptions {
            epochs: 150,
            batch_tokens: 64,
            learning_rate: 1e-2,
            warmup_steps: 0,
            seed: 5,
            ..TrainOptions::default()
        };
        let (m, report) = train_detector(&data.pairs, &[], &table, &tiny_config(), &opts).unwrap();
        assert!(
            report.epochs.last().unwrap().train_loss < 0.05,
            "{:?}",
            report.epochs.last()
        );
        let (again, _) = train_detector(&data.pairs, &[], &table, &tiny_config(), &opts).unwrap();
        for ((_, _, a), (_, _, b)) in m.params.iter().zip(again.params.iter()) {
            assert_eq!(a.data(), b.data());
        }
        let noisy = score(&m, &tokenize("建议所小学"), &table, 0.1).unwrap();
        assert_eq!(noisy.flagged(), vec![1]);
        let clean = score(&m, &tokenize("建一所小学"), &table, 0.1).unwrap();
        assert!(clean.flagged().is_empty());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.ckpt");
        m.save(&path, json!({"seed": 5})).unwrap();
        let loaded = DetectorModel::load(&path).unwrap();
        assert_eq!(
            score(&loaded, &tokenize("建议所小学"), &table, 0.1).unwrap(),
            noisy
        );
    }

    proptest! {
        #[test]
        fn flags_grow_with_beta(lls in proptest::collection::vec(-10.0f64..0.0, 1..12), b1 in 0.01f64..0.99, b2 in 0.01f64..0.99) {
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let report = LlsReport {
                beta: lo,
                positions: lls.iter().map(|&l| PositionScore { token: Token::Han('一'), lls: l, flagged: false, unknown: false }).collect(),
            };
            let a = report.with_beta(lo).flagged();
            let b = report.with_beta(hi).flagged();
            prop_assert!(a.iter().all(|i| b.contains(i)));
        }

        #[test]
        fn rewriting_keeps_syllables(flags in proptest::collection::vec(any::<bool>(), 5)) {
            let table = small_table();
            let sentence = tokenize("建议所小学");
            let mut report = certain_report(&sentence);
            for (p, f) in report.positions.iter_mut().zip(&flags) {
                p.flagged = *f;
            }
            let mixed = to_mixed(&sentence, &report, &table);
            prop_assert_eq!(transcribe(&table, &mixed).unwrap(), transcribe(&table, &sentence).unwrap());
        }
    }
}
