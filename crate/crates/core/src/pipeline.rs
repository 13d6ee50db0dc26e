//! The full experiment on the bundled fixture: detector, translators, sweep.

use std::path::Path;
use std::time::{Duration, Instant};

use homonmt_nnet::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::detector::{
    build_self_supervised_data, default_config, evaluate_detection, score, split_holdout, to_mixed,
    train_detector, DetectionEval, DetectorModel, DEFAULT_BETA,
};
use crate::error::{io_err, Error, Result};
use crate::eval::{run_sweep, SweepOptions, SweepReport, System};
use crate::fixture::BundledFixture;
use crate::noise::render_mixed;
use crate::pinyin::{tokenize, SyllableTable};
use crate::sanmt::{
    build_training_set, prepare_corpus, prepare_source, train_nmt, translate, NmtModel,
    TrainingMode,
};
use crate::train::{TrainOptions, TrainReport};

/// Name of the detector-plus-Robust system in sweep reports.
pub const PIPELINE_SYSTEM: &str = "detector+robust";
/// Noisy form of the showcase sentence.
pub const PROBE_SENTENCE: &str = "建议所小学";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Fraction of monolingual sentences held out for detector selection.
    pub detector_holdout: f64,
    pub detector_model: ModelConfig,
    pub detector_train: TrainOptions,
    pub nmt_model: ModelConfig,
    pub nmt_train: TrainOptions,
    /// Epochs for the augmented recipes, whose data is several times larger.
    pub augmented_epochs: usize,
    pub modes: Vec<TrainingMode>,
    pub sweep: SweepOptions,
}

impl PipelineConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "fixture" => Ok(Self::fixture()),
            _ => Err(Error::Config(format!("unknown preset {name:?}"))),
        }
    }

    pub fn fixture() -> Self {
        let train = TrainOptions {
            epochs: 20,
            batch_tokens: 512,
            learning_rate: 1e-3,
            warmup_steps: 100,
            ..TrainOptions::default()
        };
        Self {
            seed: 1,
            detector_holdout: 0.05,
            detector_model: default_config(),
            detector_train: TrainOptions {
                epochs: 10,
                ..train.clone()
            },
            nmt_model: ModelConfig::default(),
            nmt_train: train,
            augmented_epochs: 8,
            modes: vec![
                TrainingMode::Baseline,
                TrainingMode::Robust,
                TrainingMode::Cpnmt,
            ],
            sweep: SweepOptions {
                ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5],
                seed: 1,
                beta: DEFAULT_BETA,
                beam_size: crate::sanmt::DEFAULT_BEAM,
            },
        }
    }

    /// Uses `seed` for every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.detector_train.seed = seed;
        self.nmt_train.seed = seed;
        self.sweep.seed = seed;
        self
    }
}

/// The showcase sentence through the detector and the Robust model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub input: String,
    pub lls: Vec<Option<f64>>,
    pub mixed: String,
    pub translation: String,
}

pub struct PipelineOutput {
    pub config: PipelineConfig,
    pub detector: DetectorModel,
    pub detector_report: TrainReport,
    pub detection: DetectionEval,
    pub models: Vec<NmtModel>,
    pub nmt_reports: Vec<(TrainingMode, TrainReport)>,
    pub sweep: SweepReport,
    pub probe: Option<Probe>,
    /// Wall-clock time per stage; never written to artifacts.
    pub timings: Vec<(String, Duration)>,
}

impl PipelineOutput {
    pub fn model(&self, mode: TrainingMode) -> Option<&NmtModel> {
        self.models.iter().find(|m| m.mode == mode)
    }

    /// Writes checkpoints and reports. Every file depends only on the
    /// config, the data and the seed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let run = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.config.seed,
            "config": self.config,
        });
        self.detector
            .save(&dir.join("detector.ckpt"), run.clone())?;
        for model in &self.models {
            model.save(&dir.join(format!("nmt-{}.ckpt", model.mode)), run.clone())?;
        }
        let write_json = |name: &str, value: &Value| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
                .map_err(io_err(path))?;
            Ok(())
        };
        write_json("sweep.json", &serde_json::to_value(&self.sweep)?)?;
        let tsv = dir.join("sweep.tsv");
        std::fs::write(&tsv, self.sweep.to_tsv()).map_err(io_err(tsv))?;
        write_json(
            "pipeline.json",
            &json!({
                "run": run,
                "detector_training": self.detector_report,
                "detection": self.detection,
                "nmt_training": self.nmt_reports.iter().map(|(m, r)| json!({"mode": m, "report": r})).collect::<Vec<_>>(),
                "probe": self.probe,
            }),
        )?;
        Ok(())
    }
}

fn timed<T>(
    timings: &mut Vec<(String, Duration)>,
    stage: String,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let started = Instant::now();
    let out = f()?;
    timings.push((stage, started.elapsed()));
    Ok(out)
}

/// Trains the detector and one translator per mode, then sweeps every
/// translator alone plus the detector in front of the Robust model.
pub fn run_pipeline(
    config: &PipelineConfig,
    data: &BundledFixture,
    table: &SyllableTable,
) -> Result<PipelineOutput> {
    let mut timings = Vec::new();
    let self_supervised = build_self_supervised_data(&data.monolingual, table);
    let (det_train, det_valid) = split_holdout(&self_supervised.pairs, config.detector_holdout);
    let (detector, detector_report) = timed(&mut timings, "detector".into(), || {
        train_detector(
            &det_train,
            &det_valid,
            table,
            &config.detector_model,
            &config.detector_train,
        )
    })?;
    let held_out: Vec<_> = data.test.pairs.iter().map(|p| p.source.clone()).collect();
    let detection = timed(&mut timings, "detection".into(), || {
        evaluate_detection(&detector, &held_out, table, config.sweep.beta, config.seed)
    })?;

    let mut models = Vec::new();
    let mut nmt_reports = Vec::new();
    for &mode in &config.modes {
        let mut opts = config.nmt_train.clone();
        if matches!(mode, TrainingMode::Robust | TrainingMode::Adversarial) {
            opts.epochs = config.augmented_epochs;
        }
        let (model, report) = timed(&mut timings, format!("train {mode}"), || {
            let train = build_training_set(&data.train, table, mode, config.seed)?;
            let valid = prepare_corpus(mode, &data.valid, table);
            train_nmt(&train, &valid, table, mode, &config.nmt_model, &opts)
        })?;
        models.push(model);
        nmt_reports.push((mode, report));
    }

    let mut systems: Vec<System> = models
        .iter()
        .map(|m| System {
            name: m.mode.to_string(),
            model: m,
            detector: None,
        })
        .collect();
    let robust = models.iter().find(|m| m.mode == TrainingMode::Robust);
    if let Some(model) = robust {
        systems.push(System {
            name: PIPELINE_SYSTEM.into(),
            model,
            detector: Some(&detector),
        });
    }
    let sweep = timed(&mut timings, "sweep".into(), || {
        run_sweep(&systems, &data.test, table, &config.sweep)
    })?;

    let probe = match robust {
        Some(model) => {
            let input = tokenize(PROBE_SENTENCE);
            let report = score(&detector, &input, table, config.sweep.beta)?;
            let mixed = to_mixed(&input, &report, table);
            let words = translate(
                model,
                &prepare_source(model.mode, &mixed, table),
                config.sweep.beam_size,
                None,
            )?;
            Some(Probe {
                input: PROBE_SENTENCE.into(),
                lls: report
                    .positions
                    .iter()
                    .map(|p| p.lls.is_finite().then_some(p.lls))
                    .collect(),
                mixed: render_mixed(&mixed),
                translation: words.join(" "),
            })
        }
        None => None,
    };
    drop(systems);
    Ok(PipelineOutput {
        config: config.clone(),
        detector,
        detector_report,
        detection,
        models,
        nmt_reports,
        sweep,
        probe,
        timings,
    })
}
