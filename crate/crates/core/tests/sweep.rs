use homonmt::corpus::ParallelCorpus;
use homonmt::detector::{
    build_self_supervised_data, score, to_mixed, train_detector, DetectorModel,
};
use homonmt::eval::{corpus_sha256, evaluate_system, run_sweep, SweepOptions, System};
use homonmt::fixture;
use homonmt::pinyin::{bundled_table, transcribe, SyllableTable};
use homonmt::sanmt::{train_nmt, NmtModel, TrainingMode};
use homonmt::train::TrainOptions;
use homonmt_nnet::ModelConfig;

fn tiny() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        ..ModelConfig::default()
    }
}

fn opts() -> TrainOptions {
    TrainOptions {
        epochs: 2,
        warmup_steps: 1,
        learning_rate: 3e-3,
        ..TrainOptions::default()
    }
}

fn head(c: &ParallelCorpus, n: usize) -> ParallelCorpus {
    ParallelCorpus::new(c.pairs[..n].to_vec(), c.provenance)
}

fn models(table: &SyllableTable) -> (fixture::BundledFixture, NmtModel, DetectorModel) {
    let data = fixture::bundled(table).unwrap();
    let (model, _) = train_nmt(
        &head(&data.train, 150),
        &head(&data.valid, 10),
        table,
        TrainingMode::Baseline,
        &tiny(),
        &opts(),
    )
    .unwrap();
    let mono = build_self_supervised_data(&data.monolingual[..150], table);
    let det_config = ModelConfig {
        decoder_layers: 0,
        ..tiny()
    };
    let (detector, _) = train_detector(&mono.pairs, &[], table, &det_config, &opts()).unwrap();
    (data, model, detector)
}

#[test]
fn sweep_invariants() {
    let table = bundled_table();
    let (data, model, detector) = models(&table);
    let test = head(&data.test, 12);

    let plain = System {
        name: "plain".into(),
        model: &model,
        detector: None,
    };
    let silent = System {
        name: "silent".into(),
        model: &model,
        detector: Some(&detector),
    };
    let opts = SweepOptions {
        ratios: vec![0.0, 0.3],
        seed: 5,
        beta: 1e-300,
        beam_size: 2,
    };
    let report = run_sweep(&[plain, silent], &test, &table, &opts).unwrap();
    assert_eq!(report.ratios, vec![0.0, 0.3]);

    let plain = System {
        name: "plain".into(),
        model: &model,
        detector: None,
    };
    let (direct, _) = evaluate_system(&plain, &test, &table, opts.beta, opts.beam_size).unwrap();
    assert_eq!(report.clean_cell("plain").unwrap().bleu, direct);
    assert_eq!(report.cell("plain", 0.0).unwrap().bleu, direct);

    for ratio in [0.0, 0.3] {
        let a = report.cell("plain", ratio).unwrap();
        let b = report.cell("silent", ratio).unwrap();
        assert_eq!(
            a.bleu, b.bleu,
            "a detector that never flags changes nothing"
        );
        assert_eq!(b.flagged, 0);
        assert_eq!(
            a.corpus_sha256, b.corpus_sha256,
            "systems share one noisy corpus"
        );
    }
    assert_eq!(
        report.cell("plain", 0.0).unwrap().corpus_sha256,
        corpus_sha256(&test)
    );
    assert_ne!(
        report.cell("plain", 0.3).unwrap().corpus_sha256,
        corpus_sha256(&test)
    );

    let bad = SweepOptions {
        ratios: vec![1.5],
        ..opts
    };
    assert!(run_sweep(&[], &test, &table, &bad).is_err());
}

#[test]
fn rewriting_preserves_the_syllable_sequence() {
    let table = bundled_table();
    let (data, _, detector) = models(&table);
    for pair in &data.test.pairs[..50] {
        for beta in [0.01, 0.5, 0.99] {
            let report = score(&detector, &pair.source, &table, beta).unwrap();
            let mixed = to_mixed(&pair.source, &report, &table);
            assert_eq!(
                transcribe(&table, &mixed).unwrap(),
                transcribe(&table, &pair.source).unwrap()
            );
        }
    }
}
