mod common;

use m3_core::baselines::NcfModel;
use m3_core::benchmark::Benchmark;
use m3_core::graph::{Dataset, ExecutionRecord};
use m3_core::selector::score_all;
use m3_core::trainer::*;
use m3_core::{Error, M3Model64, Parameters, Scorer};

fn ctx(bm: &Benchmark) -> TrainContext<'_> {
    TrainContext {
        zoo: &bm.zoo,
        space: &bm.space,
        store: &bm.store,
        jobs: 1,
    }
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        hidden_d: 8,
        model_dim: 8,
        max_epochs: 5,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

#[test]
fn split_sizes_follow_largest_remainder() {
    assert_eq!(split_sizes(10, &[0.6, 0.2, 0.2]), vec![6, 2, 2]);
    // 8426 · (0.6, 0.2, 0.2) = (5055.6, 1685.2, 1685.2); one leftover goes to the .6 part.
    assert_eq!(split_sizes(8426, &[0.6, 0.2, 0.2]), vec![5056, 1685, 1685]);
    assert_eq!(split_sizes(0, &[0.6, 0.2, 0.2]), vec![0, 0, 0]);
    for n in 0..200 {
        assert_eq!(split_sizes(n, &[0.6, 0.2, 0.2]).iter().sum::<usize>(), n);
    }
}

#[test]
fn split_is_a_seeded_partition() {
    let bm = common::bench("tiny");
    let spec = SplitSpec::default();
    let (a, b, c) = split(&bm.dataset, &spec);
    assert_eq!((a.len(), b.len(), c.len()), (72, 24, 24));
    let mut ids: Vec<&str> = [&a, &b, &c]
        .iter()
        .flat_map(|d| d.samples().iter().map(|s| s.sample_id.as_str()))
        .collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), bm.dataset.len());
    let again = split(&bm.dataset, &spec);
    assert_eq!((a.clone(), b, c), again);
    let other = split(&bm.dataset, &SplitSpec { seed: 1, ..spec });
    assert_ne!(a, other.0);
    // Whole rows travel together.
    let i = a.position(&a.sample(0).sample_id).unwrap();
    let j = bm.dataset.position(&a.sample(0).sample_id).unwrap();
    for k in 0..a.n_choices() {
        assert_eq!(a.outcome(i, k), bm.dataset.outcome(j, k));
    }
}

fn n_observed(d: &Dataset) -> usize {
    (0..d.len()).map(|i| d.n_observed(i)).sum()
}

#[test]
fn missing_modes() {
    let bm = common::bench("tiny");
    let d = &bm.dataset;
    assert_eq!(&apply_missing(d, MissingMode::Choices, 0.0, 3).unwrap(), d);
    assert_eq!(&apply_missing(d, MissingMode::Samples, 0.0, 3).unwrap(), d);

    let total = n_observed(d);
    let m = apply_missing(d, MissingMode::Choices, 0.2, 3).unwrap();
    assert_eq!(
        total - n_observed(&m),
        (0.2 * total as f64).round() as usize
    );
    assert_eq!(m, apply_missing(d, MissingMode::Choices, 0.2, 3).unwrap());
    for i in 0..d.len() {
        for j in 0..d.n_choices() {
            if let Some(v) = m.outcome(i, j) {
                assert_eq!(Some(v), d.outcome(i, j));
            }
        }
    }

    let hundred = d.subset(&(0..100).collect::<Vec<_>>());
    let kept = apply_missing(&hundred, MissingMode::Samples, 0.8, 5).unwrap();
    assert_eq!(kept.len(), 20);
    assert!(apply_missing(d, MissingMode::Samples, 1.0, 0).is_err());
    assert_eq!(
        "choices".parse::<MissingMode>().unwrap(),
        MissingMode::Choices
    );
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            scheduler_gamma: 1.5,
            ..TrainConfig::default()
        },
        TrainConfig {
            scheduler_gamma: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            hidden_d: 0,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
    let json = r#"{"hidden_d": 16, "loss": "bce", "optimizer": "adam"}"#;
    let c: TrainConfig = serde_json::from_str(json).unwrap();
    assert_eq!(c.hidden_d, 16);
    assert_eq!(c.lr, 1e-3);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"hiden_d": 16}"#).is_err());
}

#[test]
fn zero_epochs_returns_initialization() {
    let bm = common::bench("tiny");
    let (tr, va, _) = split(&bm.dataset, &SplitSpec::default());
    let config = TrainConfig {
        max_epochs: 0,
        ..quick_config()
    };
    let out = train::<f64, M3Model64>(&tr, &va, &config, &ctx(&bm)).unwrap();
    let init = M3Model64::init(&bm.zoo, bm.store.dim(), &config.model_config(), config.seed);
    assert_eq!(out.model, init);
    assert_eq!(out.checkpoint.epoch, 0);
    assert_eq!(out.checkpoint.val_ser, out.initial_val_ser);
    assert!(out.history.is_empty());
}

#[test]
fn training_is_deterministic_across_worker_counts() {
    let bm = common::bench("tiny");
    let (tr, va, _) = split(&bm.dataset, &SplitSpec::default());
    let config = quick_config();
    let a = train::<f64, M3Model64>(&tr, &va, &config, &ctx(&bm)).unwrap();
    let b = train::<f64, M3Model64>(&tr, &va, &config, &ctx(&bm)).unwrap();
    let c = train::<f64, M3Model64>(
        &tr,
        &va,
        &config,
        &TrainContext {
            jobs: 3,
            ..ctx(&bm)
        },
    )
    .unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.history, c.history);
    assert_eq!(a.model.flatten(), c.model.flatten());
    assert_eq!(
        history_csv(&a.history).lines().next(),
        Some("epoch,lr,train_loss,val_ser")
    );
    assert_eq!(history_csv(&a.history).lines().count(), a.history.len() + 1);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let bm = common::bench("tiny");
    let (tr, va, te) = split(&bm.dataset, &SplitSpec::default());
    let out = train::<f64, M3Model64>(&tr, &va, &quick_config(), &ctx(&bm)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&out.checkpoint, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, out.checkpoint);
    let model: M3Model64 = loaded.restore(&bm.zoo).unwrap();
    assert_eq!(model, out.model);
    for s in te.samples() {
        let before = score_all(&out.model, &out.model.prepare(), s, &bm.store, &bm.space).unwrap();
        let after = score_all(&model, &model.prepare(), s, &bm.store, &bm.space).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&before), bits(&after));
    }
    assert!(loaded.restore::<f64, NcfModel<f64>>(&bm.zoo).is_err());
}

#[test]
fn checkpoint_errors() {
    let bm = common::bench("tiny");
    let (tr, va, _) = split(&bm.dataset, &SplitSpec::default());
    let config = TrainConfig {
        max_epochs: 0,
        ..quick_config()
    };
    let out = train::<f64, M3Model64>(&tr, &va, &config, &ctx(&bm)).unwrap();
    let json = out.checkpoint.to_json().unwrap();
    let wrong = json.replacen("\"version\":1", "\"version\":7", 1);
    assert!(matches!(
        Checkpoint::from_json(&wrong),
        Err(Error::Version {
            found: 7,
            expected: 1
        })
    ));
    assert!(matches!(
        Checkpoint::from_json(&json[..json.len() / 2]),
        Err(Error::Format(_))
    ));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.json");
    std::fs::write(&path, &json[..json.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
}

fn overfit<M: Scorer<f64>>(bm: &Benchmark) -> f64 {
    let five = bm.dataset.subset(&[0, 1, 2, 3, 4]);
    let config = TrainConfig {
        hidden_d: 16,
        model_dim: 16,
        lr: 1e-2,
        weight_decay: 0.0,
        batch_size: 5,
        scheduler_step: 10_000,
        max_epochs: 2000,
        patience: 2000,
        ..TrainConfig::default()
    };
    let out = train::<f64, M>(&five, &five, &config, &ctx(bm)).unwrap();
    out.history
        .iter()
        .map(|r| r.train_loss)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn five_samples_overfit() {
    let bm = common::bench("tiny");
    let m3 = overfit::<M3Model64>(&bm);
    assert!(m3 < 0.05, "graph learner loss {m3}");
    let ncf = overfit::<NcfModel<f64>>(&bm);
    assert!(ncf < 0.05, "ncf loss {ncf}");
}

#[test]
fn fully_masked_rows_leave_training_unchanged() {
    let bm = common::bench("tiny");
    let (tr, va, _) = split(&bm.dataset, &SplitSpec::default());
    let base = tr.subset(&(0..40).collect::<Vec<_>>());
    // Interleave 20 rows that carry no observed outcome at all.
    let mut samples = Vec::new();
    for i in 0..40 {
        samples.push(base.sample(i).clone());
        if i % 2 == 0 {
            samples.push(tr.sample(40 + i / 2).clone());
        }
    }
    let records: Vec<ExecutionRecord> = base.records().collect();
    let padded = Dataset::from_records(samples, base.n_choices(), &records).unwrap();
    assert_eq!(padded.len(), 60);
    let config = quick_config();
    let a = train::<f64, M3Model64>(&base, &va, &config, &ctx(&bm)).unwrap();
    let b = train::<f64, M3Model64>(&padded, &va, &config, &ctx(&bm)).unwrap();
    let bits = |m: &M3Model64| m.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.model), bits(&b.model));
    assert_eq!(a.history, b.history);
}

#[test]
fn huge_features_abort_with_non_finite_loss() {
    let bm = common::bench("tiny");
    let (tr, va, _) = split(&bm.dataset, &SplitSpec::default());
    let mut store = m3_core::features::FeatureStore::new(bm.store.dim());
    for id in bm.store.ids() {
        store
            .insert(id.clone(), vec![f64::MAX; bm.store.dim()])
            .unwrap();
    }
    let c = TrainContext {
        store: &store,
        ..ctx(&bm)
    };
    let err = train::<f64, M3Model64>(&tr, &va, &quick_config(), &c).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
}
