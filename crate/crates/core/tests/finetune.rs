use std::collections::BTreeMap;

use gasfm::data::{synthetic_dataset, PreparedDataset, ProvenanceGuard, Region, SynthConfig};
use gasfm::evaluation::protocol::{finetune_horizons, pretrain_checkpoint};
use gasfm::evaluation::ExperimentConfig;
use gasfm::finetune::{finetune, predict, FinetuneConfig};
use gasfm::model::checkpoint::Checkpoint;
use gasfm::model::{Model, ModelConfig, PatchConfig};
use gasfm::pretrain::write_log_jsonl;
use gasfm::Error;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default().with_seed(3);
    cfg.model = ModelConfig { model_dim: 16, heads: 2, encoder_layers: 1, feedforward_dim: 32, ..cfg.model };
    cfg.pretrain.steps = 3;
    cfg.pretrain.batch_size = 4;
    cfg.finetune = FinetuneConfig {
        horizon: 7,
        epochs: 2,
        steps_per_epoch: 3,
        batch_size: 8,
        max_val_windows: 16,
        ..cfg.finetune
    };
    cfg.plan.horizons = vec![7];
    cfg
}

fn data(cfg: &ExperimentConfig) -> PreparedDataset {
    let synth = SynthConfig { customers: 6, max_len: 800, ..SynthConfig::default() };
    synthetic_dataset(&synth, 5, &cfg.data.prepare, cfg.data.split).unwrap().0
}

fn params(m: &Model) -> BTreeMap<String, Vec<f64>> {
    m.params.names().map(|n| (n.to_string(), m.params.values_f64(n).unwrap())).collect()
}

fn pretrained(cfg: &ExperimentConfig, d: &PreparedDataset) -> Checkpoint {
    pretrain_checkpoint(d, cfg, &mut ProvenanceGuard::open()).unwrap().0
}

#[test]
fn zero_epochs_keeps_base_plus_fresh_head() {
    let cfg = tiny();
    let d = data(&cfg);
    let base = pretrained(&cfg, &d);
    let mut model = base.model.deep_clone().unwrap();
    let ft = FinetuneConfig { epochs: 0, ..cfg.finetune.clone() };
    let out = finetune(&mut model, &d, &ft, &mut ProvenanceGuard::open()).unwrap();
    assert!(out.curve.is_empty());
    assert_eq!(out.best_epoch, None);

    let mut expected = base.model.deep_clone().unwrap();
    expected.init_forecast_head(7, ft.seed).unwrap();
    assert_eq!(params(&model), params(&expected));
}

#[test]
fn same_seed_same_curve_and_bytes() {
    let cfg = tiny();
    let d = data(&cfg);
    let base = pretrained(&cfg, &d);
    let run = || finetune_horizons(&base, &d, &cfg, &[7], &mut ProvenanceGuard::open()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.curves, b.curves);
    assert_eq!(a.curves[&7].len(), 2);
    assert_eq!(a.checkpoints[&7].to_bytes().unwrap(), b.checkpoints[&7].to_bytes().unwrap());
}

#[test]
fn frozen_encoder_is_bit_identical() {
    let cfg = tiny();
    let d = data(&cfg);
    let base = pretrained(&cfg, &d);
    let mut model = base.model.deep_clone().unwrap();
    let ft = FinetuneConfig { freeze_encoder: true, ..cfg.finetune.clone() };
    finetune(&mut model, &d, &ft, &mut ProvenanceGuard::open()).unwrap();
    let (before, after) = (params(&base.model), params(&model));
    for (name, v) in &before {
        if name.starts_with("patch.") || name.starts_with("encoder.") {
            assert!(v.iter().zip(&after[name]).all(|(x, y)| x.to_bits() == y.to_bits()), "{name} moved");
        }
    }
    let mut fresh = base.model.deep_clone().unwrap();
    fresh.init_forecast_head(7, ft.seed).unwrap();
    assert_ne!(after["forecast.h7.weight"], params(&fresh)["forecast.h7.weight"], "head did not train");
}

#[test]
fn unfrozen_encoder_moves() {
    let cfg = tiny();
    let d = data(&cfg);
    let base = pretrained(&cfg, &d);
    let mut model = base.model.deep_clone().unwrap();
    finetune(&mut model, &d, &cfg.finetune, &mut ProvenanceGuard::open()).unwrap();
    assert_ne!(params(&base.model)["encoder.0.ffn.w1.weight"], params(&model)["encoder.0.ffn.w1.weight"]);
}

#[test]
fn incompatible_geometry_names_field() {
    let cfg = tiny();
    let d = data(&cfg);
    let patch = PatchConfig { window_len: 64, ..PatchConfig::default() };
    let mut model = Model::new(cfg.model.clone(), patch).unwrap();
    match finetune(&mut model, &d, &cfg.finetune, &mut ProvenanceGuard::open()) {
        Err(Error::IncompatibleCheckpoint { field, .. }) => assert_eq!(field, "window_len"),
        other => panic!("expected incompatible checkpoint, got {other:?}"),
    }
    let ck = Checkpoint::new(Model::new(cfg.model.clone(), patch).unwrap());
    let e = ck.check_patch(&PatchConfig::default()).unwrap_err();
    assert!(e.to_string().contains("window_len"), "{e}");

    let short = ModelConfig { max_horizon: 30, ..cfg.model.clone() };
    let mut model = Model::new(short, cfg.patch).unwrap();
    let ft = FinetuneConfig { horizon: 60, ..cfg.finetune.clone() };
    match finetune(&mut model, &d, &ft, &mut ProvenanceGuard::open()) {
        Err(Error::IncompatibleCheckpoint { field, .. }) => assert_eq!(field, "max_horizon"),
        other => panic!("expected incompatible checkpoint, got {other:?}"),
    }
}

#[test]
fn pretraining_artifacts_are_not_mutated() {
    let cfg = tiny();
    let d = data(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let (ck, log, _) = pretrain_checkpoint(&d, &cfg, &mut ProvenanceGuard::open()).unwrap();
    let ck_path = dir.path().join("pre.safetensors");
    let log_path = dir.path().join("pre.jsonl");
    ck.save(&ck_path).unwrap();
    write_log_jsonl(&log_path, &log).unwrap();
    let before = (std::fs::read(&ck_path).unwrap(), std::fs::read(&log_path).unwrap());

    let loaded = Checkpoint::load(&ck_path).unwrap();
    let snapshot = params(&loaded.model);
    finetune_horizons(&loaded, &d, &cfg, &[7, 15], &mut ProvenanceGuard::open()).unwrap();
    assert_eq!(params(&loaded.model), snapshot);
    assert!(!loaded.model.has_forecast_head(7));
    assert_eq!((std::fs::read(&ck_path).unwrap(), std::fs::read(&log_path).unwrap()), before);
}

#[test]
fn predict_contract() {
    let cfg = tiny();
    let d = data(&cfg);
    let set = finetune_horizons(&pretrained(&cfg, &d), &d, &cfg, &[7], &mut ProvenanceGuard::open()).unwrap();
    let model = &set.checkpoints[&7].model;
    let c = &d.customers[0];
    let w = c.windows(Region::Test, &d.spec.with_horizon(7))[0];
    let a = predict(model, c, &w, 7).unwrap();
    let b = predict(model, c, &w, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.predictions.len(), 7);
    for (z, x) in a.predictions.iter().zip(&a.predictions_denorm) {
        assert!((z * c.stats.std + c.stats.mean - x).abs() <= 1e-9 * x.abs().max(1.0));
    }
    assert!(predict(model, c, &w, 15).is_err());
}
