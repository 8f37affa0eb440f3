use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gasfm::cli::{find_orphans, RunManifest, MANIFEST_FILE};
use gasfm::evaluation::{ExperimentConfig, MetricReport};

const TINY: &str = "\
[data.synth]
customers = 8
max_len = 800

[model]
model_dim = 16
heads = 2
encoder_layers = 1
feedforward_dim = 32

[pretrain]
steps = 2
batch_size = 4

[finetune]
epochs = 1
steps_per_epoch = 2
batch_size = 8
max_val_windows = 8

[evaluation]
test_stride = 30

[plan]
horizons = [7]
";

fn gasfm(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gasfm"))
        .args(args)
        .env("GASFM_ARTIFACT_ROOT", root)
        .env("GASFM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default().to_string();
    serde_json::from_str(&line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {line}"))
}

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, config).unwrap();
        Self { dir, config: path }
    }

    fn root(&self) -> &Path {
        self.dir.path()
    }

    fn cfg(&self) -> &str {
        self.config.to_str().unwrap()
    }

    fn run(&self, args: &[&str]) -> Output {
        gasfm(args, self.root())
    }

    fn ok(&self, args: &[&str]) -> PathBuf {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
    }

    fn path(&self, rel: &str) -> String {
        self.root().join(rel).to_string_lossy().into_owned()
    }

    /// synth-data then prepare-data; returns the dataset path.
    fn dataset(&self) -> String {
        self.ok(&["synth-data", "--config", self.cfg(), "--out", "synth"]);
        let (r, m) = (self.path("synth/readings.csv"), self.path("synth/metadata.csv"));
        self.ok(&["prepare-data", "--config", self.cfg(), "--readings", &r, "--metadata", &m, "--out", "prep"]);
        self.path("prep/dataset.jsonl")
    }
}

#[test]
fn synth_data_is_byte_identical_across_runs() {
    let f = Fixture::new(TINY);
    for out in ["a", "b"] {
        f.ok(&["synth-data", "--config", f.cfg(), "--seed", "7", "--out", out]);
    }
    for file in ["readings.csv", "metadata.csv", "dataset_manifest.json"] {
        let a = std::fs::read(f.root().join("a").join(file)).unwrap();
        let b = std::fs::read(f.root().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let ma = RunManifest::read(&f.root().join("a").join(MANIFEST_FILE)).unwrap();
    let mb = RunManifest::read(&f.root().join("b").join(MANIFEST_FILE)).unwrap();
    assert_eq!(ma.artifacts, mb.artifacts);
    assert_eq!(ma.dataset_fingerprint, mb.dataset_fingerprint);
    assert_eq!(ma.seed, 7);
}

#[test]
fn usage_errors_exit_2_with_json() {
    let f = Fixture::new("");
    let cases: Vec<Vec<&str>> = vec![
        vec!["pretrain", "--config", f.cfg()],
        vec!["synth-data", "--config", f.cfg(), "--bogus"],
        vec!["synth-data"],
        vec!["no-such-command"],
    ];
    for args in cases {
        let out = f.run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let e = error_json(&out);
        assert_eq!(e["error"], "usage");
        assert_eq!(e["exit_code"], 2);
    }
    let missing = f.path("missing.toml");
    let out = f.run(&["synth-data", "--config", &missing]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("missing.toml"));
}

#[test]
fn schema_violations_list_every_key() {
    let f = Fixture::new("typo = 1\n[pretrain]\nsteps = \"many\"\n[pretrain.loss]\nlambda1 = 0.6\nlambda2 = 0.6\n");
    let out = f.run(&["synth-data", "--config", f.cfg()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = error_json(&out)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("typo: unknown key") && msg.contains("pretrain.steps"), "{msg}");

    let f = Fixture::new("[pretrain.loss]\nlambda1 = 0.6\nlambda2 = 0.6\n");
    let out = f.run(&["synth-data", "--config", f.cfg()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("lambda1"));
}

#[test]
fn empty_config_is_echoed_in_full() {
    let f = Fixture::new("");
    let manifest = f.ok(&["synth-data", "--config", f.cfg(), "--out", "s"]);
    assert!(manifest.starts_with(f.root()), "artifact root not honoured: {}", manifest.display());
    let m = RunManifest::read(&manifest).unwrap();
    assert_eq!(m.config, serde_json::to_value(ExperimentConfig::default()).unwrap());
    assert_eq!(m.config["pretrain"]["loss"]["temperature"], 0.1);
}

#[test]
fn bad_dataset_is_a_data_error() {
    let f = Fixture::new(TINY);
    let out = f.run(&["pretrain", "--config", f.cfg(), "--dataset", &f.path("nope.jsonl")]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "data");

    std::fs::write(f.root().join("garbage.jsonl"), "{not json\n").unwrap();
    let out = f.run(&["pretrain", "--config", f.cfg(), "--dataset", &f.path("garbage.jsonl")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn locked_directory_is_refused() {
    let f = Fixture::new(TINY);
    let dir = f.root().join("busy");
    let _lock = gasfm::cli::DirLock::acquire(&dir).unwrap();
    let out = f.run(&["synth-data", "--config", f.cfg(), "--out", "busy"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("locked"));
}

#[test]
fn full_pipeline_leaves_no_orphans_and_reports_validate() {
    let f = Fixture::new(TINY);
    let dataset = f.dataset();
    f.ok(&["pretrain", "--config", f.cfg(), "--dataset", &dataset, "--out", "pre"]);
    let pre = f.path("pre/pretrained.safetensors");
    f.ok(&["finetune", "--config", f.cfg(), "--dataset", &dataset, "--checkpoint", &pre, "--out", "ft"]);
    f.ok(&["finetune", "--config", f.cfg(), "--dataset", &dataset, "--out", "scratch"]);
    let (ft, sc) = (f.path("ft/finetuned_h7.safetensors"), f.path("scratch/finetuned_h7.safetensors"));
    let eval = f.ok(&[
        "evaluate", "--config", f.cfg(), "--dataset", &dataset, "--checkpoint", &ft, "--baseline", &sc, "--out", "eval",
    ]);
    let manifest = eval.to_string_lossy().into_owned();
    f.ok(&["report", "--config", f.cfg(), "--manifest", &manifest, "--out", "report"]);

    let rows = MetricReport::read_csv(&f.root().join("eval/metrics.csv")).unwrap();
    assert!(!rows.is_empty() && rows.iter().all(|r| r.horizon == 7 && r.smape <= 2.0 && r.mse >= 0.0));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.root().join("eval/metrics_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["per_horizon"][0]["horizon"], 7);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.root().join("report/report.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 2);
    assert!(f.root().join("report/report.md").is_file());

    std::fs::remove_file(&f.config).unwrap();
    assert_eq!(find_orphans(f.root()).unwrap(), Vec::<PathBuf>::new());
    for sub in ["synth", "prep", "pre", "ft", "scratch", "eval", "report"] {
        let m = RunManifest::read(&f.root().join(sub).join(MANIFEST_FILE)).unwrap();
        assert!(m.verify(&f.root().join(sub)).unwrap().is_empty(), "{sub}");
        assert!(!m.artifacts.is_empty(), "{sub}");
    }
}

#[test]
fn report_rejects_tampered_artifacts() {
    let f = Fixture::new(TINY);
    let dataset = f.dataset();
    f.ok(&["finetune", "--config", f.cfg(), "--dataset", &dataset, "--out", "ft"]);
    let ck = f.path("ft/finetuned_h7.safetensors");
    let eval = f.ok(&["evaluate", "--config", f.cfg(), "--dataset", &dataset, "--checkpoint", &ck, "--out", "eval"]);
    std::fs::write(f.root().join("eval/metrics.csv"), "customer_id\nx\n").unwrap();
    let out = f.run(&["report", "--config", f.cfg(), "--manifest", eval.to_str().unwrap(), "--out", "report"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn rerun_reproduces_artifact_hashes() {
    let f = Fixture::new(TINY);
    let dataset = f.dataset();
    for out in ["p1", "p2"] {
        f.ok(&["pretrain", "--config", f.cfg(), "--dataset", &dataset, "--seed", "4", "--out", out]);
    }
    let a = RunManifest::read(&f.root().join("p1").join(MANIFEST_FILE)).unwrap();
    let b = RunManifest::read(&f.root().join("p2").join(MANIFEST_FILE)).unwrap();
    assert_eq!(a.artifacts, b.artifacts);
    assert_eq!(a.config, b.config);
    assert_eq!(a.config["pretrain"]["seed"], 4);
}
