use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{evaluate_model, scatter_rows, EvalConfig, MetricReport, ScatterRow};
use crate::data::{Part, PrepareConfig, PreparedDataset, ProvenanceGuard, SplitSpec, SynthConfig};
use crate::error::{Error, Result};
use crate::finetune::{finetune, EpochRecord, FinetuneConfig, HORIZONS};
use crate::model::checkpoint::Checkpoint;
use crate::model::{Model, ModelConfig, PatchConfig};
use crate::pretrain::{pretrain, PretrainConfig, PretrainLogEntry};

pub const DEFAULT_PARTITION_SEED: u64 = 20_240_601;

/// Part of `customer_id` under `seed`: low bit of `sha256(seed_le ‖ id)`.
pub fn partition_label(customer_id: &str, seed: u64) -> Part {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(customer_id.as_bytes());
    if h.finalize()[0] & 1 == 0 {
        Part::One
    } else {
        Part::Two
    }
}

/// Splits ids into `(Part I, Part II)`, each in input order.
pub fn partition_customers<'a>(ids: impl IntoIterator<Item = &'a str>, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut one = Vec::new();
    let mut two = Vec::new();
    for id in ids {
        match partition_label(id, seed) {
            Part::One => one.push(id.to_string()),
            Part::Two => two.push(id.to_string()),
        }
    }
    (one, two)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synth: SynthConfig,
    pub synth_seed: u64,
    pub prepare: PrepareConfig,
    pub split: SplitSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { synth: SynthConfig::default(), synth_seed: 7, prepare: PrepareConfig::default(), split: SplitSpec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoContrastive,
    NoDenoise,
    NoFnExclusion,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [Self::Full, Self::NoContrastive, Self::NoDenoise, Self::NoFnExclusion];

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoContrastive => "w/o CL",
            Self::NoDenoise => "w/o DN",
            Self::NoFnExclusion => "w/o FN",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoContrastive => "no_cl",
            Self::NoDenoise => "no_dn",
            Self::NoFnExclusion => "no_fn",
        }
    }

    /// `cfg` with this variant's component switched off.
    pub fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut out = cfg.clone();
        let loss = &mut out.pretrain.loss;
        match self {
            Self::Full => {}
            Self::NoContrastive => loss.use_contrastive = false,
            Self::NoDenoise => loss.use_denoise = false,
            Self::NoFnExclusion => loss.use_fn_exclusion = false,
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub horizons: Vec<usize>,
    pub partition_seed: u64,
    /// Source part for transfer and zero-shot runs.
    pub source: Part,
    pub ablation_horizon: usize,
    pub ablation_variants: Vec<AblationVariant>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizons: vec![30],
            partition_seed: DEFAULT_PARTITION_SEED,
            source: Part::One,
            ablation_horizon: 180,
            ablation_variants: AblationVariant::ALL.to_vec(),
        }
    }
}

/// Complete configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub patch: PatchConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub evaluation: EvalConfig,
    pub plan: PlanConfig,
}

impl ExperimentConfig {
    /// Sets every training seed (initialization, pretraining, fine-tuning).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.init_seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self
    }

    /// Range and consistency checks; every violation is listed.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let checks: [(&str, Result<()>); 8] = [
            ("data.synth", self.data.synth.validate()),
            ("data.split", self.data.split.validate()),
            ("patch", self.patch.validate()),
            ("model", self.model.validate()),
            ("pretrain", self.pretrain.validate()),
            ("finetune", self.finetune.validate()),
            ("evaluation", self.evaluation.validate()),
            ("plan", self.validate_plan()),
        ];
        for (section, r) in checks {
            if let Err(e) = r {
                problems.push(format!("[{section}] {e}"));
            }
        }
        if self.patch.window_len != self.data.split.history_len {
            problems.push(format!(
                "patch.window_len {} must equal data.split.history_len {}",
                self.patch.window_len, self.data.split.history_len
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }

    fn validate_plan(&self) -> Result<()> {
        let mut bad: Vec<usize> = self.plan.horizons.iter().copied().filter(|h| !HORIZONS.contains(h)).collect();
        if !HORIZONS.contains(&self.plan.ablation_horizon) {
            bad.push(self.plan.ablation_horizon);
        }
        if self.plan.horizons.is_empty() {
            return Err(Error::config("plan.horizons must not be empty"));
        }
        if let Some(h) = bad.iter().find(|&&h| h > self.model.max_horizon) {
            return Err(Error::config(format!("horizon {h} exceeds model.max_horizon {}", self.model.max_horizon)));
        }
        if !bad.is_empty() {
            return Err(Error::config(format!("horizons {bad:?} not in {HORIZONS:?}")));
        }
        Ok(())
    }
}

/// Dotted paths of every leaf that differs between two configurations.
pub fn config_diff<T: Serialize>(a: &T, b: &T) -> Result<Vec<String>> {
    fn walk(a: &serde_json::Value, b: &serde_json::Value, path: &str, out: &mut Vec<String>) {
        use serde_json::Value::Object;
        match (a, b) {
            (Object(x), Object(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => walk(u, v, &p, out),
                        _ => out.push(p),
                    }
                }
            }
            _ if a != b => out.push(path.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(&serde_json::to_value(a)?, &serde_json::to_value(b)?, "", &mut out);
    Ok(out)
}

/// Runtime provenance counters of one protocol run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceSummary {
    /// Samples checked by the guards of every training stage.
    pub checked: usize,
    pub violations: usize,
    /// Held-out customers found in any checkpoint lineage.
    pub lineage_leaks: usize,
}

impl ProvenanceSummary {
    fn absorb(&mut self, g: &ProvenanceGuard) {
        self.checked += g.checked;
        self.violations += g.violations;
    }
}

/// Randomly initialized model, pretrained on `data` through `guard`.
pub fn pretrain_checkpoint(
    data: &PreparedDataset,
    cfg: &ExperimentConfig,
    guard: &mut ProvenanceGuard,
) -> Result<(Checkpoint, Vec<PretrainLogEntry>, usize)> {
    let mut model = Model::new(cfg.model.clone(), cfg.patch)?;
    let outcome = pretrain(&mut model, data, &cfg.pretrain, guard)?;
    let mut ck = Checkpoint::new(model);
    ck.lineage.push(outcome.lineage);
    Ok((ck, outcome.log, outcome.similarity_evaluations))
}

/// One fine-tuned checkpoint per horizon.
#[derive(Debug, Clone)]
pub struct FinetunedSet {
    pub checkpoints: BTreeMap<usize, Checkpoint>,
    pub curves: BTreeMap<usize, Vec<EpochRecord>>,
}

/// Fine-tunes an independent copy of `base` for each horizon.
pub fn finetune_horizons(
    base: &Checkpoint,
    data: &PreparedDataset,
    cfg: &ExperimentConfig,
    horizons: &[usize],
    guard: &mut ProvenanceGuard,
) -> Result<FinetunedSet> {
    let mut set = FinetunedSet { checkpoints: BTreeMap::new(), curves: BTreeMap::new() };
    for &h in horizons {
        let mut model = base.model.deep_clone()?;
        let ft = FinetuneConfig { horizon: h, ..cfg.finetune.clone() };
        let outcome = finetune(&mut model, data, &ft, guard)?;
        let mut lineage = base.lineage.clone();
        lineage.push(outcome.lineage);
        set.checkpoints.insert(h, Checkpoint { model, lineage });
        set.curves.insert(h, outcome.curve);
    }
    Ok(set)
}

/// Evaluates each horizon's checkpoint and merges the rows.
pub fn evaluate_set(set: &FinetunedSet, data: &PreparedDataset, cfg: &EvalConfig) -> Result<MetricReport> {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (h, ck) in &set.checkpoints {
        let r = evaluate_model(&ck.model, data, &[*h], cfg)?;
        rows.extend(r.rows);
        excluded.extend(r.excluded);
    }
    Ok(MetricReport::from_rows(rows, excluded))
}

#[derive(Debug, Clone)]
pub struct MainOutcome {
    pub pretrained: Checkpoint,
    pub pretrain_log: Vec<PretrainLogEntry>,
    pub finetuned: FinetunedSet,
    pub report: MetricReport,
    /// Same pipeline from a randomly initialized encoder.
    pub baseline: MetricReport,
    pub scatter: Vec<ScatterRow>,
}

/// Pretrain on every customer's training region, fine-tune per horizon and
/// evaluate on test windows, alongside the identically configured model
/// without pretraining.
pub fn run_main(data: &PreparedDataset, cfg: &ExperimentConfig) -> Result<MainOutcome> {
    cfg.validate()?;
    let mut guard = ProvenanceGuard::open();
    let (pretrained, pretrain_log, _) = pretrain_checkpoint(data, cfg, &mut guard)?;
    let finetuned = finetune_horizons(&pretrained, data, cfg, &cfg.plan.horizons, &mut guard)?;
    let report = evaluate_set(&finetuned, data, &cfg.evaluation)?;

    let scratch = Checkpoint::new(Model::new(cfg.model.clone(), cfg.patch)?);
    let baseline_set = finetune_horizons(&scratch, data, cfg, &cfg.plan.horizons, &mut guard)?;
    let baseline = evaluate_set(&baseline_set, data, &cfg.evaluation)?;
    let scatter = cfg.plan.horizons.iter().flat_map(|&h| scatter_rows(&report, &baseline, h)).collect();
    Ok(MainOutcome { pretrained, pretrain_log, finetuned, report, baseline, scatter })
}

#[derive(Debug, Clone)]
pub struct PartitionedOutcome {
    pub source: Part,
    pub report: MetricReport,
    pub provenance: ProvenanceSummary,
    pub finetuned: FinetunedSet,
}

fn tagged(data: &PreparedDataset, seed: u64) -> PreparedDataset {
    data.clone().with_parts(|id| partition_label(id, seed))
}

fn count_leaks(ck: &Checkpoint, data: &PreparedDataset, held_out: Part) -> usize {
    let held: std::collections::BTreeSet<&str> =
        data.customers.iter().filter(|c| c.part == Some(held_out)).map(|c| c.customer_id.as_str()).collect();
    ck.trained_customers().filter(|id| held.contains(id)).count()
}

/// Pretrain on the source part; fine-tune and test on the target part.
pub fn run_transfer(data: &PreparedDataset, cfg: &ExperimentConfig) -> Result<PartitionedOutcome> {
    cfg.validate()?;
    let source = cfg.plan.source;
    let target = source.other();
    let data = tagged(data, cfg.plan.partition_seed);
    let (src, tgt) = (data.subset(Some(source)), data.subset(Some(target)));
    let mut provenance = ProvenanceSummary::default();

    let mut pre_guard = ProvenanceGuard::forbid(target);
    let (pretrained, _, _) = pretrain_checkpoint(&src, cfg, &mut pre_guard)?;
    provenance.absorb(&pre_guard);
    provenance.lineage_leaks += count_leaks(&pretrained, &data, target);

    let mut ft_guard = ProvenanceGuard::forbid(source);
    let finetuned = finetune_horizons(&pretrained, &tgt, cfg, &cfg.plan.horizons, &mut ft_guard)?;
    provenance.absorb(&ft_guard);
    let report = evaluate_set(&finetuned, &tgt, &cfg.evaluation)?;
    Ok(PartitionedOutcome { source, report, provenance, finetuned })
}

/// Pretrain and fine-tune on the source part; test on the target part with no
/// further updates.
pub fn run_zero_shot(data: &PreparedDataset, cfg: &ExperimentConfig) -> Result<PartitionedOutcome> {
    cfg.validate()?;
    let source = cfg.plan.source;
    let target = source.other();
    let data = tagged(data, cfg.plan.partition_seed);
    let (src, tgt) = (data.subset(Some(source)), data.subset(Some(target)));
    let mut provenance = ProvenanceSummary::default();

    let mut guard = ProvenanceGuard::forbid(target);
    let (pretrained, _, _) = pretrain_checkpoint(&src, cfg, &mut guard)?;
    let finetuned = finetune_horizons(&pretrained, &src, cfg, &cfg.plan.horizons, &mut guard)?;
    provenance.absorb(&guard);
    for ck in finetuned.checkpoints.values() {
        provenance.lineage_leaks += count_leaks(ck, &data, target);
    }
    let report = evaluate_set(&finetuned, &tgt, &cfg.evaluation)?;
    Ok(PartitionedOutcome { source, report, provenance, finetuned })
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub variant: AblationVariant,
    /// Config paths that differ from the full variant.
    pub config_diff: Vec<String>,
    pub similarity_evaluations: usize,
    pub report: MetricReport,
}

/// One pretrain, fine-tune and evaluate cycle per variant at the ablation
/// horizon, with identical seeds and data.
pub fn run_ablation(data: &PreparedDataset, cfg: &ExperimentConfig) -> Result<Vec<AblationRun>> {
    cfg.validate()?;
    let horizon = [cfg.plan.ablation_horizon];
    let mut runs = Vec::new();
    for &variant in &cfg.plan.ablation_variants {
        let vcfg = variant.apply(cfg);
        vcfg.validate()?;
        let diff = config_diff(cfg, &vcfg)?;
        let expected = usize::from(variant != AblationVariant::Full);
        if diff.len() != expected {
            return Err(Error::config(format!("variant {} changes {diff:?}", variant.label())));
        }
        let mut guard = ProvenanceGuard::open();
        let (pretrained, _, sims) = pretrain_checkpoint(data, &vcfg, &mut guard)?;
        let set = finetune_horizons(&pretrained, data, &vcfg, &horizon, &mut guard)?;
        let report = evaluate_set(&set, data, &vcfg.evaluation)?;
        runs.push(AblationRun { variant, config_diff: diff, similarity_evaluations: sims, report });
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_is_deterministic_and_balanced() {
        let ids: Vec<String> = (0..10_000).map(|i| format!("C{i:05}")).collect();
        let (a, b) = partition_customers(ids.iter().map(String::as_str), DEFAULT_PARTITION_SEED);
        let (a2, b2) = partition_customers(ids.iter().map(String::as_str), DEFAULT_PARTITION_SEED);
        assert_eq!((&a, &b), (&a2, &b2));
        assert_eq!(a.len() + b.len(), ids.len());
        assert!(a.iter().all(|x| !b.contains(x)));
        assert!((4700..=5300).contains(&a.len()), "{}", a.len());
        assert!((4700..=5300).contains(&b.len()), "{}", b.len());
    }

    #[test]
    fn variants_differ_in_one_field() {
        let cfg = ExperimentConfig::default();
        assert!(config_diff(&cfg, &AblationVariant::Full.apply(&cfg)).unwrap().is_empty());
        for (v, path) in [
            (AblationVariant::NoContrastive, "pretrain.loss.use_contrastive"),
            (AblationVariant::NoDenoise, "pretrain.loss.use_denoise"),
            (AblationVariant::NoFnExclusion, "pretrain.loss.use_fn_exclusion"),
        ] {
            assert_eq!(config_diff(&cfg, &v.apply(&cfg)).unwrap(), vec![path.to_string()]);
        }
    }

    #[test]
    fn config_validation_lists_sections() {
        let mut cfg = ExperimentConfig::default();
        cfg.pretrain.loss.lambda1 = 0.9;
        cfg.plan.horizons = vec![31];
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("[pretrain]") && msg.contains("[plan]"), "{msg}");
    }
}
