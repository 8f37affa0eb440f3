//! The four pretraining variants under identical seeds and data.

use gasfm::data::{synthetic_dataset, SynthConfig};
use gasfm::evaluation::{run_ablation, ExperimentConfig};

fn main() -> gasfm::Result<()> {
    let mut cfg = ExperimentConfig::default().with_seed(7);
    cfg.pretrain.steps = 60;
    cfg.finetune.epochs = 3;
    cfg.plan.ablation_horizon = 30;
    let synth = SynthConfig { customers: 60, ..SynthConfig::default() };
    let (data, _) = synthetic_dataset(&synth, 7, &cfg.data.prepare, cfg.data.split)?;
    for run in run_ablation(&data, &cfg)? {
        let a = &run.report.overall;
        println!(
            "{:<7} mse {:.4} mae {:.4}  similarity matrices {:>3}  changed {:?}",
            run.variant.label(),
            a.mse,
            a.mae,
            run.similarity_evaluations,
            run.config_diff
        );
    }
    Ok(())
}
