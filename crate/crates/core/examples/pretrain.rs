//! Pretrain a small model on synthetic customers and print the loss curve.

use gasfm::data::{generate_synthetic_dataset, impute_all, LinearInterpolation, PreparedDataset, ProvenanceGuard, SplitSpec, SynthConfig};
use gasfm::model::{Model, ModelConfig, PatchConfig};
use gasfm::pretrain::{pretrain, PretrainConfig};

fn main() -> gasfm::Result<()> {
    let synth = SynthConfig { customers: 40, ..SynthConfig::default() };
    let (series, _) = generate_synthetic_dataset(&synth, 7)?;
    let series = impute_all(&series, &LinearInterpolation)?;
    let data = PreparedDataset::new(&series, SplitSpec::default())?;

    let mut model = Model::new(ModelConfig::default(), PatchConfig::default())?;
    let cfg = PretrainConfig { steps: 40, seed: 7, ..PretrainConfig::default() };
    let started = std::time::Instant::now();
    let outcome = pretrain(&mut model, &data, &cfg, &mut ProvenanceGuard::open())?;
    for e in outcome.log.iter().step_by(5) {
        println!(
            "step {:>3}  loss {:.4}  denoise {:.4}  ssl1 {:.4}  ssl2 {:.4}",
            e.step,
            e.loss,
            e.loss_denoise.unwrap_or(f64::NAN),
            e.loss_ssl1.unwrap_or(f64::NAN),
            e.loss_ssl2.unwrap_or(f64::NAN)
        );
    }
    println!(
        "{} steps in {:.1?} over {} customers",
        cfg.steps,
        started.elapsed(),
        outcome.lineage.customers.len()
    );
    Ok(())
}
