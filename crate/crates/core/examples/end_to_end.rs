//! Synthetic data through pretraining, fine-tuning and evaluation, compared
//! with the same model trained from scratch.
//!
//! `cargo run --release --example end_to_end -- [seed ...]`

use gasfm::data::synthetic_dataset;
use gasfm::evaluation::{run_main, ExperimentConfig};

fn main() -> gasfm::Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![7] } else { seeds };
    let base = ExperimentConfig::default();
    let started = std::time::Instant::now();
    let (data, report) = synthetic_dataset(&base.data.synth, base.data.synth_seed, &base.data.prepare, base.data.split)?;
    println!("prepared {} customers ({report:?}) in {:.1?}", data.len(), started.elapsed());
    for seed in seeds {
        let cfg = base.clone().with_seed(seed);
        let t = std::time::Instant::now();
        let out = run_main(&data, &cfg)?;
        for h in &cfg.plan.horizons {
            let ours = out.report.horizon(*h).expect("evaluated horizon");
            let scratch = out.baseline.horizon(*h).expect("evaluated horizon");
            println!(
                "seed {seed} h{h}: pretrained mse {:.4} mae {:.4} smape {:.4} | scratch mse {:.4} mae {:.4} smape {:.4}  ({:.1?})",
                ours.mse, ours.mae, ours.smape, scratch.mse, scratch.mae, scratch.smape, t.elapsed()
            );
        }
    }
    Ok(())
}
