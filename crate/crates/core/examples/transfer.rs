//! Cross-customer transfer and zero-shot protocols on a two-way customer
//! partition, with the provenance counters that guard them.

use gasfm::data::{synthetic_dataset, Part, SynthConfig};
use gasfm::evaluation::{partition_label, run_transfer, run_zero_shot, ExperimentConfig};

fn main() -> gasfm::Result<()> {
    let mut cfg = ExperimentConfig::default().with_seed(7);
    cfg.pretrain.steps = 60;
    cfg.finetune.epochs = 3;
    cfg.plan.horizons = vec![7, 30];
    let synth = SynthConfig { customers: 60, ..SynthConfig::default() };
    let (data, _) = synthetic_dataset(&synth, 7, &cfg.data.prepare, cfg.data.split)?;
    let part_one = data.customers.iter().filter(|c| partition_label(&c.customer_id, cfg.plan.partition_seed) == Part::One).count();
    println!("{} customers, {part_one} in part I", data.len());

    for (name, out) in [("transfer", run_transfer(&data, &cfg)?), ("zero-shot", run_zero_shot(&data, &cfg)?)] {
        println!("{name} from part {}: {:?}", out.source, out.provenance);
        for a in &out.report.per_horizon {
            println!("  h{:<3} mse {:.4}  mae {:.4}  smape {:.4}", a.horizon.unwrap_or(0), a.mse, a.mae, a.smape);
        }
    }
    Ok(())
}
