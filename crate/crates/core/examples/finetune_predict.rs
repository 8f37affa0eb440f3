//! Pretrain briefly, fine-tune a 15-day head and forecast one test window.

use gasfm::data::{synthetic_dataset, ProvenanceGuard, Region, SynthConfig};
use gasfm::evaluation::protocol::pretrain_checkpoint;
use gasfm::evaluation::ExperimentConfig;
use gasfm::finetune::{finetune, forecast_rows, predict, FinetuneConfig};

fn main() -> gasfm::Result<()> {
    let mut cfg = ExperimentConfig::default().with_seed(5);
    cfg.pretrain.steps = 30;
    let synth = SynthConfig { customers: 30, ..SynthConfig::default() };
    let (data, _) = synthetic_dataset(&synth, 5, &cfg.data.prepare, cfg.data.split)?;

    let mut guard = ProvenanceGuard::open();
    let (ck, _, _) = pretrain_checkpoint(&data, &cfg, &mut guard)?;
    let mut model = ck.model.deep_clone()?;
    let ft = FinetuneConfig { horizon: 15, epochs: 4, steps_per_epoch: 25, ..cfg.finetune.clone() };
    let outcome = finetune(&mut model, &data, &ft, &mut guard)?;
    for e in &outcome.curve {
        println!("epoch {}  train {:.4}  val mse {:.4}  lr {:.2e}", e.epoch, e.train_loss, e.val_mse.unwrap_or(f64::NAN), e.learning_rate);
    }
    println!("kept epoch {:?}", outcome.best_epoch);

    let c = &data.customers[0];
    let w = c.windows(Region::Test, &data.spec.with_horizon(15))[0];
    let f = predict(&model, c, &w, 15)?;
    for r in forecast_rows(&f, c, &w).iter().take(5) {
        println!("{} +{}  forecast {:>9.1}  actual {:>9.1}", r.origin_date, r.step, r.prediction_denorm, r.target_denorm);
    }
    Ok(())
}
