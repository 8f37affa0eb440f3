//! The pretraining objectives on a hand-sized batch: false-negative exclusion,
//! both contrastive losses and the denoising loss.

use candle_core::{Device, Tensor};
use gasfm::pretrain::{
    contrastive_loss_ssl1, contrastive_loss_ssl2, cosine_similarity_matrix, denoise_loss, false_negative_mask,
    LossConfig, LossTerms, Reduction, Similarity,
};

fn main() -> gasfm::Result<()> {
    let dev = Device::Cpu;
    // three customers, two overlapping views each: rows 0..3 then 3..6
    let reps = Tensor::new(
        &[
            [1.0, 0.1, 0.0],
            [0.9, 0.3, 0.1],
            [0.0, 1.0, 0.2],
            [1.0, 0.2, 0.1],
            [0.8, 0.4, 0.0],
            [0.1, 0.9, 0.3],
        ],
        &dev,
    )?;
    let industries: Vec<String> = ["glass", "glass", "catering"].iter().cycle().take(6).map(|s| s.to_string()).collect();
    let sim = cosine_similarity_matrix(&reps)?.to_vec2::<f64>()?;
    let cfg = LossConfig::default();

    for k in [0, 1] {
        let mask = false_negative_mask(&sim, &industries, k)?;
        let l = contrastive_loss_ssl1(&reps, &mask, cfg.temperature, Similarity::Cosine)?.to_scalar::<f64>()?;
        println!("top_k {k}: excluded {:?}  overlap loss {l:.4}", (0..6).map(|i| mask.fn_set(i)).collect::<Vec<_>>());
    }
    let anchors = reps.narrow(0, 0, 3)?;
    let noisy = (&anchors + 0.05)?;
    let ssl2 = contrastive_loss_ssl2(&anchors, &noisy, cfg.temperature, Similarity::Cosine)?;
    let de = denoise_loss(&noisy, &anchors, cfg.smooth_l1_beta, Reduction::Mean)?;
    let ssl1 = contrastive_loss_ssl1(&reps, &false_negative_mask(&sim, &industries, 1)?, cfg.temperature, Similarity::Cosine)?;
    let total = LossTerms { denoise: Some(de.clone()), ssl1: Some(ssl1), ssl2: Some(ssl2.clone()) }.combine(&cfg)?;
    println!(
        "noise loss {:.4}  denoise {:.5}  combined {:.4}",
        ssl2.to_scalar::<f64>()?,
        de.to_scalar::<f64>()?,
        total.to_scalar::<f64>()?
    );
    Ok(())
}
