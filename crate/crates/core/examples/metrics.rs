//! Forecast metrics on small hand-made cases, including the undefined MASE
//! scale on a flat target.

use gasfm::evaluation::{mae, mase, mse, smape};

fn main() -> gasfm::Result<()> {
    let target = [10.0, 12.0, 14.0, 16.0];
    let pred = [11.0, 13.0, 15.0, 17.0];
    println!("mse {}  mae {}", mse(&pred, &target)?, mae(&pred, &target)?);
    println!("smape {:.4}", smape(&pred, &target)?);
    println!("mase {:?}", mase(&pred, &target, &target, 1)?);

    let flat = [5.0; 4];
    println!("mase on a flat target {:?}", mase(&pred, &flat, &flat, 1)?);
    println!("smape with zeros {}", smape(&[0.0, 1.0], &[0.0, -1.0])?);
    Ok(())
}
