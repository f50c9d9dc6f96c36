//! Trains a small single-output cascade on a toy sign problem.

use polycascade::cascade::{Cascade, CascadeConfig};
use polycascade::linalg::Matrix;
use polycascade::metrics::roc_auc;

fn main() -> polycascade::Result<()> {
    let cfg = CascadeConfig {
        alpha: 1.0,
        ..Default::default()
    };
    let mut net = Cascade::<f64>::init(&[3, 8, 1], cfg, 0)?;
    let x = Matrix::from_fn(64, 3, |i, j| ((i * 3 + j) as f64).sin());
    let target = Matrix::from_fn(64, 1, |i, _| {
        if x[(i, 0)] * x[(i, 1)] > 0.0 {
            1.0
        } else {
            -1.0
        }
    });
    for step in 1..=5 {
        let ws = net.forward_batch(&x)?;
        let report = net.train_step(ws, &target)?;
        println!("step {step}: {report:?}");
    }
    let scores = net.evaluate(&x)?;
    let positive: Vec<bool> = target.as_slice().iter().map(|&t| t > 0.0).collect();
    println!("training AUC {:.4}", roc_auc(scores.as_slice(), &positive)?);
    Ok(())
}
