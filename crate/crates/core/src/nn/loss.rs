//! Scalar losses returning `(value, dL/dpred)`.

use super::tensor::Tensor;
use crate::error::{HerdError, Result};

fn check(op: &'static str, pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape != target.shape {
        return Err(HerdError::shape(op, format!("{:?} vs {:?}", pred.shape, target.shape)));
    }
    if pred.is_empty() {
        return Err(HerdError::shape(op, "empty input"));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    check("mse", pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data.iter().zip(&target.data) {
        let d = p as f64 - t as f64;
        loss += d * d;
        grad.push((2.0 * d / n) as f32);
    }
    Ok((loss / n, Tensor { shape: pred.shape.clone(), data: grad }))
}

/// Elementwise Huber loss with transition point 1, averaged.
pub fn smooth_l1(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    check("smooth_l1", pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data.iter().zip(&target.data) {
        let d = p as f64 - t as f64;
        if d.abs() < 1.0 {
            loss += 0.5 * d * d;
            grad.push((d / n) as f32);
        } else {
            loss += d.abs() - 0.5;
            grad.push((d.signum() / n) as f32);
        }
    }
    Ok((loss / n, Tensor { shape: pred.shape.clone(), data: grad }))
}
