//! Mean-squared-error objective: embedding term, output term and their sum.

use crate::data::Raster;
use crate::error::{Error, Result};
use crate::model::Embedding;
use crate::real::Real;

/// Mean over all elements of the squared differences, accumulated
/// left-to-right in `f64`.
pub fn mse<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    Error::check_len("mse operands", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::domain("mse of empty tensors"));
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x.as_f64() - y.as_f64();
        acc += d * d;
    }
    Ok(acc / a.len() as f64)
}

/// Gradient of `scale · mse(a, b)` with respect to `a`, written to `out`.
pub fn mse_grad<T: Real>(a: &[T], b: &[T], scale: f64, out: &mut [T]) {
    let k = T::lit(2.0 * scale / a.len() as f64);
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = k * (x - y);
    }
}

/// `L_e`: MSE between the predictor's fused latent `e₁` and the vanilla
/// block's embedding `e₂` of the target view.
pub fn embedding_loss(e1: &Embedding, e2: &Embedding) -> Result<f64> {
    Error::check_len("embedding", e2.len(), e1.len())?;
    mse(e1.as_slice(), e2.as_slice())
}

/// `L_o`: MSE between the generated view `y₁` and the ground truth `y₂`.
pub fn output_loss(y1: &Raster, y2: &Raster) -> Result<f64> {
    mse(y1.as_slice(), y2.as_slice())
}

/// `(L_e, L_o, L_t)` with `L_t = L_e + L_o`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub embedding: f64,
    pub output: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(embedding: f64, output: f64) -> Self {
        LossBreakdown {
            embedding,
            output,
            total: embedding + output,
        }
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.embedding.is_finite() && self.output.is_finite() && self.total.is_finite();
        finite && self.embedding >= 0.0 && self.output >= 0.0 && self.total == self.embedding + self.output
    }
}

pub fn total_loss(e1: &Embedding, e2: &Embedding, y1: &Raster, y2: &Raster) -> Result<LossBreakdown> {
    Ok(LossBreakdown::new(embedding_loss(e1, e2)?, output_loss(y1, y2)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn trivial_values() {
        assert_eq!(mse(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0f64, 0.0], &[2.0, 2.0]).unwrap(), 4.0);
        let e1 = Embedding((0..1024).map(|i| (i % 7) as f32 * 0.25).collect());
        let e2 = Embedding(e1.0.iter().map(|v| v + 1.0).collect());
        assert_eq!(embedding_loss(&e1, &e2).unwrap(), 1.0);
        let y1 = Raster::filled(0.25);
        let y2 = Raster::filled(-0.25);
        assert_eq!(output_loss(&y1, &y2).unwrap(), 0.25);
    }

    #[test]
    fn additivity() {
        let l = LossBreakdown::new(0.25, 0.75);
        assert_eq!(l.total, 1.0);
        assert!(l.is_valid());
        let e = Embedding(vec![0.1; 1024]);
        let y = Raster::filled(0.5);
        assert_eq!(total_loss(&e, &e, &y, &y).unwrap(), LossBreakdown::new(0.0, 0.0));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(mse(&[1.0f32], &[1.0, 2.0]), Err(Error::Shape { .. })));
        let a = Embedding(vec![0.0; 1024]);
        let b = Embedding(vec![0.0; 1000]);
        assert!(embedding_loss(&a, &b).is_err());
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.3).collect();
        let b: Vec<f64> = (0..6).map(|i| 1.0 - i as f64 * 0.1).collect();
        let mut g = vec![0.0; 6];
        mse_grad(&a, &b, 1.0, &mut g);
        for i in 0..6 {
            let h = 1e-6;
            let mut ap = a.clone();
            ap[i] += h;
            let mut am = a.clone();
            am[i] -= h;
            let fd = (mse(&ap, &b).unwrap() - mse(&am, &b).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }
}
