use serde::{Deserialize, Serialize};
use volsr_nn::{Scalar, Tensor};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PixelLoss {
    L1,
    L2,
}

fn same_shape<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            expected: target.shape().to_string(),
            actual: pred.shape().to_string(),
        });
    }
    Ok(())
}

/// Mean absolute or mean squared difference over all elements.
pub fn pixel_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, kind: PixelLoss) -> Result<f64> {
    same_shape(pred, target)?;
    let n = pred.len().max(1) as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let e = p.as_f64() - t.as_f64();
            match kind {
                PixelLoss::L1 => e.abs(),
                PixelLoss::L2 => e * e,
            }
        })
        .sum();
    Ok(sum / n)
}

/// Loss value and its gradient with respect to `pred`.
pub fn pixel_loss_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, kind: PixelLoss) -> Result<(f64, Tensor<T>)> {
    let value = pixel_loss(pred, target, kind)?;
    let n = pred.len().max(1) as f64;
    let grad = pred.zip_map(target, |p, t| {
        let e = p.as_f64() - t.as_f64();
        let g = match kind {
            PixelLoss::L1 => {
                if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            PixelLoss::L2 => 2.0 * e,
        };
        T::from_f64_lossy(g / n)
    })?;
    Ok((value, grad))
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Relativistic average losses and their gradients with respect to each logit.
#[derive(Clone, Debug, PartialEq)]
pub struct RaganTerms {
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_grad_real: Vec<f64>,
    pub d_grad_fake: Vec<f64>,
    pub g_grad_real: Vec<f64>,
    pub g_grad_fake: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(d_loss, g_loss)` where each real score is compared with the mean fake
/// score and vice versa.
pub fn ragan_losses(real_logits: &[f64], fake_logits: &[f64]) -> Result<(f64, f64)> {
    let t = ragan_terms(real_logits, fake_logits)?;
    Ok((t.d_loss, t.g_loss))
}

pub fn ragan_terms(real: &[f64], fake: &[f64]) -> Result<RaganTerms> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Invalid("relativistic losses need non-empty logit sets".into()));
    }
    if let Some((i, &v)) = real.iter().chain(fake).enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Invalid(format!("non-finite logit {v} at position {i}")));
    }
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let (mr, mf) = (mean(real), mean(fake));
    let a: Vec<f64> = real.iter().map(|r| r - mf).collect();
    let b: Vec<f64> = fake.iter().map(|f| f - mr).collect();
    // -log s(x) = softplus(-x), -log(1 - s(x)) = softplus(x)
    let d_loss = a.iter().map(|&x| softplus(-x)).sum::<f64>() / nr + b.iter().map(|&x| softplus(x)).sum::<f64>() / nf;
    let g_loss = a.iter().map(|&x| softplus(x)).sum::<f64>() / nr + b.iter().map(|&x| softplus(-x)).sum::<f64>() / nf;
    let sa: Vec<f64> = a.iter().map(|&x| sigmoid(x)).collect();
    let sb: Vec<f64> = b.iter().map(|&x| sigmoid(x)).collect();
    let (msa, msb) = (mean(&sa), mean(&sb));
    Ok(RaganTerms {
        d_loss,
        g_loss,
        d_grad_real: sa.iter().map(|s| (s - 1.0 - msb) / nr).collect(),
        d_grad_fake: sb.iter().map(|s| (s + 1.0 - msa) / nf).collect(),
        g_grad_real: sa.iter().map(|s| (s + 1.0 - msb) / nr).collect(),
        g_grad_fake: sb.iter().map(|s| (s - 1.0 - msa) / nf).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(-800.0), 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
