use crate::{Scalar, Shape, Tensor};

pub(crate) struct BatchStats<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Batch normalization with statistics over `(n, d, h, w)` per channel.
pub(crate) fn batch_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Tensor<T>, BatchStats<T>) {
    let s = x.shape();
    let sp = s.spatial();
    let m = T::from_usize(s.n * sp).expect("count fits");
    let mut xhat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    let mut inv_std = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let chan = |n: usize| &x.item(n)[c * sp..(c + 1) * sp];
        let mean = (0..s.n).map(|n| chan(n).iter().copied().sum::<T>()).sum::<T>() / m;
        let var = (0..s.n)
            .map(|n| chan(n).iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
            .sum::<T>()
            / m;
        let istd = T::one() / (var + eps).sqrt();
        inv_std.push(istd);
        for n in 0..s.n {
            let src = &x.item(n)[c * sp..(c + 1) * sp];
            let off = n * s.item() + c * sp;
            for (i, &v) in src.iter().enumerate() {
                let h = (v - mean) * istd;
                xhat.data_mut()[off + i] = h;
                y.data_mut()[off + i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, BatchStats { xhat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_backward<T: Scalar>(
    gy: &Tensor<T>,
    gamma: &[T],
    stats: &BatchStats<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let s: Shape = gy.shape();
    let sp = s.spatial();
    let m = T::from_usize(s.n * sp).expect("count fits");
    let mut gx = Tensor::zeros(s);
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut sum_g = T::zero();
        let mut sum_gh = T::zero();
        for n in 0..s.n {
            let off = n * s.item() + c * sp;
            for i in 0..sp {
                let g = gy.data()[off + i];
                sum_g += g;
                sum_gh += g * stats.xhat.data()[off + i];
            }
        }
        dgamma[c] = sum_gh;
        dbeta[c] = sum_g;
        let k = gamma[c] * stats.inv_std[c] / m;
        for n in 0..s.n {
            let off = n * s.item() + c * sp;
            for i in 0..sp {
                let g = gy.data()[off + i];
                let h = stats.xhat.data()[off + i];
                gx.data_mut()[off + i] = k * (m * g - sum_g - h * sum_gh);
            }
        }
    }
    (gx, dgamma, dbeta)
}
