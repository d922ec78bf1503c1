use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::volume::Volume;
use crate::{seeds, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationMode {
    /// Blur and bin all three axes.
    Isotropic,
    /// Blur and bin y and x only.
    InPlane,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    /// Gaussian blur sigma in HR voxels.
    pub blur_sigma_vox: f64,
    pub bin_factor: usize,
    /// Standard deviation of additive noise after binning.
    pub noise_sigma: f64,
    /// Relative brightening at the in-plane radius `min(h, w) / 2`.
    pub bias_amplitude: f64,
    pub mode: DegradationMode,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            blur_sigma_vox: 1.0,
            bin_factor: 4,
            noise_sigma: 0.02,
            bias_amplitude: 0.05,
            mode: DegradationMode::Isotropic,
            seed: 0,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable convolution along `axis` with edge replication.
fn blur_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let n = dims[axis] as i64;
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let mut out = vec![0.0; data.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = ((i / stride) % dims[axis]) as i64;
        let base = i - pos as usize * stride;
        *o = kernel
            .iter()
            .enumerate()
            .map(|(t, w)| {
                let p = (pos + t as i64 - r).clamp(0, n - 1) as usize;
                w * data[base + p * stride]
            })
            .sum();
    }
    out
}

/// Blur, box-bin, add noise and apply a radial multiplicative bias, in that order.
pub fn degrade(hr: &Volume, deg: &DegradationSpec) -> Result<Volume> {
    let f = deg.bin_factor;
    if f == 0 || !(deg.blur_sigma_vox >= 0.0 && deg.noise_sigma >= 0.0 && deg.bias_amplitude >= 0.0) {
        return Err(Error::Invalid(format!("bad degradation parameters {deg:?}")));
    }
    let axes: &[usize] = match deg.mode {
        DegradationMode::Isotropic => &[0, 1, 2],
        DegradationMode::InPlane => &[1, 2],
    };
    let dims = hr.dims();
    let mut factors = [1; 3];
    for &a in axes {
        if dims[a] % f != 0 {
            return Err(Error::Invalid(format!(
                "dimension {} of {dims:?} is not divisible by the bin factor {f}",
                a
            )));
        }
        factors[a] = f;
    }
    let mut data: Vec<f64> = hr.data().iter().map(|&v| v as f64).collect();
    if deg.blur_sigma_vox > 0.0 {
        let k = gaussian_kernel(deg.blur_sigma_vox);
        for &a in axes {
            data = blur_axis(&data, dims, a, &k);
        }
    }

    let out_dims = [0, 1, 2].map(|a| dims[a] / factors[a]);
    let norm = 1.0 / factors.iter().product::<usize>() as f64;
    let mut binned = vec![0.0; out_dims.iter().product()];
    for (i, v) in data.iter().enumerate() {
        let x = i % dims[2];
        let y = (i / dims[2]) % dims[1];
        let z = i / (dims[1] * dims[2]);
        let o = ((z / factors[0]) * out_dims[1] + y / factors[1]) * out_dims[2] + x / factors[2];
        binned[o] += v * norm;
    }

    if deg.noise_sigma > 0.0 {
        let mut rng = seeds::rng(deg.seed);
        let n = Normal::new(0.0, deg.noise_sigma).expect("finite sigma");
        for v in &mut binned {
            *v += n.sample(&mut rng);
        }
    }
    if deg.bias_amplitude > 0.0 {
        let [_, h, w] = out_dims;
        let rmax = h.min(w) as f64 / 2.0;
        for (i, v) in binned.iter_mut().enumerate() {
            let (y, x) = ((i / w) % h, i % w);
            let r = ((y as f64 + 0.5 - h as f64 / 2.0).powi(2) + (x as f64 + 0.5 - w as f64 / 2.0).powi(2)).sqrt();
            *v *= 1.0 + deg.bias_amplitude * (r / rmax).min(1.0).powi(2);
        }
    }

    let vs = hr.voxel_size_um();
    let out_vs = [0, 1, 2].map(|a| vs[a] * factors[a] as f64);
    Ok(hr
        .with_geometry(out_dims, out_vs, binned.into_iter().map(|v| v as f32).collect())?
        .with_meta("degradation", serde_json::to_value(deg).expect("plain struct serializes")))
}
