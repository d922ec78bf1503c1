use serde::{Deserialize, Serialize};

use super::Volume;
use crate::{Error, Result};

/// Interpolation kernel for axis resampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    Linear,
    /// Keys cubic convolution, `a = -0.5`.
    Cubic,
}

fn keys(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t.powi(3) - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t.powi(3) - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source indices and weights for each output sample. Sample centres are
/// aligned so that output `o` sits at input coordinate `(o + 0.5) / scale - 0.5`;
/// indices past either end are clamped (edge replication).
fn taps(input: usize, output: usize, scale: f64, method: Interp) -> Vec<Vec<(usize, f64)>> {
    let last = input as isize - 1;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    (0..output)
        .map(|o| {
            let s = (o as f64 + 0.5) / scale - 0.5;
            match method {
                Interp::Nearest => vec![(clamp((s + 0.5).floor() as isize), 1.0)],
                Interp::Linear => {
                    let s = s.clamp(0.0, last as f64);
                    let i0 = s.floor() as isize;
                    let f = s - i0 as f64;
                    vec![(clamp(i0), 1.0 - f), (clamp(i0 + 1), f)]
                }
                Interp::Cubic => {
                    let i0 = s.floor() as isize;
                    let t = s - i0 as f64;
                    (-1..=2).map(|k| (clamp(i0 + k), keys(t - k as f64))).collect()
                }
            }
        })
        .collect()
}

/// Resample along one axis (0 = z, 1 = y, 2 = x) to `out_len` samples with
/// the given scale factor; voxel size on that axis is divided by `scale`.
pub fn resample_axis(vol: &Volume, axis: usize, out_len: usize, scale: f64, method: Interp) -> Result<Volume> {
    if axis > 2 {
        return Err(Error::Invalid(format!("axis {axis} out of range")));
    }
    if !(scale > 0.0 && scale.is_finite()) || out_len == 0 {
        return Err(Error::Invalid(format!("resample needs scale > 0 and output >= 1, got {scale}, {out_len}")));
    }
    let dims = vol.dims();
    let n_in = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let table = taps(n_in, out_len, scale, method);
    let src = vol.data();
    let mut out = vec![0f32; outer * out_len * inner];
    let mut acc = vec![0f64; inner];
    for o in 0..outer {
        for (oi, tap) in table.iter().enumerate() {
            acc.fill(0.0);
            for &(i, w) in tap {
                if w == 0.0 {
                    continue;
                }
                let row = &src[(o * n_in + i) * inner..(o * n_in + i + 1) * inner];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += w * v as f64;
                }
            }
            let dst = &mut out[(o * out_len + oi) * inner..(o * out_len + oi + 1) * inner];
            for (d, &a) in dst.iter_mut().zip(&acc) {
                *d = a as f32;
            }
        }
    }
    let mut new_dims = dims;
    new_dims[axis] = out_len;
    let mut vs = vol.voxel_size_um();
    vs[axis] /= scale;
    vol.with_geometry(new_dims, vs, out)
}

/// Resample along z by `factor`; the output has `round(factor * z)` slices.
pub fn resample_z(vol: &Volume, factor: f64, method: Interp) -> Result<Volume> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Invalid(format!("resample factor must be > 0, got {factor}")));
    }
    let out_len = (factor * vol.dims()[0] as f64).round() as usize;
    if out_len < 1 {
        return Err(Error::Invalid(format!(
            "factor {factor} leaves no slices from {}",
            vol.dims()[0]
        )));
    }
    if factor == 1.0 {
        return Ok(vol.clone());
    }
    resample_axis(vol, 0, out_len, factor, method)
}

/// Integer in-plane (y and x) upsampling.
pub fn upsample_inplane(vol: &Volume, factor: usize, method: Interp) -> Result<Volume> {
    if factor == 1 {
        return Ok(vol.clone());
    }
    let [_, h, w] = vol.dims();
    let f = factor as f64;
    let v = resample_axis(vol, 1, h * factor, f, method)?;
    resample_axis(&v, 2, w * factor, f, method)
}

/// Integer upsampling on all three axes.
pub fn upsample_all(vol: &Volume, factor: usize, method: Interp) -> Result<Volume> {
    let v = resample_z(vol, factor as f64, method)?;
    upsample_inplane(&v, factor, method)
}
