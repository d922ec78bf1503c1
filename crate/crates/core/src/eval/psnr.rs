use serde::Serialize;

use crate::volume::{SliceAxis, Volume};
use crate::{Error, Result};

/// `10 log10(range^2 / MSE)` in dB; `+inf` when the inputs are identical.
pub fn psnr(a: &[f32], b: &[f32], data_range: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape {
            expected: format!("{} values", a.len()),
            actual: format!("{} values", b.len()),
        });
    }
    if !(data_range > 0.0) {
        return Err(Error::Invalid(format!("data range must be positive, got {data_range}")));
    }
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlicePsnrStats {
    pub axis: SliceAxis,
    /// One entry per slice; `inf` for identical slices.
    pub per_slice_db: Vec<f64>,
    /// Mean and population standard deviation over the finite entries;
    /// `None` when every slice is identical.
    pub mean_db: Option<f64>,
    pub std_db: Option<f64>,
}

impl SlicePsnrStats {
    pub fn degenerate(&self) -> bool {
        self.mean_db.is_none()
    }
}

pub fn slice_psnr_stats(vol: &Volume, reference: &Volume, axis: SliceAxis, data_range: f64) -> Result<SlicePsnrStats> {
    if vol.dims() != reference.dims() {
        return Err(Error::Shape {
            expected: format!("{:?}", reference.dims()),
            actual: format!("{:?}", vol.dims()),
        });
    }
    let (n, _) = vol.slice_layout(axis);
    let per_slice_db = (0..n)
        .map(|i| psnr(&vol.slice(axis, i), &reference.slice(axis, i), data_range))
        .collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = per_slice_db.iter().copied().filter(|v| v.is_finite()).collect();
    let (mean_db, std_db) = if finite.is_empty() {
        (None, None)
    } else {
        let m = finite.iter().sum::<f64>() / finite.len() as f64;
        let var = finite.iter().map(|v| (v - m).powi(2)).sum::<f64>() / finite.len() as f64;
        (Some(m), Some(var.sqrt()))
    };
    Ok(SlicePsnrStats {
        axis,
        per_slice_db,
        mean_db,
        std_db,
    })
}
