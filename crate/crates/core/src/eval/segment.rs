use serde::{Deserialize, Serialize};

use crate::phantom::DefectRecord;
use crate::volume::Volume;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Threshold {
    Fixed { value: f32 },
    /// Halfway between known material and background intensities.
    Midpoint { background: f32, material: f32 },
    /// Otsu's method on the masked histogram.
    Otsu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    /// Component label per voxel, 0 for none; label `k` is record `k - 1`.
    pub labels: Vec<u32>,
    pub records: Vec<DefectRecord>,
    pub threshold: f32,
}

/// Otsu threshold over a 256-bin histogram spanning the values' range.
pub fn otsu_threshold(values: impl Iterator<Item = f32> + Clone) -> f32 {
    let (lo, hi) = values
        .clone()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return lo;
    }
    const BINS: usize = 256;
    let width = (hi - lo) as f64 / BINS as f64;
    let mut hist = [0u64; BINS];
    for v in values {
        let b = (((v - lo) as f64 / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    let (mut best, mut best_var) = (0usize, -1.0f64);
    for (i, &c) in hist.iter().enumerate() {
        w0 += c;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    (lo as f64 + (best + 1) as f64 * width) as f32
}

/// Label 26-connected components of below-threshold voxels inside the mask.
pub fn segment_defects(vol: &Volume, threshold: Threshold, interior_mask: &[bool]) -> Result<Segmentation> {
    if interior_mask.len() != vol.len() {
        return Err(Error::Shape {
            expected: format!("mask of {} voxels", vol.len()),
            actual: format!("{} entries", interior_mask.len()),
        });
    }
    if !interior_mask.iter().any(|&m| m) {
        return Err(Error::Invalid("interior mask is empty".into()));
    }
    let data = vol.data();
    let t = match threshold {
        Threshold::Fixed { value } => value,
        Threshold::Midpoint { background, material } => 0.5 * (background + material),
        Threshold::Otsu => otsu_threshold(data.iter().zip(interior_mask).filter(|(_, &m)| m).map(|(&v, _)| v)),
    };
    let dims = vol.dims();
    let [d, h, w] = dims;
    let is_defect = |i: usize| interior_mask[i] && data[i] < t;
    let mut labels = vec![0u32; data.len()];
    let mut records = Vec::new();
    let mut stack = Vec::new();
    for start in 0..data.len() {
        if labels[start] != 0 || !is_defect(start) {
            continue;
        }
        let label = records.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut voxels = Vec::new();
        while let Some(i) = stack.pop() {
            voxels.push(i);
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            for zz in z.saturating_sub(1)..=(z + 1).min(d - 1) {
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let j = (zz * h + yy) * w + xx;
                        if labels[j] == 0 && is_defect(j) {
                            labels[j] = label;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        records.push(DefectRecord::from_voxels(records.len(), voxels, dims, vol.voxel_volume_um3()));
    }
    Ok(Segmentation {
        labels,
        records,
        threshold: t,
    })
}
