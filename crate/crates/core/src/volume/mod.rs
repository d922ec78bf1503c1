//! Scalar volumes on a voxel grid, stored `(z, y, x)`.

mod io;
mod patches;
mod resample;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

pub use io::data_path;
pub use patches::{extract_training_windows, ExtractConfig, Grid, PatchPair};
pub use resample::{resample_axis, resample_z, upsample_all, upsample_inplane, Interp};

/// Slicing plane for per-slice statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SliceAxis {
    /// Axial planes, one per z index.
    XY,
    /// One plane per y index.
    XZ,
    /// One plane per x index.
    YZ,
}

impl SliceAxis {
    pub const ALL: [SliceAxis; 3] = [SliceAxis::XY, SliceAxis::XZ, SliceAxis::YZ];
}

impl fmt::Display for SliceAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SliceAxis::XY => "XY",
            SliceAxis::XZ => "XZ",
            SliceAxis::YZ => "YZ",
        })
    }
}

/// A 3D scalar field with physical voxel size in micrometres.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    voxel_size_um: [f64; 3],
    data: Vec<f32>,
    meta: BTreeMap<String, Value>,
}

impl Volume {
    pub fn new(dims: [usize; 3], voxel_size_um: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!("volume dims must be >= 1, got {dims:?}")));
        }
        if voxel_size_um.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!(
                "voxel size must be strictly positive, got {voxel_size_um:?}"
            )));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape {
                expected: format!("{} voxels for dims {dims:?}", dims.iter().product::<usize>()),
                actual: format!("{} values", data.len()),
            });
        }
        let vol = Self {
            dims,
            voxel_size_um,
            data,
            meta: BTreeMap::new(),
        };
        vol.check_finite()?;
        Ok(vol)
    }

    pub fn filled(dims: [usize; 3], voxel_size_um: [f64; 3], value: f32) -> Result<Self> {
        Self::new(dims, voxel_size_um, vec![value; dims.iter().product()])
    }

    pub fn from_fn(dims: [usize; 3], voxel_size_um: [f64; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(dims, voxel_size_um, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn voxel_size_um(&self) -> [f64; 3] {
        self.voxel_size_um
    }

    /// Volume of one voxel in cubic micrometres.
    pub fn voxel_volume_um3(&self) -> f64 {
        self.voxel_size_um.iter().product()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn meta(&self) -> &BTreeMap<String, Value> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BTreeMap<String, Value> {
        &mut self.meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub(crate) fn with_meta_map(mut self, meta: BTreeMap<String, Value>) -> Self {
        self.meta = meta;
        self
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    /// Coordinates of a linear index.
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[2];
        let y = (i / self.dims[2]) % self.dims[1];
        [i / (self.dims[1] * self.dims[2]), y, x]
    }

    /// Same grid, new values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Ok(Self::new(self.dims, self.voxel_size_um, data)?.with_meta_map(self.meta.clone()))
    }

    pub(crate) fn with_geometry(&self, dims: [usize; 3], voxel_size_um: [f64; 3], data: Vec<f32>) -> Result<Self> {
        Ok(Self::new(dims, voxel_size_um, data)?.with_meta_map(self.meta.clone()))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite {
                index: self.coords(i),
                value: self.data[i],
            }),
            None => Ok(()),
        }
    }

    /// Number of slices along `axis` and the `(rows, cols)` of each slice.
    pub fn slice_layout(&self, axis: SliceAxis) -> (usize, [usize; 2]) {
        let [d, h, w] = self.dims;
        match axis {
            SliceAxis::XY => (d, [h, w]),
            SliceAxis::XZ => (h, [d, w]),
            SliceAxis::YZ => (w, [d, h]),
        }
    }

    /// Copy one slice out in row-major order.
    pub fn slice(&self, axis: SliceAxis, i: usize) -> Vec<f32> {
        let [d, h, w] = self.dims;
        match axis {
            SliceAxis::XY => self.data[i * h * w..(i + 1) * h * w].to_vec(),
            SliceAxis::XZ => (0..d)
                .flat_map(|z| {
                    let row = self.index(z, i, 0);
                    self.data[row..row + w].iter().copied()
                })
                .collect(),
            SliceAxis::YZ => (0..d)
                .flat_map(|z| (0..h).map(move |y| (z, y)))
                .map(|(z, y)| self.get(z, y, i))
                .collect(),
        }
    }

    /// Sub-block `[origin, origin + size)`; panics if out of bounds.
    pub fn block(&self, origin: [usize; 3], size: [usize; 3]) -> Vec<f32> {
        for a in 0..3 {
            assert!(origin[a] + size[a] <= self.dims[a], "block out of bounds");
        }
        let mut out = Vec::with_capacity(size.iter().product());
        for z in origin[0]..origin[0] + size[0] {
            for y in origin[1]..origin[1] + size[1] {
                let row = self.index(z, y, origin[2]);
                out.extend_from_slice(&self.data[row..row + size[2]]);
            }
        }
        out
    }
}

/// Bounds used to map raw intensities onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub lo: f64,
    pub hi: f64,
}

pub const NORMALIZATION_KEY: &str = "normalization";

/// Map `lo -> 0` and `hi -> 1` linearly, then clamp to `[0, 1]`.
pub fn normalize_volume(vol: &Volume, lo: f64, hi: f64) -> Result<Volume> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Invalid(format!("normalization needs finite hi > lo, got lo={lo}, hi={hi}")));
    }
    vol.check_finite()?;
    let scale = 1.0 / (hi - lo);
    let data = vol
        .data
        .iter()
        .map(|&v| (((v as f64 - lo) * scale) as f32).clamp(0.0, 1.0))
        .collect();
    let bounds = serde_json::to_value(NormBounds { lo, hi }).expect("plain struct serializes");
    Ok(vol.with_data(data)?.with_meta(NORMALIZATION_KEY, bounds))
}

/// Normalize a registered pair with bounds taken from the high-resolution
/// volume's range.
pub fn normalize_pair(lr: &Volume, hr: &Volume) -> Result<(Volume, Volume, NormBounds)> {
    let (lo, hi) = hr.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let hi = if hi > lo { hi } else { lo + 1.0 };
    Ok((normalize_volume(lr, lo, hi)?, normalize_volume(hr, lo, hi)?, NormBounds { lo, hi }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vs() -> [f64; 3] {
        [17.28; 3]
    }

    #[test]
    fn constructor_rejects_bad_geometry_and_values() {
        assert!(Volume::filled([0, 2, 2], vs(), 0.0).is_err());
        assert!(Volume::filled([1, 2, 2], [17.28, 0.0, 1.0], 0.0).is_err());
        let err = Volume::new([1, 1, 3], vs(), vec![0.0, f32::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: [0, 0, 1], .. }));
    }

    #[test]
    fn normalize_maps_bounds_and_clamps() {
        let lo_vol = Volume::filled([2, 3, 4], vs(), 3.0).unwrap();
        assert!(normalize_volume(&lo_vol, 3.0, 5.0).unwrap().data().iter().all(|&v| v == 0.0));

        let mid = Volume::filled([1, 1, 1], vs(), 4.0).unwrap();
        assert_eq!(normalize_volume(&mid, 3.0, 5.0).unwrap().data(), &[0.5]);

        let over = Volume::filled([1, 1, 1], vs(), 2.0).unwrap();
        let n = normalize_volume(&over, 0.0, 1.0).unwrap();
        assert_eq!(n.data(), &[1.0]);
        assert_eq!(n.voxel_size_um(), vs());
        let b: NormBounds = serde_json::from_value(n.meta()[NORMALIZATION_KEY].clone()).unwrap();
        assert_eq!(b, NormBounds { lo: 0.0, hi: 1.0 });

        assert!(normalize_volume(&over, 1.0, 1.0).is_err());
    }

    #[test]
    fn slices_follow_axis_conventions() {
        let v = Volume::from_fn([2, 3, 4], vs(), |z, y, x| (z * 100 + y * 10 + x) as f32).unwrap();
        assert_eq!(v.slice_layout(SliceAxis::XZ), (3, [2, 4]));
        assert_eq!(v.slice(SliceAxis::XZ, 1), vec![10.0, 11.0, 12.0, 13.0, 110.0, 111.0, 112.0, 113.0]);
        assert_eq!(v.slice(SliceAxis::YZ, 2), vec![2.0, 12.0, 22.0, 102.0, 112.0, 122.0]);
        assert_eq!(v.slice(SliceAxis::XY, 1).len(), 12);
        assert_eq!(v.block([1, 1, 2], [1, 2, 2]), vec![112.0, 113.0, 122.0, 123.0]);
    }

    proptest::proptest! {
        #[test]
        fn normalize_is_idempotent_on_unit_bounds(values in proptest::collection::vec(-2.0f32..3.0, 1..64)) {
            let n = values.len();
            let v = Volume::new([1, 1, n], vs(), values).unwrap();
            let once = normalize_volume(&v, 0.0, 1.0).unwrap();
            let twice = normalize_volume(&once, 0.0, 1.0).unwrap();
            proptest::prop_assert_eq!(once.data(), twice.data());
        }
    }
}
