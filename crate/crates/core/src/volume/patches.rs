//! Aligned low/high-resolution training windows.

use serde::{Deserialize, Serialize};

use super::Volume;
use crate::arch::Dimensionality;
use crate::{Error, Result};

/// A dense `(d, h, w)` block of values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub data: Vec<f32>,
}

/// Low-resolution input window and its high-resolution target.
///
/// For 2D and 2.5D the input's first axis is the slice stack and the target
/// is the single high-resolution slice aligned with the centre slice.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub input: Grid,
    pub target: Grid,
    /// `(z, y, x)` of the target's first voxel in the high-resolution volume.
    pub origin: [usize; 3],
    pub mode: Dimensionality,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub mode: Dimensionality,
    /// Slices per 2.5D window; ignored otherwise.
    pub in_slices: usize,
    pub hr_patch: usize,
    pub stride: usize,
    pub scale: usize,
    /// The low-resolution volume is already on the high-resolution grid.
    pub pre_upsampled: bool,
}

impl ExtractConfig {
    pub fn new(mode: Dimensionality) -> Self {
        Self {
            mode,
            in_slices: mode.default_slices(),
            hr_patch: 128,
            stride: 64,
            scale: 4,
            pre_upsampled: false,
        }
    }

    fn window_slices(&self) -> usize {
        match self.mode {
            Dimensionality::D2 => 1,
            Dimensionality::D25 => self.in_slices,
            Dimensionality::D3 => 1,
        }
    }
}

fn positions(extent: usize, patch: usize, stride: usize) -> impl Iterator<Item = usize> {
    let count = if extent >= patch { (extent - patch) / stride + 1 } else { 0 };
    (0..count).map(move |i| i * stride)
}

fn validate(lr: &Volume, hr: &Volume, cfg: &ExtractConfig) -> Result<usize> {
    if cfg.stride == 0 || cfg.hr_patch == 0 || cfg.scale == 0 {
        return Err(Error::Invalid("patch size, stride and scale must be >= 1".into()));
    }
    match cfg.mode {
        Dimensionality::D2 => {}
        Dimensionality::D25 if cfg.in_slices % 2 == 1 && cfg.in_slices >= 3 => {}
        Dimensionality::D25 => {
            return Err(Error::Invalid(format!(
                "2.5D windows need an odd slice count >= 3, got {}",
                cfg.in_slices
            )))
        }
        Dimensionality::D3 => {}
    }
    let factor = if cfg.pre_upsampled { 1 } else { cfg.scale };
    if cfg.hr_patch % factor != 0 {
        return Err(Error::Invalid(format!(
            "hr_patch {} is not divisible by scale {}",
            cfg.hr_patch, cfg.scale
        )));
    }
    let (l, h) = (lr.dims(), hr.dims());
    let z_factor = if cfg.mode == Dimensionality::D3 { factor } else { 1 };
    let expect = [l[0] * z_factor, l[1] * factor, l[2] * factor];
    if expect != h {
        return Err(Error::Shape {
            expected: format!("high-resolution dims {expect:?} (scale {factor} from {l:?})"),
            actual: format!("{h:?}"),
        });
    }
    Ok(factor)
}

/// Every window whose high-resolution footprint fits, in `(z, y, x)` order.
pub fn extract_training_windows(lr: &Volume, hr: &Volume, cfg: &ExtractConfig) -> Result<Vec<PatchPair>> {
    let factor = validate(lr, hr, cfg)?;
    let [hd, hh, hw] = hr.dims();
    let p = cfg.hr_patch;
    let lp = p / factor;
    let mut out = Vec::new();
    match cfg.mode {
        Dimensionality::D2 | Dimensionality::D25 => {
            let slices = cfg.window_slices();
            let half = slices / 2;
            let zs = if hd >= slices { half..hd - half } else { 0..0 };
            for z in zs {
                for y in positions(hh, p, cfg.stride) {
                    for x in positions(hw, p, cfg.stride) {
                        let input = Grid {
                            dims: [slices, lp, lp],
                            data: lr.block([z - half, y / factor, x / factor], [slices, lp, lp]),
                        };
                        let target = Grid {
                            dims: [1, p, p],
                            data: hr.block([z, y, x], [1, p, p]),
                        };
                        out.push(PatchPair {
                            input,
                            target,
                            origin: [z, y, x],
                            mode: cfg.mode,
                        });
                    }
                }
            }
        }
        Dimensionality::D3 => {
            for z in positions(hd, p, cfg.stride) {
                for y in positions(hh, p, cfg.stride) {
                    for x in positions(hw, p, cfg.stride) {
                        let input = Grid {
                            dims: [lp; 3],
                            data: lr.block([z / factor, y / factor, x / factor], [lp; 3]),
                        };
                        let target = Grid {
                            dims: [p; 3],
                            data: hr.block([z, y, x], [p; 3]),
                        };
                        out.push(PatchPair {
                            input,
                            target,
                            origin: [z, y, x],
                            mode: cfg.mode,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(lr_dims: [usize; 3], hr_dims: [usize; 3]) -> (Volume, Volume) {
        let lr = Volume::from_fn(lr_dims, [69.12; 3], |z, y, x| (z * 10000 + y * 100 + x) as f32).unwrap();
        let hr = Volume::from_fn(hr_dims, [17.28; 3], |z, y, x| -((z * 100000 + y * 1000 + x) as f32)).unwrap();
        (lr, hr)
    }

    #[test]
    fn planar_grid_origins() {
        let (lr, hr) = pair([1, 64, 64], [1, 256, 256]);
        let cfg = ExtractConfig::new(Dimensionality::D2);
        let patches = extract_training_windows(&lr, &hr, &cfg).unwrap();
        let origins: Vec<_> = patches.iter().map(|p| (p.origin[1], p.origin[2])).collect();
        let mut want = Vec::new();
        for y in [0, 64, 128] {
            for x in [0, 64, 128] {
                want.push((y, x));
            }
        }
        assert_eq!(origins, want);
        assert_eq!(patches[0].input.dims, [1, 32, 32]);
        assert_eq!(patches[0].target.dims, [1, 128, 128]);
    }

    #[test]
    fn stacked_window_fits_exactly_once() {
        let (lr, hr) = pair([7, 32, 32], [7, 128, 128]);
        let cfg = ExtractConfig::new(Dimensionality::D25);
        let patches = extract_training_windows(&lr, &hr, &cfg).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].origin, [3, 0, 0]);
        assert_eq!(patches[0].input.dims, [7, 32, 32]);
        // The input stack runs over lr slices 0..7.
        assert_eq!(patches[0].input.data[6 * 32 * 32], 60000.0);

        let (lr, hr) = pair([6, 32, 32], [6, 128, 128]);
        assert!(extract_training_windows(&lr, &hr, &cfg).unwrap().is_empty());
    }

    #[test]
    fn incompatible_grids_are_rejected() {
        let (lr, hr) = pair([2, 30, 32], [2, 128, 128]);
        assert!(extract_training_windows(&lr, &hr, &ExtractConfig::new(Dimensionality::D2)).is_err());
        let (lr, hr) = pair([2, 32, 32], [2, 128, 128]);
        let cfg = ExtractConfig {
            hr_patch: 30,
            ..ExtractConfig::new(Dimensionality::D2)
        };
        assert!(extract_training_windows(&lr, &hr, &cfg).is_err());
        let cfg = ExtractConfig {
            in_slices: 4,
            ..ExtractConfig::new(Dimensionality::D25)
        };
        assert!(extract_training_windows(&lr, &hr, &cfg).is_err());
    }

    #[test]
    fn cubes_for_volumetric_mode() {
        let (lr, hr) = pair([4, 4, 8], [16, 16, 32]);
        let cfg = ExtractConfig {
            hr_patch: 8,
            stride: 8,
            ..ExtractConfig::new(Dimensionality::D3)
        };
        let patches = extract_training_windows(&lr, &hr, &cfg).unwrap();
        assert_eq!(patches.len(), 2 * 2 * 4);
        assert_eq!(patches[1].origin, [0, 0, 8]);
        assert_eq!(patches[1].input.dims, [2, 2, 2]);
        assert_eq!(patches[1].input.data[0], lr.get(0, 0, 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn counts_match_enumeration_and_targets_round_trip(
            lz in 1usize..10, ly in 2usize..12, lx in 2usize..12,
            p4 in 1usize..4, stride in 1usize..9, stacked in any::<bool>(), pre in any::<bool>(),
        ) {
            let scale = if pre { 1 } else { 4 };
            let (lr, hr) = pair([lz, ly * 4 / scale, lx * 4 / scale], [lz, ly * 4, lx * 4]);
            let mode = if stacked { Dimensionality::D25 } else { Dimensionality::D2 };
            let cfg = ExtractConfig { mode, in_slices: 3, hr_patch: p4 * 4, stride, scale: 4, pre_upsampled: pre };
            let patches = extract_training_windows(&lr, &hr, &cfg).unwrap();

            // Exhaustive enumeration of every in-bounds origin on the stride lattice.
            let p = p4 * 4;
            let half = if stacked { 1 } else { 0 };
            let mut brute = 0;
            for z in 0..lz {
                for y in 0..ly * 4 {
                    for x in 0..lx * 4 {
                        let fits = z >= half && z + half < lz && y + p <= ly * 4 && x + p <= lx * 4;
                        if fits && y % stride == 0 && x % stride == 0 {
                            brute += 1;
                        }
                    }
                }
            }
            prop_assert_eq!(patches.len(), brute);
            let per_axis = |e: usize| if e >= p { (e - p) / stride + 1 } else { 0 };
            let zs = if lz >= 2 * half + 1 { lz - 2 * half } else { 0 };
            prop_assert_eq!(patches.len(), zs * per_axis(ly * 4) * per_axis(lx * 4));
            for pp in &patches {
                let [z, y, x] = pp.origin;
                prop_assert!(z < lz && y < ly * 4 && x < lx * 4);
                prop_assert_eq!(&pp.target.data, &hr.block([z, y, x], [1, p, p]));
            }
        }
    }
}
