//! Synthetic parts with ellipsoidal pores, and their degraded scans.

mod dataset;
mod degrade;

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::volume::Volume;
use crate::{seeds, Error, Result};

pub use dataset::{load_defects, make_dataset, DatasetConfig, Manifest, ManifestEntry, PhantomTemplate, Split, MANIFEST_FILE};
pub use degrade::{degrade, DegradationMode, DegradationSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartShape {
    /// Axis-aligned box inset by the margin on every side.
    Block,
    /// Cylinder along z, inset by the margin radially and at both caps.
    Cylinder,
}

/// An ellipsoidal pore in HR voxel coordinates `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoreSpec {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub voxel_size_um: f64,
    pub part_shape: PartShape,
    /// Distance in voxels between the volume border and the part surface.
    pub margin: f64,
    pub material_intensity: f32,
    pub background_intensity: f32,
    pub defects: Vec<PoreSpec>,
    pub seed: u64,
}

/// Ground truth (or detected) pore.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectRecord {
    pub id: usize,
    /// Centroid `(z, y, x)` in voxels.
    pub center_vox: [f64; 3],
    pub voxel_count: usize,
    pub effective_diameter_um: f64,
    /// Linear `(z, y, x)` indices, ascending.
    pub voxel_set: Vec<usize>,
}

/// Diameter of the sphere with the same volume.
pub fn effective_diameter_um(voxel_count: usize, voxel_volume_um3: f64) -> f64 {
    (6.0 * voxel_count as f64 * voxel_volume_um3 / PI).cbrt()
}

impl DefectRecord {
    pub fn from_voxels(id: usize, mut voxel_set: Vec<usize>, dims: [usize; 3], voxel_volume_um3: f64) -> Self {
        voxel_set.sort_unstable();
        let n = voxel_set.len();
        let mut c = [0.0; 3];
        for &i in &voxel_set {
            let x = i % dims[2];
            let y = (i / dims[2]) % dims[1];
            let z = i / (dims[1] * dims[2]);
            c[0] += z as f64;
            c[1] += y as f64;
            c[2] += x as f64;
        }
        Self {
            id,
            center_vox: c.map(|v| v / n.max(1) as f64),
            voxel_count: n,
            effective_diameter_um: effective_diameter_um(n, voxel_volume_um3),
            voxel_set,
        }
    }
}

impl PhantomSpec {
    pub fn new(dims: [usize; 3], part_shape: PartShape, seed: u64) -> Self {
        Self {
            dims,
            voxel_size_um: 17.28,
            part_shape,
            margin: 6.0,
            material_intensity: 0.8,
            background_intensity: 0.1,
            defects: Vec::new(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || !(self.voxel_size_um > 0.0) || !(self.margin >= 0.0) {
            return Err(Error::Invalid("phantom dims, voxel size and margin must be positive".into()));
        }
        let (m, b) = (self.material_intensity, self.background_intensity);
        if !(m > b && m <= 1.0 && b >= 0.0) {
            return Err(Error::Invalid(format!(
                "need 0 <= background ({b}) < material ({m}) <= 1"
            )));
        }
        Ok(())
    }

    /// Signed distance in voxels from a voxel centre to the part surface,
    /// positive inside.
    pub fn inside_distance(&self, z: f64, y: f64, x: f64) -> f64 {
        let [d, h, w] = self.dims.map(|v| v as f64);
        let m = self.margin;
        let along = |p: f64, n: f64| (p + 0.5 - m).min(n - m - (p + 0.5));
        match self.part_shape {
            PartShape::Block => along(z, d).min(along(y, h)).min(along(x, w)),
            PartShape::Cylinder => {
                let r = (h.min(w) / 2.0) - m;
                let (cy, cx) = (h / 2.0, w / 2.0);
                let radial = r - ((y + 0.5 - cy).powi(2) + (x + 0.5 - cx).powi(2)).sqrt();
                radial.min(along(z, d))
            }
        }
    }

    /// Voxels at least `erosion` voxels inside the part surface.
    pub fn interior_mask(&self, erosion: f64) -> Vec<bool> {
        let [d, h, w] = self.dims;
        let mut mask = Vec::with_capacity(d * h * w);
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    mask.push(self.inside_distance(z as f64, y as f64, x as f64) >= erosion);
                }
            }
        }
        mask
    }
}

/// Minimum surface distance a pore voxel must keep from the part surface.
const PORE_CLEARANCE: f64 = 2.0;

fn rasterize(p: &PoreSpec, dims: [usize; 3]) -> Vec<usize> {
    let mut out = Vec::new();
    let lo = |a: usize| (p.center[a] - p.radii[a]).floor().max(0.0) as usize;
    let hi = |a: usize| ((p.center[a] + p.radii[a]).ceil() as usize).min(dims[a] - 1);
    for z in lo(0)..=hi(0) {
        for y in lo(1)..=hi(1) {
            for x in lo(2)..=hi(2) {
                let q = [z, y, x];
                let s: f64 = (0..3).map(|a| ((q[a] as f64 - p.center[a]) / p.radii[a]).powi(2)).sum();
                if s <= 1.0 {
                    out.push((z * dims[1] + y) * dims[2] + x);
                }
            }
        }
    }
    out
}

fn neighbourhood(i: usize, dims: [usize; 3]) -> impl Iterator<Item = usize> {
    let [d, h, w] = dims;
    let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
    (-1i64..=1)
        .flat_map(|dz| (-1i64..=1).flat_map(move |dy| (-1i64..=1).map(move |dx| (dz, dy, dx))))
        .filter_map(move |(dz, dy, dx)| {
            let (zz, yy, xx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
            (zz >= 0 && yy >= 0 && xx >= 0 && (zz as usize) < d && (yy as usize) < h && (xx as usize) < w)
                .then(|| ((zz as usize) * h + yy as usize) * w + xx as usize)
        })
}

/// Pore owner per voxel; `usize::MAX` where there is none.
struct Occupancy {
    owner: Vec<usize>,
    dims: [usize; 3],
}

impl Occupancy {
    fn new(dims: [usize; 3]) -> Self {
        Self {
            owner: vec![usize::MAX; dims.iter().product()],
            dims,
        }
    }

    /// Whether `voxels` would touch (26-adjacency) or overlap an existing pore.
    fn conflicts(&self, voxels: &[usize]) -> Option<usize> {
        voxels
            .iter()
            .flat_map(|&i| neighbourhood(i, self.dims))
            .map(|j| self.owner[j])
            .find(|&o| o != usize::MAX)
    }

    fn claim(&mut self, voxels: &[usize], id: usize) {
        for &i in voxels {
            self.owner[i] = id;
        }
    }
}

fn pore_fits(spec: &PhantomSpec, voxels: &[usize]) -> bool {
    let [_, h, w] = spec.dims;
    !voxels.is_empty()
        && voxels.iter().all(|&i| {
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            spec.inside_distance(z as f64, y as f64, x as f64) >= PORE_CLEARANCE
        })
}

/// Rasterize the part and its pores.
///
/// Pores are voxel-centre ellipsoids at background intensity; a pore that
/// leaves the part, rasterizes to nothing, or overlaps or touches another
/// pore is an error.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, Vec<DefectRecord>)> {
    spec.validate()?;
    let (m, b) = (spec.material_intensity, spec.background_intensity);
    let mut vol = Volume::from_fn(spec.dims, [spec.voxel_size_um; 3], |z, y, x| {
        let t = (spec.inside_distance(z as f64, y as f64, x as f64) + 0.5).clamp(0.0, 1.0) as f32;
        b + (m - b) * t
    })?;
    let mut occ = Occupancy::new(spec.dims);
    let mut records = Vec::with_capacity(spec.defects.len());
    let mut data = vol.data().to_vec();
    for (id, pore) in spec.defects.iter().enumerate() {
        if pore.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Invalid(format!("pore {id} has non-positive radii {:?}", pore.radii)));
        }
        let voxels = rasterize(pore, spec.dims);
        if !pore_fits(spec, &voxels) {
            return Err(Error::Invalid(format!("pore {id} at {:?} is empty or not inside the part", pore.center)));
        }
        if let Some(other) = occ.conflicts(&voxels) {
            return Err(Error::Invalid(format!("pore {id} overlaps or touches pore {other}")));
        }
        occ.claim(&voxels, id);
        for &i in &voxels {
            data[i] = b;
        }
        records.push(DefectRecord::from_voxels(id, voxels, spec.dims, vol.voxel_volume_um3()));
    }
    vol = vol
        .with_data(data)?
        .with_meta("source", "phantom")
        .with_meta("phantom_seed", spec.seed)
        .with_meta("part_shape", serde_json::to_value(spec.part_shape).expect("enum serializes"));
    Ok((vol, records))
}

/// Random pore population with stratified log-uniform nominal diameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PorePopulation {
    pub count: usize,
    /// Nominal diameter range in HR voxels.
    pub min_diameter_vox: f64,
    pub max_diameter_vox: f64,
    /// Largest ratio between an ellipsoid's longest and shortest radius.
    pub max_aspect: f64,
}

impl Default for PorePopulation {
    fn default() -> Self {
        Self {
            count: 60,
            min_diameter_vox: 1.5,
            max_diameter_vox: 15.0,
            max_aspect: 1.4,
        }
    }
}

/// Place `pop.count` pores inside the part described by `base`. Placement is
/// retried at random positions; pores that cannot be placed are dropped.
pub fn random_pores(base: &PhantomSpec, pop: &PorePopulation, seed: u64) -> Result<Vec<PoreSpec>> {
    if !(pop.min_diameter_vox > 0.0 && pop.max_diameter_vox >= pop.min_diameter_vox && pop.max_aspect >= 1.0) {
        return Err(Error::Invalid(format!("bad pore population {pop:?}")));
    }
    let mut rng = seeds::rng(seed);
    let (l0, l1) = (pop.min_diameter_vox.ln(), pop.max_diameter_vox.ln());
    let mut sizes: Vec<f64> = (0..pop.count)
        .map(|i| {
            let u = (i as f64 + rng.random::<f64>()) / pop.count as f64;
            (l0 + u * (l1 - l0)).exp()
        })
        .collect();
    // Largest first so that big pores still find room.
    sizes.sort_by(|a, b| b.total_cmp(a));
    let mut occ = Occupancy::new(base.dims);
    let mut pores = Vec::new();
    for d in sizes {
        let mut radii = [d / 2.0; 3];
        for r in &mut radii {
            *r *= rng.random_range(1.0..=pop.max_aspect.sqrt());
        }
        for _ in 0..200 {
            let center = [0, 1, 2].map(|a| rng.random_range(0..base.dims[a]) as f64);
            let pore = PoreSpec { center, radii };
            let voxels = rasterize(&pore, base.dims);
            if pore_fits(base, &voxels) && occ.conflicts(&voxels).is_none() {
                occ.claim(&voxels, pores.len());
                pores.push(pore);
                break;
            }
        }
    }
    Ok(pores)
}
