//! Whole-volume inference by sliding slice windows and overlapping tiles,
//! plus analytic activation-memory estimates.

mod memory;
mod tiling;

use serde::{Deserialize, Serialize};
use volsr_nn::{Scalar, Shape, Tensor};

use crate::arch::{Dimensionality, Network, NetworkSpec};
use crate::volume::Volume;
use crate::{Error, Result};

pub use memory::{estimate_activation_memory, MemoryEstimate};
pub use tiling::{axis_tiles, AxisTile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    /// Each output voxel comes from exactly one tile, away from its edges.
    CenterCrop,
    /// Overlaps are averaged with weights falling off linearly towards tile edges.
    LinearFeather,
}

/// Tiling on the network-input grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TileSpec {
    pub tile_yx: (usize, usize),
    pub overlap_yx: (usize, usize),
    /// Tile depth for volumetric networks; the z overlap equals the y overlap.
    pub z_chunk: usize,
    pub blend: Blend,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            tile_yx: (64, 64),
            overlap_yx: (12, 12),
            z_chunk: 32,
            blend: Blend::CenterCrop,
        }
    }
}

impl TileSpec {
    /// A single tile covering any volume up to `extent` voxels per axis.
    pub fn whole(extent: usize) -> Self {
        Self {
            tile_yx: (extent, extent),
            overlap_yx: (0, 0),
            z_chunk: extent,
            blend: Blend::CenterCrop,
        }
    }
}

/// Replicate the first and last slice `half_window` times.
pub fn pad_volume_z(vol: &Volume, half_window: usize) -> Volume {
    if half_window == 0 {
        return vol.clone();
    }
    let [d, h, w] = vol.dims();
    let plane = h * w;
    let mut data = Vec::with_capacity((d + 2 * half_window) * plane);
    for z in 0..d + 2 * half_window {
        let src = z.saturating_sub(half_window).min(d - 1);
        data.extend_from_slice(&vol.data()[src * plane..(src + 1) * plane]);
    }
    vol.with_geometry([d + 2 * half_window, h, w], vol.voxel_size_um(), data)
        .expect("padding preserves validity")
}

/// Copy `net2d` into the matching multi-slice network whose first layer
/// sees only the centre slice.
pub fn embed_2d_as_25d<T: Scalar>(net2d: &Network<T>, slices: usize) -> Result<Network<T>> {
    let s2 = net2d.spec();
    if s2.dimensionality != Dimensionality::D2 {
        return Err(Error::Invalid(format!(
            "embedding needs a 2d network, got {}",
            s2.dimensionality
        )));
    }
    let spec = NetworkSpec {
        dimensionality: Dimensionality::D25,
        in_slices: Some(slices),
        ..s2.clone()
    };
    let mut net = Network::<T>::build(&spec, 0)?;
    let first = net.layers().next().map(|(_, w, _)| w).expect("non-empty network");
    let centre = slices / 2;
    let src_ids: Vec<_> = net2d.params().ids().collect();
    let dst_ids: Vec<_> = net.params().ids().collect();
    for (src, dst) in src_ids.into_iter().zip(dst_ids) {
        let value = net2d.params().get(src);
        if net.params().name(dst) != net2d.params().name(src) {
            return Err(Error::Invalid(format!(
                "layer tables differ at `{}`",
                net2d.params().name(src)
            )));
        }
        if dst == first {
            let s = value.shape();
            let mut w = Tensor::zeros(Shape::new(s.n, slices, s.d, s.h, s.w));
            let taps = s.spatial();
            for o in 0..s.n {
                let from = &value.item(o)[..taps];
                let off = w.offset([o, centre, 0, 0, 0]);
                w.data_mut()[off..off + taps].copy_from_slice(from);
            }
            net.params_mut().assign(dst, w)?;
        } else {
            net.params_mut().assign(dst, value.clone())?;
        }
    }
    Ok(net)
}

/// Super-resolve a volume already on the network-input grid (see
/// [`crate::arch::prepare_input`]).
///
/// Planar networks emit one output slice per input slice from the window
/// centred on it, replicate-padded at both ends; volumetric networks are run
/// on overlapping sub-volumes.
pub fn super_resolve_volume(net: &Network<f32>, input: &Volume, tiles: &TileSpec) -> Result<Volume> {
    let out = tiling::run(net, input, tiles)?;
    let tiles_json = serde_json::to_value(tiles).expect("plain struct serializes");
    let spec_json = serde_json::to_value(net.spec()).expect("plain struct serializes");
    Ok(out.with_meta("tiles", tiles_json).with_meta("network", spec_json))
}
