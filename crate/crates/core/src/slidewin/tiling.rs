use volsr_nn::{Shape, Tensor};

use super::{pad_volume_z, Blend, TileSpec};
use crate::arch::Network;
use crate::volume::Volume;
use crate::{Error, Result};

/// One tile along one axis of the network-input grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisTile {
    pub start: usize,
    pub len: usize,
    /// Range this tile writes under centre-crop blending.
    pub own: (usize, usize),
}

/// Tiles of length `tile` stepping by `tile - 2 * overlap`, the last one
/// flush with the end. Ownership changes halfway between neighbouring
/// tiles' margins, so every owned voxel is at least `overlap` from an
/// interior tile edge.
pub fn axis_tiles(extent: usize, tile: usize, overlap: usize) -> Vec<AxisTile> {
    let tile = tile.min(extent).max(1);
    if tile >= extent {
        return vec![AxisTile {
            start: 0,
            len: extent,
            own: (0, extent),
        }];
    }
    let step = tile.saturating_sub(2 * overlap).max(1);
    let mut starts = Vec::new();
    let mut s = 0;
    while s + tile < extent {
        starts.push(s);
        s += step;
    }
    starts.push(extent - tile);
    let mut out: Vec<AxisTile> = starts
        .iter()
        .map(|&start| AxisTile {
            start,
            len: tile,
            own: (0, extent),
        })
        .collect();
    for i in 1..out.len() {
        let prev_valid_end = out[i - 1].start + tile - overlap;
        let next_valid_start = out[i].start + overlap;
        let cut = (prev_valid_end + next_valid_start) / 2;
        out[i - 1].own.1 = cut;
        out[i].own.0 = cut;
    }
    out
}

/// Linear feather weight of position `p` inside a tile; full weight at the
/// volume border.
fn feather(t: &AxisTile, p: usize, overlap: usize, extent: usize) -> f32 {
    if overlap == 0 {
        return 1.0;
    }
    let from_lo = if t.start == 0 { f32::INFINITY } else { (p - t.start) as f32 + 0.5 };
    let from_hi = if t.start + t.len == extent { f32::INFINITY } else { (t.start + t.len - p) as f32 - 0.5 };
    (from_lo.min(from_hi) / overlap as f32).clamp(1e-3, 1.0)
}

struct Accumulator {
    dims: [usize; 3],
    sum: Vec<f32>,
    weight: Vec<f32>,
}

impl Accumulator {
    fn new(dims: [usize; 3]) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            sum: vec![0.0; n],
            weight: vec![0.0; n],
        }
    }

    fn finish(self) -> Vec<f32> {
        self.sum
            .into_iter()
            .zip(self.weight)
            .map(|(s, w)| if w > 0.0 { s / w } else { 0.0 })
            .collect()
    }
}

fn clamp_tile(requested: usize, extent: usize, axis: &str) -> usize {
    if requested > extent {
        log::warn!("tile {requested} exceeds the {axis} extent {extent}; clamping");
        extent
    } else {
        requested
    }
}

pub(super) fn run(net: &Network<f32>, input: &Volume, tiles: &TileSpec) -> Result<Volume> {
    let spec = net.spec();
    let (oy, ox) = tiles.overlap_yx;
    if tiles.tile_yx.0 <= 2 * oy || tiles.tile_yx.1 <= 2 * ox || tiles.z_chunk == 0 {
        return Err(Error::Invalid(format!(
            "tiles {:?} must exceed twice the overlap {:?}",
            tiles.tile_yx, tiles.overlap_yx
        )));
    }
    let [d, h, w] = input.dims();
    let [fd, fh, fw] = spec.output_extent([1, 1, 1]);
    let out_dims = [d * fd, h * fh, w * fw];
    let vs = input.voxel_size_um();
    let out_vs = [vs[0] / fd as f64, vs[1] / fh as f64, vs[2] / fw as f64];
    let ty = axis_tiles(h, clamp_tile(tiles.tile_yx.0, h, "y"), oy);
    let tx = axis_tiles(w, clamp_tile(tiles.tile_yx.1, w, "x"), ox);
    let mut acc = Accumulator::new(out_dims);

    let volumetric = spec.dimensionality.is_volumetric();
    let tz = if volumetric {
        let c = clamp_tile(tiles.z_chunk, d, "z");
        let oz = if c <= 2 * oy { (c.saturating_sub(1)) / 2 } else { oy };
        (axis_tiles(d, c, oz), oz)
    } else {
        ((0..d).map(|z| AxisTile { start: z, len: 1, own: (z, z + 1) }).collect(), 0)
    };
    let slices = spec.slices();
    let half = slices / 2;
    let source = if volumetric { input.clone() } else { pad_volume_z(input, half) };

    for zt in &tz.0 {
        for yt in &ty {
            for xt in &tx {
                let (x_in, shape) = if volumetric {
                    let block = source.block([zt.start, yt.start, xt.start], [zt.len, yt.len, xt.len]);
                    (block, Shape::new(1, 1, zt.len, yt.len, xt.len))
                } else {
                    // Window for output slice z spans padded slices z..z + slices.
                    let block = source.block([zt.start, yt.start, xt.start], [slices, yt.len, xt.len]);
                    (block, Shape::planar(1, slices, yt.len, xt.len))
                };
                let y = net.infer(Tensor::from_vec(shape, x_in)?)?;
                if !y.all_finite() {
                    return Err(Error::NonFiniteOutput(format!(
                        "tile z={} y={} x={}",
                        zt.start, yt.start, xt.start
                    )));
                }
                let ys = y.shape();
                let (bd, bh, bw) = (ys.d, ys.h, ys.w);
                for bz in 0..bd {
                    let iz = zt.start + bz / fd;
                    let gz = zt.start * fd + bz;
                    let wz = if tiles.blend == Blend::LinearFeather { feather(zt, iz, tz.1, d) } else { 1.0 };
                    if tiles.blend == Blend::CenterCrop && !(zt.own.0..zt.own.1).contains(&iz) {
                        continue;
                    }
                    for by in 0..bh {
                        let iy = yt.start + by / fh;
                        if tiles.blend == Blend::CenterCrop && !(yt.own.0..yt.own.1).contains(&iy) {
                            continue;
                        }
                        let wy = if tiles.blend == Blend::LinearFeather { feather(yt, iy, oy, h) } else { 1.0 };
                        let gy = yt.start * fh + by;
                        let row = (gz * out_dims[1] + gy) * out_dims[2];
                        for bx in 0..bw {
                            let ix = xt.start + bx / fw;
                            if tiles.blend == Blend::CenterCrop && !(xt.own.0..xt.own.1).contains(&ix) {
                                continue;
                            }
                            let wx = if tiles.blend == Blend::LinearFeather { feather(xt, ix, ox, w) } else { 1.0 };
                            let wgt = wz * wy * wx;
                            let o = row + xt.start * fw + bx;
                            acc.sum[o] += wgt * y.data()[(bz * bh + by) * bw + bx];
                            acc.weight[o] += wgt;
                        }
                    }
                }
            }
        }
    }
    debug_assert_eq!(acc.dims, out_dims);
    Volume::new(out_dims, out_vs, acc.finish()).map(|v| v.with_meta_map(input.meta().clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiles_cover_and_keep_margins() {
        for (extent, tile, overlap) in [(100, 40, 9), (64, 64, 9), (50, 20, 3), (37, 19, 9), (10, 40, 2)] {
            let t = axis_tiles(extent, tile, overlap);
            assert_eq!(t[0].own.0, 0);
            assert_eq!(t.last().unwrap().own.1, extent);
            for pair in t.windows(2) {
                assert_eq!(pair[0].own.1, pair[1].own.0);
            }
            for a in &t {
                assert!(a.start + a.len <= extent);
                if a.start > 0 {
                    assert!(a.own.0 >= a.start + overlap, "{a:?}");
                }
                if a.start + a.len < extent {
                    assert!(a.own.1 + overlap <= a.start + a.len, "{a:?}");
                }
            }
        }
    }
}
