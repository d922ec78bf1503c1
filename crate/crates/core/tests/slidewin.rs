use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volsr_core::arch::{build_network, Dimensionality, Family, Network, NetworkSpec};
use volsr_core::slidewin::{
    embed_2d_as_25d, estimate_activation_memory, pad_volume_z, super_resolve_volume, Blend, TileSpec,
};
use volsr_core::volume::Volume;
use volsr_core::Error;
use volsr_nn::{Shape, Tensor};

use Dimensionality::{D2, D25, D3};

fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(dims, [1.0; 3], |_, _, _| rng.random::<f32>()).unwrap()
}

/// Untiled reference: each slice window assembled by clamped indexing and
/// pushed through the network in one piece.
fn reference_planar(net: &Network<f32>, vol: &Volume) -> Vec<f32> {
    let [d, h, w] = vol.dims();
    let s = net.spec().slices();
    let half = (s / 2) as isize;
    let mut out = Vec::new();
    for z in 0..d as isize {
        let mut x = Vec::with_capacity(s * h * w);
        for k in -half..=half {
            let zz = (z + k).clamp(0, d as isize - 1) as usize;
            x.extend_from_slice(&vol.data()[zz * h * w..(zz + 1) * h * w]);
        }
        let y = net.infer(Tensor::from_vec(Shape::planar(1, s, h, w), x).unwrap()).unwrap();
        out.extend_from_slice(y.data());
    }
    out
}

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn padding_replicates_end_slices() {
    let v = random_volume([3, 2, 2], 1);
    let p = pad_volume_z(&v, 2);
    assert_eq!(p.dims(), [7, 2, 2]);
    for z in 0..7 {
        let src = [0, 0, 0, 1, 2, 2, 2][z];
        assert_eq!(p.slice(volsr_core::volume::SliceAxis::XY, z), v.slice(volsr_core::volume::SliceAxis::XY, src));
    }
}

#[test]
fn embedded_2d_weights_reproduce_the_2d_pipeline() {
    let vol = random_volume([20, 32, 32], 7);
    for family in Family::ALL {
        let t0 = Instant::now();
        let net2 = build_network(&NetworkSpec::new(family, D2), 3).unwrap();
        let net25 = embed_2d_as_25d(&net2, 7).unwrap();
        assert_eq!(net25.spec().dimensionality, D25);
        let tiles = TileSpec::whole(32);
        let a = super_resolve_volume(&net2, &vol, &tiles).unwrap();
        let b = super_resolve_volume(&net25, &vol, &tiles).unwrap();
        assert_eq!(a.dims(), b.dims());
        let diff = max_diff(a.data(), b.data());
        assert!(diff <= 1e-5, "{family}: {diff}");
        eprintln!("{family}: max diff {diff:.2e} in {:.1?}", t0.elapsed());
    }
}

#[test]
fn embedding_rejects_non_planar_sources() {
    let net = build_network(&NetworkSpec::new(Family::Srcnn, D3), 0).unwrap();
    assert!(matches!(embed_2d_as_25d(&net, 7), Err(Error::Invalid(_))));
}

#[test]
fn untiled_path_matches_direct_inference() {
    for d in [D2, D25] {
        let net = build_network(&NetworkSpec::new(Family::Srcnn, d), 5).unwrap();
        let vol = random_volume([6, 24, 20], 2);
        let out = super_resolve_volume(&net, &vol, &TileSpec::whole(64)).unwrap();
        assert_eq!(out.dims(), [6, 24, 20]);
        assert!(max_diff(out.data(), &reference_planar(&net, &vol)) < 1e-6);
    }
}

#[test]
fn srcnn_tiling_is_exact_with_enough_overlap() {
    for d in [D2, D25] {
        let net = build_network(&NetworkSpec::new(Family::Srcnn, d), 11).unwrap();
        let vol = random_volume([5, 70, 83], 4);
        let reference = reference_planar(&net, &vol);
        let tiles = TileSpec {
            tile_yx: (30, 36),
            overlap_yx: (9, 9),
            z_chunk: 1,
            blend: Blend::CenterCrop,
        };
        let out = super_resolve_volume(&net, &vol, &tiles).unwrap();
        let diff = max_diff(out.data(), &reference);
        assert!(diff <= 1e-5, "{d}: {diff}");
    }
}

#[test]
fn volumetric_srcnn_tiling_is_exact() {
    let net = build_network(&NetworkSpec::new(Family::Srcnn, D3), 2).unwrap();
    let vol = random_volume([30, 34, 30], 9);
    let [d, h, w] = vol.dims();
    let whole = net
        .infer(Tensor::from_vec(Shape::new(1, 1, d, h, w), vol.data().to_vec()).unwrap())
        .unwrap();
    let tiles = TileSpec {
        tile_yx: (22, 22),
        overlap_yx: (9, 9),
        z_chunk: 20,
        blend: Blend::CenterCrop,
    };
    let out = super_resolve_volume(&net, &vol, &tiles).unwrap();
    assert!(max_diff(out.data(), whole.data()) <= 1e-5);
}

#[test]
fn learned_upsamplers_scale_the_grid_and_voxel_size() {
    let mut spec = NetworkSpec::new(Family::Edsr, D2);
    spec.edsr_blocks = 1;
    let net = build_network(&spec, 0).unwrap();
    let vol = Volume::filled([3, 12, 10], [10.0, 40.0, 40.0], 0.5).unwrap();
    let tiles = TileSpec {
        tile_yx: (8, 8),
        overlap_yx: (2, 2),
        z_chunk: 1,
        blend: Blend::LinearFeather,
    };
    let out = super_resolve_volume(&net, &vol, &tiles).unwrap();
    assert_eq!(out.dims(), [3, 48, 40]);
    assert_eq!(out.voxel_size_um(), [10.0, 10.0, 10.0]);
    assert!(out.meta().contains_key("tiles") && out.meta().contains_key("network"));

    let mut spec3 = NetworkSpec::new(Family::Esrgan, D3);
    spec3.esrgan_rrdb_blocks = 1;
    spec3.features = 8;
    spec3.esrgan_growth = 4;
    let net3 = build_network(&spec3, 0).unwrap();
    let vol3 = Volume::filled([6, 5, 7], [40.0; 3], 0.5).unwrap();
    let out3 = super_resolve_volume(&net3, &vol3, &TileSpec::default()).unwrap();
    assert_eq!(out3.dims(), [24, 20, 28]);
    assert_eq!(out3.voxel_size_um(), [10.0; 3]);
}

#[test]
fn feathering_stays_close_to_untiled_output() {
    let net = build_network(&NetworkSpec::new(Family::Srcnn, D2), 1).unwrap();
    let vol = random_volume([2, 64, 64], 3);
    let reference = reference_planar(&net, &vol);
    let tiles = TileSpec {
        tile_yx: (32, 32),
        overlap_yx: (10, 10),
        z_chunk: 1,
        blend: Blend::LinearFeather,
    };
    let out = super_resolve_volume(&net, &vol, &tiles).unwrap();
    let diff = max_diff(out.data(), &reference);
    assert!(diff < 0.05, "{diff}");
}

#[test]
fn oversized_tiles_are_clamped() {
    let net = build_network(&NetworkSpec::new(Family::Srcnn, D2), 1).unwrap();
    let vol = random_volume([2, 16, 12], 3);
    let tiles = TileSpec {
        tile_yx: (512, 512),
        overlap_yx: (9, 9),
        z_chunk: 4,
        blend: Blend::CenterCrop,
    };
    let out = super_resolve_volume(&net, &vol, &tiles).unwrap();
    assert!(max_diff(out.data(), &reference_planar(&net, &vol)) < 1e-6);
}

#[test]
fn degenerate_tiles_are_rejected() {
    let net = build_network(&NetworkSpec::new(Family::Srcnn, D2), 1).unwrap();
    let vol = random_volume([2, 16, 12], 3);
    let tiles = TileSpec {
        tile_yx: (16, 16),
        overlap_yx: (8, 8),
        z_chunk: 1,
        blend: Blend::CenterCrop,
    };
    assert!(matches!(super_resolve_volume(&net, &vol, &tiles), Err(Error::Invalid(_))));
}

#[test]
fn non_finite_output_names_the_tile() {
    let mut net = build_network(&NetworkSpec::new(Family::Srcnn, D2), 1).unwrap();
    let id = net.params().ids().last().unwrap();
    let shape = net.params().get(id).shape();
    net.params_mut().assign(id, Tensor::full(shape, f32::NAN)).unwrap();
    let vol = random_volume([1, 16, 16], 3);
    match super_resolve_volume(&net, &vol, &TileSpec::default()) {
        Err(Error::NonFiniteOutput(msg)) => assert!(msg.contains("z=0"), "{msg}"),
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn multi_slice_input_costs_little_extra_memory() {
    for family in Family::ALL {
        let s2 = NetworkSpec::new(family, D2);
        let s25 = NetworkSpec::new(family, D25);
        let patch = if family.pre_upsampled() { 128 } else { 32 };
        let a = estimate_activation_memory(&s2, [1, patch, patch], 1).unwrap();
        let b = estimate_activation_memory(&s25, [1, patch, patch], 1).unwrap();
        let rel = (b.total as f64 - a.total as f64) / a.total as f64;
        assert!((0.0..0.05).contains(&rel), "{family}: {rel}");
        assert_eq!(b.input_bytes, 7 * a.input_bytes);
        // Only the first layer's weights differ.
        assert_eq!(
            a.per_layer.iter().map(|x| x.1).sum::<u64>(),
            b.per_layer.iter().map(|x| x.1).sum::<u64>()
        );
    }
}

#[test]
fn volumetric_networks_need_an_order_more_memory() {
    for family in Family::ALL {
        let p = if family.pre_upsampled() { 128 } else { 32 };
        let a = estimate_activation_memory(&NetworkSpec::new(family, D2), [1, p, p], 1).unwrap();
        let c = estimate_activation_memory(&NetworkSpec::new(family, D3), [p, p, p], 1).unwrap();
        let ratio = c.total as f64 / a.total as f64;
        assert!(ratio >= 10.0, "{family}: {ratio}");
        assert!(c.peak_activation_bytes > a.peak_activation_bytes);
    }
}

#[test]
fn activation_memory_is_linear_in_batch() {
    let spec = NetworkSpec::new(Family::Edsr, D25);
    let one = estimate_activation_memory(&spec, [1, 24, 24], 1).unwrap();
    for b in [2, 3, 8] {
        let m = estimate_activation_memory(&spec, [1, 24, 24], b).unwrap();
        assert_eq!(m.parameters_bytes, one.parameters_bytes);
        assert_eq!(m.total - m.parameters_bytes, b as u64 * (one.total - one.parameters_bytes));
        assert_eq!(m.peak_activation_bytes, b as u64 * one.peak_activation_bytes);
    }
    assert!(estimate_activation_memory(&spec, [1, 24, 24], 0).is_err());
}

#[test]
fn srcnn_memory_matches_hand_count() {
    // 64 + 32 + 1 output maps of 128 x 128 f32, plus 57,281 weights.
    let m = estimate_activation_memory(&NetworkSpec::new(Family::Srcnn, D2), [1, 128, 128], 1).unwrap();
    assert_eq!(m.total, 4 * (97 * 128 * 128 + 57_281));
    assert_eq!(m.peak_activation_bytes, 4 * 96 * 128 * 128);
}
