use std::collections::BTreeMap;

use volsr_core::arch::{
    activation_plan, build_network, count_parameters, discriminator_parameter_count, first_layer_parameter_delta,
    load_checkpoint, save_checkpoint, spec_parameter_report, Dimensionality, Discriminator, Family, Network,
    NetworkSpec,
};
use volsr_nn::{Graph, Shape, Tensor};

use Dimensionality::{D2, D25, D3};

fn spec(f: Family, d: Dimensionality) -> NetworkSpec {
    NetworkSpec::new(f, d)
}

fn small(f: Family, d: Dimensionality) -> NetworkSpec {
    NetworkSpec {
        features: 4,
        srcnn_mid_features: 3,
        srcnn_kernels: [3, 3, 1],
        edsr_blocks: 2,
        esrgan_rrdb_blocks: 1,
        esrgan_growth: 2,
        ..spec(f, d)
    }
}

/// Closed-form SRCNN count: three same-padded convolutions with bias.
fn srcnn_oracle(planes: usize, taps: [usize; 3]) -> usize {
    (planes * taps[0] * 64 + 64) + (64 * taps[1] * 32 + 32) + (32 * taps[2] + 1)
}

/// Closed-form EDSR count: head, 16 two-conv blocks, body end, ×2 sub-pixel stages, tail.
fn edsr_oracle(planes: usize, taps: usize, up_stages: usize) -> usize {
    let conv = |cin: usize, cout: usize| cin * cout * taps + cout;
    conv(planes, 64) + 16 * 2 * conv(64, 64) + conv(64, 64) + up_stages * conv(64, 256) + conv(64, 1)
}

/// Closed-form ESRGAN generator count.
fn esrgan_oracle(planes: usize, taps: usize, up_stages: usize) -> usize {
    let conv = |cin: usize, cout: usize| cin * cout * taps + cout;
    let rdb: usize = (0..4).map(|i| conv(64 + 32 * i, 32)).sum::<usize>() + conv(64 + 4 * 32, 64);
    conv(planes, 64) + 23 * 3 * rdb + conv(64, 64) + up_stages * conv(64, 64) + conv(64, 64) + conv(64, 1)
}

#[test]
fn srcnn_and_edsr_counts_reproduce_the_published_table() {
    // Published trainable-parameter counts, 2D / 2.5D / 3D.
    let table = [
        (Family::Srcnn, [57_281, 88_385, 306_753]),
        (Family::Edsr, [1_515_265, 1_518_721, 3_655_169]),
    ];
    for (family, want) in table {
        for (d, w) in Dimensionality::ALL.into_iter().zip(want) {
            let net = build_network(&spec(family, d), 1).unwrap();
            let report = count_parameters(&net);
            assert_eq!(report.total, w, "{family} {d}");
            assert_eq!(report.per_layer.iter().map(|(_, n)| n).sum::<usize>(), report.total);
            assert_eq!(spec_parameter_report(&spec(family, d)).unwrap(), report);
        }
    }
}

#[test]
fn counts_agree_with_closed_form_oracles() {
    assert_eq!(srcnn_oracle(1, [81, 25, 25]), 57_281);
    assert_eq!(srcnn_oracle(7, [81, 25, 25]), 88_385);
    assert_eq!(srcnn_oracle(1, [729, 125, 125]), 306_753);
    let total = |f, d| spec_parameter_report(&spec(f, d)).unwrap().total;
    assert_eq!(total(Family::Edsr, D2), edsr_oracle(1, 9, 2));
    assert_eq!(total(Family::Edsr, D25), edsr_oracle(7, 9, 2));
    assert_eq!(total(Family::Edsr, D3), edsr_oracle(1, 27, 0));
    assert_eq!(total(Family::Esrgan, D2), esrgan_oracle(1, 9, 2));
    assert_eq!(total(Family::Esrgan, D25), esrgan_oracle(7, 9, 2));
    assert_eq!(total(Family::Esrgan, D3), esrgan_oracle(1, 27, 0));
    assert_eq!(esrgan_oracle(1, 9, 2), 16_695_681);
}

#[test]
fn esrgan_generator_is_built_with_the_expected_count() {
    let net = build_network(&spec(Family::Esrgan, D2), 3).unwrap();
    let r = count_parameters(&net);
    assert_eq!(r.total, 16_695_681);
    assert_eq!(r.per_layer.len(), 1 + 23 * 15 + 1 + 2 + 2);
    assert_eq!(r.per_layer[0], ("conv_first".to_string(), 640));
}

#[test]
fn slice_window_delta_is_six_m_n_k() {
    for (family, mnk) in [(Family::Srcnn, 9 * 9 * 64), (Family::Edsr, 3 * 3 * 64), (Family::Esrgan, 3 * 3 * 64)] {
        let (a, b) = (spec(family, D2), spec(family, D25));
        let formula = first_layer_parameter_delta(&a, &b).unwrap();
        let counted = spec_parameter_report(&b).unwrap().total as i64 - spec_parameter_report(&a).unwrap().total as i64;
        assert_eq!(formula, 6 * mnk as i64);
        assert_eq!(counted, formula, "{family}");
        let report = spec_parameter_report(&b).unwrap();
        assert_eq!(report.first_layer_delta_vs_2d, formula);
        assert_eq!(
            6 * report.kernel_m * report.kernel_n * report.first_layer_features_k,
            formula as usize
        );
    }
    // Published differences between the 2.5D and 2D columns.
    assert_eq!(88_385 - 57_281, 31_104);
    assert_eq!(1_518_721 - 1_515_265, 3_456);
    assert_eq!(31_197_386 - 31_193_930, 3_456);

    let mut five = spec(Family::Edsr, D25);
    five.in_slices = Some(5);
    assert_eq!(first_layer_parameter_delta(&spec(Family::Edsr, D2), &five).unwrap(), 4 * 576);
    let mut wider = spec(Family::Edsr, D25);
    wider.features = 32;
    assert!(first_layer_parameter_delta(&spec(Family::Edsr, D2), &wider).is_err());
    assert!(first_layer_parameter_delta(&spec(Family::Edsr, D2), &spec(Family::Srcnn, D25)).is_err());
}

#[test]
fn delta_does_not_depend_on_patch_size() {
    for family in Family::ALL {
        let a: Network<f32> = Network::build(&small(family, D2), 0).unwrap();
        let b: Network<f32> = Network::build(&small(family, D25), 0).unwrap();
        let delta = count_parameters(&b).total - count_parameters(&a).total;
        for size in [8, 12] {
            let x = Tensor::full(Shape::planar(1, 7, size, size), 0.5f32);
            assert!(b.infer(x).unwrap().all_finite());
        }
        assert_eq!(delta as i64, first_layer_parameter_delta(&small(family, D2), &small(family, D25)).unwrap());
    }
}

#[test]
fn esrgan_table_totals_are_generator_plus_discriminator() {
    let d2 = discriminator_parameter_count(false, 128);
    assert_eq!(d2, 14_498_249);
    let g = |d| spec_parameter_report(&spec(Family::Esrgan, d)).unwrap().total;
    assert_eq!(g(D2) + d2, 31_193_930);
    assert_eq!(g(D25) + d2, 31_197_386);
    let built: Discriminator<f32> = Discriminator::build(false, 128, 0).unwrap();
    assert_eq!(built.params().numel(), d2);
    let d3 = discriminator_parameter_count(true, 128);
    println!("esrgan 3d: generator {} + discriminator {} = {}", g(D3), d3, g(D3) + d3);
}

#[test]
fn output_shapes_follow_the_contracts() {
    let srcnn = build_network(&small(Family::Srcnn, D25), 0).unwrap();
    let y = srcnn.infer(Tensor::full(Shape::planar(1, 7, 128, 128), 0.3)).unwrap();
    assert_eq!(y.shape(), Shape::planar(1, 1, 128, 128));

    let edsr = build_network(&small(Family::Edsr, D2), 0).unwrap();
    let y = edsr.infer(Tensor::full(Shape::planar(1, 1, 32, 32), 0.3)).unwrap();
    assert_eq!(y.shape(), Shape::planar(1, 1, 128, 128));

    let mut thin = small(Family::Edsr, D3);
    thin.features = 2;
    thin.edsr_blocks = 1;
    let edsr3 = build_network(&thin, 0).unwrap();
    let y = edsr3.infer(Tensor::full(Shape::new(1, 1, 32, 32, 32), 0.3)).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 128, 128, 128));

    let esr = build_network(&small(Family::Esrgan, D25), 0).unwrap();
    let y = esr.infer(Tensor::full(Shape::planar(2, 7, 6, 5), 0.3)).unwrap();
    assert_eq!(y.shape(), Shape::planar(2, 1, 24, 20));

    for family in Family::ALL {
        for d in Dimensionality::ALL {
            let s = small(family, d);
            let net = build_network(&s, 0).unwrap();
            let input = if d == D3 { Shape::new(1, 1, 3, 4, 5) } else { Shape::planar(1, s.slices(), 4, 5) };
            let y = net.infer(Tensor::full(input, 0.1)).unwrap();
            let [od, oh, ow] = s.output_extent([input.d, input.h, input.w]);
            assert_eq!(y.shape(), Shape::new(1, 1, od, oh, ow), "{family} {d}");
        }
    }
}

#[test]
fn wrong_input_is_rejected_with_both_shapes() {
    let net = build_network(&small(Family::Edsr, D25), 0).unwrap();
    let err = net.infer(Tensor::zeros(Shape::planar(1, 1, 8, 8))).unwrap_err().to_string();
    assert!(err.contains("(n, 7, 1, h, w)") && err.contains("(1, 1, 1, 8, 8)"), "{err}");
    let net3 = build_network(&small(Family::Edsr, D3), 0).unwrap();
    assert!(net3.infer(Tensor::zeros(Shape::planar(1, 7, 8, 8))).is_err());
}

#[test]
fn zero_weights_give_final_bias() {
    let mut net = build_network(&small(Family::Srcnn, D2), 4).unwrap();
    let ids: Vec<_> = net.params().ids().collect();
    for id in ids {
        let s = net.params().get(id).shape();
        let name = net.params().name(id).to_string();
        let v = if name == "conv3.bias" { 0.25 } else { 0.0 };
        net.params_mut().assign(id, Tensor::full(s, v)).unwrap();
    }
    let y = net.infer(Tensor::from_fn(Shape::planar(1, 1, 6, 6), |i| i[4] as f32)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.25));
}

#[test]
fn batches_and_determinism() {
    let net = build_network(&small(Family::Esrgan, D2), 9).unwrap();
    let a = Tensor::from_fn(Shape::planar(1, 1, 5, 5), |i| (i[3] * 5 + i[4]) as f32 / 25.0);
    let b = Tensor::from_fn(Shape::planar(1, 1, 5, 5), |i| ((i[3] + 2 * i[4]) % 7) as f32 / 7.0);
    let both = Tensor::stack_batch(&[&a, &b]).unwrap();
    let ya = net.infer(a.clone()).unwrap();
    let yb = net.infer(b).unwrap();
    let y = net.infer(both).unwrap();
    assert_eq!(y.shape().n, 2);
    assert!(Tensor::from_vec(ya.shape(), y.item(0).to_vec()).unwrap().max_abs_diff(&ya).unwrap() < 1e-6);
    assert!(Tensor::from_vec(yb.shape(), y.item(1).to_vec()).unwrap().max_abs_diff(&yb).unwrap() < 1e-6);
    assert_eq!(net.infer(a.clone()).unwrap(), ya);
    let again = build_network(&small(Family::Esrgan, D2), 9).unwrap();
    assert_eq!(again.infer(a).unwrap(), ya);
}

#[test]
fn traced_forward_matches_analytic_activation_plan() {
    for family in Family::ALL {
        for d in Dimensionality::ALL {
            let s = small(family, d);
            let net = build_network(&s, 0).unwrap();
            let (input, extent) = if d == D3 {
                (Shape::new(2, 1, 3, 4, 5), [3, 4, 5])
            } else {
                (Shape::planar(2, s.slices(), 4, 5), [1, 4, 5])
            };
            let g = Graph::inference(net.params());
            let x = g.constant(Tensor::full(input, 0.2));
            let mut trace = Vec::new();
            net.forward_traced(&g, &x, &mut trace).unwrap();
            let plan = activation_plan(&s, extent);
            let traced: Vec<_> = trace.iter().map(|(n, sh)| (n.clone(), sh.c, [sh.d, sh.h, sh.w])).collect();
            let planned: Vec<_> = plan.iter().map(|p| (p.name.clone(), p.channels, p.extent)).collect();
            assert_eq!(traced, planned, "{family} {d}");
            assert!(trace.iter().all(|(_, sh)| sh.n == 2));
        }
    }
}

#[test]
fn discriminator_scores_batches() {
    let disc: Discriminator<f32> = Discriminator::build(false, 32, 1).unwrap();
    let g = Graph::inference(disc.params());
    let x = g.constant(Tensor::from_fn(Shape::planar(3, 1, 32, 32), |i| ((i[0] + i[3] * i[4]) % 5) as f32 / 5.0));
    let y = disc.forward(&g, &x).unwrap();
    assert_eq!(y.shape(), Shape::new(3, 1, 1, 1, 1));
    assert!(y.value().all_finite());
    assert!(disc.forward(&g, &g.constant(Tensor::zeros(Shape::planar(1, 1, 64, 64)))).is_err());
    assert!(Discriminator::<f32>::build(false, 48, 1).is_err());
    let d3: Discriminator<f32> = Discriminator::build(true, 32, 1).unwrap();
    assert_eq!(d3.params().numel(), discriminator_parameter_count(true, 32));
}

#[test]
fn checkpoint_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let net = build_network(&small(Family::Edsr, D25), 5).unwrap();
    let mut meta = BTreeMap::new();
    meta.insert("step".to_string(), serde_json::json!(12));
    save_checkpoint(&path, &net, &meta).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.meta, meta);
    assert_eq!(back.network.spec(), net.spec());
    for id in net.params().ids() {
        assert_eq!(back.network.params().get(id), net.params().get(id));
    }
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(&path).is_err());

    // A header whose spec disagrees with the stored tensor table.
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let swapped = text.replacen("\"edsr_blocks\":2", "\"edsr_blocks\":3", 1);
    assert_ne!(swapped, text);
    std::fs::write(&path, swapped.as_bytes()).unwrap();
    assert!(load_checkpoint(&path).is_err());
}
