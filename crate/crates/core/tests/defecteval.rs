use proptest::prelude::*;

use volsr_core::eval::{
    default_bin_edges, match_and_score, plot_detection, plot_psnr_bars, psnr, segment_defects, slice_psnr_stats,
    write_detection_csv, write_psnr_csv, PsnrBar, Threshold,
};
use volsr_core::phantom::{generate_phantom, random_pores, DefectRecord, PartShape, PhantomSpec, PorePopulation};
use volsr_core::volume::{SliceAxis, Volume};

const VS: f64 = 17.28;

fn rec(id: usize, voxels: Vec<usize>) -> DefectRecord {
    DefectRecord::from_voxels(id, voxels, [1, 1, 100_000], VS.powi(3))
}

#[test]
fn psnr_closed_forms() {
    let a = vec![0.0f32; 25];
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    // 16 of 25 entries off by 1/8: MSE = 16 / 64 / 25 = 0.01.
    let b: Vec<f32> = (0..25).map(|i| if i < 16 { 0.125 } else { 0.0 }).collect();
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    let ones = vec![1.0f32; 25];
    assert!((psnr(&a, &ones, 1.0).unwrap() - 0.0).abs() < 1e-12);
    assert!(psnr(&a, &ones[..3], 1.0).is_err());
    assert!(psnr(&a, &ones, 0.0).is_err());
}

proptest! {
    #[test]
    fn psnr_is_symmetric_and_permutation_invariant(
        pairs in proptest::collection::vec((0.0f32..1.0, 0.0f32..1.0), 2..40),
        rot in 0usize..40,
    ) {
        let (a, b): (Vec<f32>, Vec<f32>) = pairs.iter().cloned().unzip();
        let p = psnr(&a, &b, 1.0).unwrap();
        prop_assert_eq!(p, psnr(&b, &a, 1.0).unwrap());
        let k = rot % a.len();
        let (mut ra, mut rb) = (a.clone(), b.clone());
        ra.rotate_left(k);
        rb.rotate_left(k);
        let q = psnr(&ra, &rb, 1.0).unwrap();
        prop_assert!((p - q).abs() <= 1e-9 * p.abs().max(1.0) || (p.is_infinite() && q.is_infinite()));
    }
}

#[test]
fn uniform_offset_gives_twenty_db_on_every_slice() {
    let r = Volume::filled([5, 6, 7], [VS; 3], 0.25).unwrap();
    let v = Volume::filled([5, 6, 7], [VS; 3], 0.35).unwrap();
    for axis in SliceAxis::ALL {
        let s = slice_psnr_stats(&v, &r, axis, 1.0).unwrap();
        assert_eq!(s.per_slice_db.len(), v.slice_layout(axis).0);
        assert!(s.per_slice_db.iter().all(|p| (p - 20.0).abs() < 1e-5));
        assert!((s.mean_db.unwrap() - 20.0).abs() < 1e-5);
        assert!(s.std_db.unwrap() < 1e-9);
    }
    assert_eq!(slice_psnr_stats(&v, &r, SliceAxis::XY, 1.0).unwrap().per_slice_db.len(), 5);
    let same = slice_psnr_stats(&r, &r, SliceAxis::XZ, 1.0).unwrap();
    assert!(same.degenerate() && same.per_slice_db.iter().all(|p| p.is_infinite()));
}

#[test]
fn slice_mean_matches_direct_per_slice_evaluation() {
    let mut state = 12345u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 40) as f32 / (1u64 << 24) as f32
    };
    let dims = [6, 5, 9];
    let a = Volume::from_fn(dims, [VS; 3], |_, _, _| next()).unwrap();
    let b = Volume::from_fn(dims, [VS; 3], |_, _, _| next()).unwrap();
    let stats = slice_psnr_stats(&a, &b, SliceAxis::XZ, 1.0).unwrap();
    // XZ slice y = i holds every (z, x) at that y.
    let mut direct = Vec::new();
    for y in 0..dims[1] {
        let (mut sa, mut sb) = (Vec::new(), Vec::new());
        for z in 0..dims[0] {
            for x in 0..dims[2] {
                sa.push(a.get(z, y, x));
                sb.push(b.get(z, y, x));
            }
        }
        direct.push(psnr(&sa, &sb, 1.0).unwrap());
    }
    let mean = direct.iter().sum::<f64>() / direct.len() as f64;
    assert!((stats.mean_db.unwrap() - mean).abs() < 1e-12);
    assert_eq!(stats.per_slice_db, direct);
}

fn mask_all(v: &Volume) -> Vec<bool> {
    vec![true; v.len()]
}

#[test]
fn segmentation_cases() {
    let bright = Volume::filled([6, 6, 6], [VS; 3], 0.9).unwrap();
    let t = Threshold::Midpoint { background: 0.0, material: 1.0 };
    assert!(segment_defects(&bright, t, &mask_all(&bright)).unwrap().records.is_empty());
    assert!(segment_defects(&bright, t, &vec![false; bright.len()]).is_err());

    let cube = Volume::from_fn([6, 6, 6], [VS; 3], |z, y, x| {
        if (2..4).contains(&z) && (2..4).contains(&y) && (2..4).contains(&x) { 0.0 } else { 1.0 }
    })
    .unwrap();
    let s = segment_defects(&cube, t, &mask_all(&cube)).unwrap();
    assert_eq!(s.records.len(), 1);
    assert_eq!(s.records[0].voxel_count, 8);
    assert!((s.records[0].effective_diameter_um - 42.88).abs() < 0.01);
    assert_eq!(s.records[0].center_vox, [2.5, 2.5, 2.5]);

    let corners = Volume::from_fn([4, 4, 4], [VS; 3], |z, y, x| {
        if (z, y, x) == (1, 1, 1) || (z, y, x) == (2, 2, 2) { 0.0 } else { 1.0 }
    })
    .unwrap();
    let s = segment_defects(&corners, Threshold::Fixed { value: 0.5 }, &mask_all(&corners)).unwrap();
    assert_eq!(s.records.len(), 1);
    assert_eq!(s.records[0].voxel_count, 2);
    let s = segment_defects(&corners, Threshold::Otsu, &mask_all(&corners)).unwrap();
    assert_eq!(s.records.len(), 1);
    assert!(s.threshold > 0.0 && s.threshold <= 1.0);
}

#[test]
fn segmentation_recovers_phantom_ground_truth() {
    let mut spec = PhantomSpec::new([32, 80, 80], PartShape::Block, 7);
    spec.defects = random_pores(&spec, &PorePopulation { count: 30, ..Default::default() }, 7).unwrap();
    let (v, truth) = generate_phantom(&spec).unwrap();
    let seg = segment_defects(
        &v,
        Threshold::Midpoint { background: spec.background_intensity, material: spec.material_intensity },
        &spec.interior_mask(1.0),
    )
    .unwrap();
    let mut got: Vec<_> = seg.records.iter().map(|r| r.voxel_set.clone()).collect();
    let mut want: Vec<_> = truth.iter().map(|r| r.voxel_set.clone()).collect();
    got.sort();
    want.sort();
    assert_eq!(got, want);
    for r in &seg.records {
        assert!(r.voxel_set.iter().all(|&i| seg.labels[i] as usize == r.id + 1));
    }
}

#[test]
fn perfect_and_partial_detection() {
    let truth = vec![rec(0, vec![0, 1, 2]), rec(1, vec![10, 11]), rec(2, (20..40).collect())];
    let edges = default_bin_edges(&truth, 6);
    let r = match_and_score(&truth, &truth, &edges).unwrap();
    for b in r.per_bin.iter().filter(|b| b.populated()) {
        assert_eq!((b.recall, b.precision, b.f1), (Some(1.0), Some(1.0), Some(1.0)));
    }
    let det = vec![rec(0, vec![1, 2, 3]), rec(1, vec![25, 26])];
    let r = match_and_score(&det, &truth, &edges).unwrap();
    assert_eq!((r.totals.tp, r.totals.fp, r.totals.fn_), (2, 0, 1));
    assert!((r.totals.recall.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.totals.precision, Some(1.0));
    assert!((r.totals.f1.unwrap() - 0.8).abs() < 1e-12);

    // A bin with truth but no detections reports recall 0 and no precision.
    let r = match_and_score(&[], &truth, &edges).unwrap();
    let first = r.per_bin.iter().find(|b| b.populated()).unwrap();
    assert_eq!((first.recall, first.precision, first.f1), (Some(0.0), None, Some(0.0)));
    let overlapping = vec![rec(0, vec![0, 1]), rec(1, vec![1, 2])];
    assert!(match_and_score(&det, &overlapping, &edges).is_err());
}

/// Exhaustive search over every one-to-one assignment of positive-overlap
/// pairs, keeping the one whose overlaps, sorted descending, are
/// lexicographically largest.
fn brute_force_matches(overlap: &[Vec<usize>]) -> Vec<(usize, usize)> {
    fn go(t: usize, overlap: &[Vec<usize>], used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, best: &mut (Vec<usize>, Vec<(usize, usize)>)) {
        if t == overlap.len() {
            let mut key: Vec<usize> = cur.iter().map(|&(t, d)| overlap[t][d]).collect();
            key.sort_by(|a, b| b.cmp(a));
            if key > best.0 {
                *best = (key, cur.clone());
            }
            return;
        }
        go(t + 1, overlap, used, cur, best);
        for d in 0..used.len() {
            if !used[d] && overlap[t][d] > 0 {
                used[d] = true;
                cur.push((t, d));
                go(t + 1, overlap, used, cur, best);
                cur.pop();
                used[d] = false;
            }
        }
    }
    let nd = overlap.first().map_or(0, Vec::len);
    let mut best = (Vec::new(), Vec::new());
    go(0, overlap, &mut vec![false; nd], &mut Vec::new(), &mut best);
    let mut m = best.1;
    m.sort();
    m
}

fn instance() -> impl Strategy<Value = (Vec<DefectRecord>, Vec<DefectRecord>, Vec<Vec<usize>>)> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(nt, nd)| {
        proptest::collection::vec(proptest::collection::vec(0usize..6, nt), nd).prop_map(move |take| {
            // Truth t owns voxels [100 t, 100 t + 50); detection d takes
            // `take[d][t]` of them plus one private voxel.
            let truth: Vec<_> = (0..nt).map(|t| rec(t, (100 * t..100 * t + 50).collect())).collect();
            let mut used = vec![0usize; nt];
            let det: Vec<_> = take
                .iter()
                .enumerate()
                .map(|(d, row)| {
                    let mut v = vec![10_000 + d];
                    for (t, &k) in row.iter().enumerate() {
                        v.extend(100 * t + used[t]..100 * t + used[t] + k);
                        used[t] += k;
                    }
                    rec(d, v)
                })
                .collect();
            let overlap = (0..nt).map(|t| (0..nd).map(|d| take[d][t]).collect()).collect();
            (truth, det, overlap)
        })
    })
}

proptest! {
    #[test]
    fn greedy_matches_exhaustive_assignment((truth, det, overlap) in instance()) {
        let positive: Vec<usize> = overlap.iter().flatten().copied().filter(|&o| o > 0).collect();
        let mut uniq = positive.clone();
        uniq.sort();
        uniq.dedup();
        prop_assume!(uniq.len() == positive.len());
        let r = match_and_score(&det, &truth, &[0.0, 1e9]).unwrap();
        let mut greedy: Vec<(usize, usize)> = r
            .matches
            .iter()
            .filter_map(|m| Some((m.truth_id?, m.detected_id?)))
            .collect();
        greedy.sort();
        prop_assert_eq!(greedy, brute_force_matches(&overlap));
    }

    #[test]
    fn removing_a_detection_is_monotone((truth, det, _o) in instance(), drop in 0usize..5) {
        let edges = [0.0, 50.0, 80.0, 1e9];
        let full = match_and_score(&det, &truth, &edges).unwrap();
        let k = drop % det.len();
        let mut fewer = det.clone();
        fewer.remove(k);
        let less = match_and_score(&fewer, &truth, &edges).unwrap();
        prop_assert!(less.totals.fp <= full.totals.fp);
        prop_assert!(less.totals.tp <= full.totals.tp);
        for (r, n_det) in [(&full, det.len()), (&less, fewer.len())] {
            let tp: usize = r.per_bin.iter().map(|b| b.tp).sum();
            let fp: usize = r.per_bin.iter().map(|b| b.fp).sum();
            let fn_: usize = r.per_bin.iter().map(|b| b.fn_).sum();
            prop_assert_eq!(tp + fn_, truth.len());
            prop_assert_eq!(tp + fp, n_det);
        }
    }
}

#[test]
fn csv_and_plots_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let truth = vec![rec(0, vec![0, 1, 2]), rec(1, (10..30).collect())];
    let r = match_and_score(&truth[..1], &truth, &default_bin_edges(&truth, 3)).unwrap();
    let reports = vec![("a".to_string(), r.clone()), ("b".to_string(), r)];
    write_detection_csv(&dir.path().join("d.csv"), &reports).unwrap();
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 4);
    assert!(text.lines().nth(4).unwrap().starts_with("a,all,"));
    plot_detection(&dir.path().join("d.png"), &reports).unwrap();
    let bars = vec![PsnrBar { label: "x".into(), axis: SliceAxis::XZ, mean_db: 30.0, std_db: 1.5 }];
    write_psnr_csv(&dir.path().join("p.csv"), &bars).unwrap();
    plot_psnr_bars(&dir.path().join("p.png"), &bars).unwrap();
    assert!(std::fs::metadata(dir.path().join("p.png")).unwrap().len() > 0);
}
