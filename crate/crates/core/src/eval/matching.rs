use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::phantom::DefectRecord;
use crate::{Error, Result};

/// One row of the assignment: a true positive has both ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionMatch {
    pub truth_id: Option<usize>,
    pub detected_id: Option<usize>,
    pub overlap_voxels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinScore {
    pub lo_um: f64,
    pub hi_um: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `None` where the denominator is zero.
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

impl BinScore {
    fn new(lo_um: f64, hi_um: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        Self {
            lo_um,
            hi_um,
            tp,
            fp,
            fn_,
            recall: ratio(tp, tp + fn_),
            precision: ratio(tp, tp + fp),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    /// Has at least one true defect.
    pub fn populated(&self) -> bool {
        self.tp + self.fn_ > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedDetectionReport {
    pub bin_edges_um: Vec<f64>,
    pub per_bin: Vec<BinScore>,
    pub totals: BinScore,
    pub matches: Vec<DetectionMatch>,
}

/// `n` equal-width bins spanning the truth diameters.
pub fn default_bin_edges(truth: &[DefectRecord], n: usize) -> Vec<f64> {
    let n = n.max(1);
    let lo = truth.iter().map(|r| r.effective_diameter_um).fold(f64::INFINITY, f64::min);
    let hi = truth.iter().map(|r| r.effective_diameter_um).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = match (lo.is_finite(), hi > lo) {
        (true, true) => (lo, hi),
        (true, false) => (lo * 0.5, lo * 1.5 + 1.0),
        _ => (0.0, 1.0),
    };
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Bin holding `d`; values outside the edges go to the nearest end bin.
fn bin_of(edges: &[f64], d: f64) -> usize {
    let nb = edges.len() - 1;
    edges[1..nb].iter().take_while(|&&e| d >= e).count()
}

/// Greedy one-to-one matching by descending overlap (ties by ascending truth
/// id, then detected id), then per-bin counts. Truth and true positives are
/// binned by the truth diameter, false positives by the detected diameter.
pub fn match_and_score(detected: &[DefectRecord], truth: &[DefectRecord], bin_edges_um: &[f64]) -> Result<BinnedDetectionReport> {
    if bin_edges_um.len() < 2 || bin_edges_um.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("bin edges must be at least two strictly increasing values".into()));
    }
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (ti, t) in truth.iter().enumerate() {
        for &v in &t.voxel_set {
            if let Some(prev) = owner.insert(v, ti) {
                return Err(Error::Invalid(format!(
                    "truth defects {} and {} share voxel {v}",
                    truth[prev].id, t.id
                )));
            }
        }
    }
    let mut pairs = Vec::new();
    for (di, d) in detected.iter().enumerate() {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for v in &d.voxel_set {
            if let Some(&ti) = owner.get(v) {
                *counts.entry(ti).or_default() += 1;
            }
        }
        pairs.extend(counts.into_iter().map(|(ti, n)| (n, ti, di)));
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut truth_hit = vec![None; truth.len()];
    let mut det_hit = vec![false; detected.len()];
    let mut matches = Vec::new();
    for (n, ti, di) in pairs {
        if truth_hit[ti].is_none() && !det_hit[di] {
            truth_hit[ti] = Some(di);
            det_hit[di] = true;
            matches.push(DetectionMatch {
                truth_id: Some(truth[ti].id),
                detected_id: Some(detected[di].id),
                overlap_voxels: n,
            });
        }
    }

    let nb = bin_edges_um.len() - 1;
    let (mut tp, mut fp, mut fn_) = (vec![0; nb], vec![0; nb], vec![0; nb]);
    for (ti, t) in truth.iter().enumerate() {
        let b = bin_of(bin_edges_um, t.effective_diameter_um);
        if truth_hit[ti].is_some() {
            tp[b] += 1;
        } else {
            fn_[b] += 1;
            matches.push(DetectionMatch {
                truth_id: Some(t.id),
                detected_id: None,
                overlap_voxels: 0,
            });
        }
    }
    for (di, d) in detected.iter().enumerate() {
        if !det_hit[di] {
            fp[bin_of(bin_edges_um, d.effective_diameter_um)] += 1;
            matches.push(DetectionMatch {
                truth_id: None,
                detected_id: Some(d.id),
                overlap_voxels: 0,
            });
        }
    }
    let per_bin = (0..nb)
        .map(|b| BinScore::new(bin_edges_um[b], bin_edges_um[b + 1], tp[b], fp[b], fn_[b]))
        .collect();
    let totals = BinScore::new(
        bin_edges_um[0],
        bin_edges_um[nb],
        tp.iter().sum(),
        fp.iter().sum(),
        fn_.iter().sum(),
    );
    Ok(BinnedDetectionReport {
        bin_edges_um: bin_edges_um.to_vec(),
        per_bin,
        totals,
        matches,
    })
}
