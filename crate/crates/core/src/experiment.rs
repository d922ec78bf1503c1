//! Side-by-side comparison of planar and multi-slice networks on one held-out
//! part: XZ-slice PSNR and size-binned detection scores, with a cubic
//! interpolation baseline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{prepare_input, Dimensionality, Family, Network, NetworkSpec};
use crate::error::{io_err, json_err};
use crate::eval::{default_bin_edges, match_and_score, segment_defects, slice_psnr_stats, BinnedDetectionReport, Threshold};
use crate::phantom::{
    make_dataset, DatasetConfig, DefectRecord, DegradationMode, DegradationSpec, Manifest, PartShape, PhantomTemplate,
    Split, MANIFEST_FILE,
};
use crate::slidewin::{super_resolve_volume, TileSpec};
use crate::train::{train, LrSchedule, TrainConfig};
use crate::volume::{normalize_pair, upsample_all, Interp, SliceAxis, Volume};
use crate::{seeds, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Applied to intensities normalized so background is 0 and material 1.
    pub threshold: Threshold,
    /// Voxels closer than this to the part surface are ignored. After binning
    /// the surface is smeared over about one low-resolution voxel and dips
    /// under the threshold there, so this should be at least the bin factor.
    pub mask_erosion: f64,
    pub n_bins: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            threshold: Threshold::Midpoint {
                background: 0.0,
                material: 1.0,
            },
            mask_erosion: 4.0,
            n_bins: 4,
        }
    }
}

/// Per-family departures from the shared training settings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOverride {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub hr_patch: Option<usize>,
    pub patch_stride: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub families: Vec<Family>,
    pub modes: Vec<Dimensionality>,
    /// Number of training seeds; seed `k` is shared by every model.
    pub n_seeds: usize,
    pub train: TrainConfig,
    #[serde(default)]
    pub family_train: BTreeMap<Family, TrainOverride>,
    pub tiles: TileSpec,
    pub eval: EvalSettings,
}

impl ComparisonConfig {
    /// Two 64 x 256 x 256 training parts, one held-out part, 4x isotropic
    /// degradation, SRCNN and EDSR in 2D and 2.5D, three seeds of 5,000 steps.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            seed,
            dataset: DatasetConfig {
                seed,
                n_train_parts: 2,
                n_test_parts: 1,
                phantom: PhantomTemplate::new([64, 256, 256], PartShape::Cylinder),
                degradation: DegradationSpec {
                    mode: DegradationMode::Isotropic,
                    ..DegradationSpec::default()
                },
            },
            families: vec![Family::Srcnn, Family::Edsr],
            modes: vec![Dimensionality::D2, Dimensionality::D25],
            n_seeds: 3,
            train: TrainConfig {
                batch_size: 8,
                steps: 5000,
                learning_rate: 1e-3,
                lr_schedule: LrSchedule::Cosine,
                hr_patch: 32,
                patch_stride: 32,
                validation_fraction: 0.05,
                validate_every: 1000,
                ..TrainConfig::default()
            },
            // EDSR diverges at 1e-3. Its receptive field also dwarfs an 8x8
            // low-resolution patch, so it gets 16x16 at half the batch.
            family_train: BTreeMap::from([(
                Family::Edsr,
                TrainOverride {
                    learning_rate: Some(1e-4),
                    batch_size: Some(4),
                    hr_patch: Some(64),
                    patch_stride: Some(64),
                },
            )]),
            tiles: TileSpec::default(),
            eval: EvalSettings {
                mask_erosion: DegradationSpec::default().bin_factor as f64,
                ..EvalSettings::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 || self.families.is_empty() || self.modes.is_empty() {
            return Err(Error::Invalid("comparison needs at least one family, mode and seed".into()));
        }
        if self.dataset.n_train_parts == 0 || self.dataset.n_test_parts == 0 {
            return Err(Error::Invalid("comparison needs training and held-out parts".into()));
        }
        for &f in &self.families {
            self.train_config(f, 0).validate(f)?;
            for &m in &self.modes {
                self.spec(f, m).validate()?;
            }
        }
        Ok(())
    }

    pub fn spec(&self, family: Family, mode: Dimensionality) -> NetworkSpec {
        NetworkSpec {
            scale: self.dataset.degradation.bin_factor,
            ..NetworkSpec::new(family, mode)
        }
    }

    pub fn train_seed(&self, k: usize) -> u64 {
        seeds::derive(self.seed, &format!("run/{k}"))
    }

    /// Training settings for `family` under seed index `k`.
    pub fn train_config(&self, family: Family, k: usize) -> TrainConfig {
        let o = self.family_train.get(&family).copied().unwrap_or_default();
        let t = &self.train;
        TrainConfig {
            seed: self.train_seed(k),
            learning_rate: o.learning_rate.unwrap_or(t.learning_rate),
            batch_size: o.batch_size.unwrap_or(t.batch_size),
            hr_patch: o.hr_patch.unwrap_or(t.hr_patch),
            patch_stride: o.patch_stride.unwrap_or(t.patch_stride),
            ..t.clone()
        }
    }
}

/// SHA-256 of a value's JSON form.
pub fn config_hash(value: &impl Serialize) -> String {
    seeds::sha256_hex(&serde_json::to_vec(value).expect("config serializes"))
}

/// Scores of one reconstruction of the held-out part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub label: String,
    pub family: Option<Family>,
    pub mode: Option<Dimensionality>,
    pub seed_index: Option<usize>,
    pub xz_psnr_mean_db: f64,
    pub xz_psnr_median_db: f64,
    pub xz_psnr_std_db: f64,
    pub detection: BinnedDetectionReport,
    /// F1 in the smallest-diameter bin that holds any true defect.
    pub smallest_bin_f1: Option<f64>,
    /// Hash of the settings this result depends on.
    pub config_hash: String,
}

/// Held-out part with everything needed for scoring.
pub struct TestPart {
    pub lr: Volume,
    pub hr: Volume,
    pub truth: Vec<DefectRecord>,
    pub mask: Vec<bool>,
    pub bin_edges: Vec<f64>,
}

pub fn load_test_part(manifest: &Manifest, settings: &EvalSettings) -> Result<TestPart> {
    let entry = manifest
        .split(Split::Test)
        .next()
        .ok_or_else(|| Error::Invalid("manifest has no held-out part".into()))?;
    let (lr, hr) = manifest.load_pair(entry)?;
    let (lr, hr, _) = normalize_pair(&lr, &hr)?;
    let truth = manifest.load_defects(entry)?;
    let mask = entry.phantom.interior_mask(settings.mask_erosion);
    let bin_edges = default_bin_edges(&truth, settings.n_bins);
    Ok(TestPart {
        lr,
        hr,
        truth,
        mask,
        bin_edges,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return f64::INFINITY;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Score a reconstruction on the high-resolution grid.
pub fn score_volume(sr: &Volume, part: &TestPart, settings: &EvalSettings, label: &str, hash: &str) -> Result<ModelResult> {
    let stats = slice_psnr_stats(sr, &part.hr, SliceAxis::XZ, 1.0)?;
    let seg = segment_defects(sr, settings.threshold, &part.mask)?;
    let detection = match_and_score(&seg.records, &part.truth, &part.bin_edges)?;
    let smallest_bin_f1 = detection.per_bin.iter().find(|b| b.populated()).and_then(|b| b.f1);
    Ok(ModelResult {
        label: label.to_string(),
        family: None,
        mode: None,
        seed_index: None,
        xz_psnr_mean_db: stats.mean_db.unwrap_or(f64::INFINITY),
        xz_psnr_median_db: median(&stats.per_slice_db),
        xz_psnr_std_db: stats.std_db.unwrap_or(0.0),
        detection,
        smallest_bin_f1,
        config_hash: hash.to_string(),
    })
}

/// Super-resolve a normalized low-resolution volume onto the high-resolution grid.
pub fn super_resolve_part(net: &Network<f32>, lr: &Volume, tiles: &TileSpec) -> Result<Volume> {
    super_resolve_volume(net, &prepare_input(lr, net.spec())?, tiles)
}

/// Per-family outcome of the 2.5D versus 2D comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub family: Family,
    pub n_seeds: usize,
    /// Seeds where 2.5D has the higher mean XZ-slice PSNR.
    pub psnr_wins_25d: usize,
    /// Seeds where 2.5D has at least the 2D F1 in the smallest populated bin.
    pub f1_wins_25d: usize,
    pub median_psnr_2d_db: f64,
    pub median_psnr_25d_db: f64,
    pub cubic_psnr_db: f64,
}

impl TrendCheck {
    pub fn majority(&self, wins: usize) -> bool {
        2 * wins > self.n_seeds
    }

    pub fn psnr_trend_holds(&self) -> bool {
        self.majority(self.psnr_wins_25d)
    }

    pub fn f1_trend_holds(&self) -> bool {
        self.majority(self.f1_wins_25d)
    }

    /// Both dimensionalities beat cubic interpolation by `margin_db`.
    pub fn beats_cubic(&self, margin_db: f64) -> bool {
        self.median_psnr_2d_db >= self.cubic_psnr_db + margin_db && self.median_psnr_25d_db >= self.cubic_psnr_db + margin_db
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub cubic: ModelResult,
    pub runs: Vec<ModelResult>,
    pub trends: Vec<TrendCheck>,
}

impl ComparisonReport {
    pub fn run(&self, family: Family, mode: Dimensionality, seed_index: usize) -> Option<&ModelResult> {
        self.runs
            .iter()
            .find(|r| r.family == Some(family) && r.mode == Some(mode) && r.seed_index == Some(seed_index))
    }
}

fn read_cached(path: &Path, hash: &str) -> Option<ModelResult> {
    let text = fs::read_to_string(path).ok()?;
    let r: ModelResult = serde_json::from_str(&text).ok()?;
    (r.config_hash == hash).then_some(r)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    fs::write(path, text).map_err(io_err(path))
}

/// Reuse the dataset under `dir` when it was generated from `cfg`.
pub fn ensure_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<Manifest> {
    if let Ok(m) = Manifest::load(&dir.join(MANIFEST_FILE)) {
        if &m.config == cfg {
            return Ok(m);
        }
    }
    make_dataset(cfg, dir, true)
}

/// Run every model and seed, reusing finished runs under `out_dir`.
pub fn run_comparison(cfg: &ComparisonConfig, out_dir: &Path, mut progress: impl FnMut(&str)) -> Result<ComparisonReport> {
    cfg.validate()?;
    let hash = config_hash(cfg);
    let manifest = ensure_dataset(&cfg.dataset, &out_dir.join("data"))?;
    let part = load_test_part(&manifest, &cfg.eval)?;
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(io_err(&runs_dir))?;

    let cubic_path = runs_dir.join("cubic.json");
    // Each result is keyed by the settings it depends on alone, so editing
    // one family's training leaves the others cached.
    let cubic_hash = config_hash(&(&cfg.dataset, &cfg.eval));
    let cubic = match read_cached(&cubic_path, &cubic_hash) {
        Some(r) => r,
        None => {
            let up = upsample_all(&part.lr, cfg.dataset.degradation.bin_factor, Interp::Cubic)?;
            let r = score_volume(&up, &part, &cfg.eval, "cubic", &cubic_hash)?;
            write_json(&cubic_path, &r)?;
            r
        }
    };
    progress(&format!("cubic: XZ PSNR {:.2} dB", cubic.xz_psnr_mean_db));

    let mut runs = Vec::new();
    for k in 0..cfg.n_seeds {
        for &family in &cfg.families {
            for &mode in &cfg.modes {
                let label = format!("{family}-{mode}-seed{k}");
                let dir = runs_dir.join(&label);
                let result_path = dir.join("result.json");
                let spec = cfg.spec(family, mode);
                let tcfg = cfg.train_config(family, k);
                let run_hash = config_hash(&(&cfg.dataset, &spec, &tcfg, &cfg.tiles, &cfg.eval));
                let result = match read_cached(&result_path, &run_hash) {
                    Some(r) => r,
                    None => {
                        let outcome = train(&spec, &manifest, &tcfg, &dir)?;
                        let sr = super_resolve_part(&outcome.network, &part.lr, &cfg.tiles)?;
                        let mut r = score_volume(&sr, &part, &cfg.eval, &label, &run_hash)?;
                        r.family = Some(family);
                        r.mode = Some(mode);
                        r.seed_index = Some(k);
                        write_json(&result_path, &r)?;
                        r
                    }
                };
                progress(&format!(
                    "{label}: XZ PSNR {:.2} dB, smallest-bin F1 {}",
                    result.xz_psnr_mean_db,
                    result.smallest_bin_f1.map_or("n/a".into(), |f| format!("{f:.3}"))
                ));
                runs.push(result);
            }
        }
    }

    let mut report = ComparisonReport {
        config_hash: hash,
        cubic,
        runs,
        trends: Vec::new(),
    };
    if cfg.modes.contains(&Dimensionality::D2) && cfg.modes.contains(&Dimensionality::D25) {
        for &family in &cfg.families {
            let pick = |m, k| report.run(family, m, k).expect("every run recorded");
            let (mut pw, mut fw) = (0, 0);
            let (mut p2, mut p25) = (Vec::new(), Vec::new());
            for k in 0..cfg.n_seeds {
                let (a, b) = (pick(Dimensionality::D2, k), pick(Dimensionality::D25, k));
                pw += usize::from(b.xz_psnr_mean_db > a.xz_psnr_mean_db);
                fw += usize::from(b.smallest_bin_f1.unwrap_or(0.0) >= a.smallest_bin_f1.unwrap_or(0.0));
                p2.push(a.xz_psnr_mean_db);
                p25.push(b.xz_psnr_mean_db);
            }
            report.trends.push(TrendCheck {
                family,
                n_seeds: cfg.n_seeds,
                psnr_wins_25d: pw,
                f1_wins_25d: fw,
                median_psnr_2d_db: median(&p2),
                median_psnr_25d_db: median(&p25),
                cubic_psnr_db: report.cubic.xz_psnr_mean_db,
            });
        }
    }
    write_json(&out_dir.join("comparison.json"), &report)?;
    Ok(report)
}

/// Where [`run_comparison`] keeps the run for `label`.
pub fn run_dir(out_dir: &Path, label: &str) -> PathBuf {
    out_dir.join("runs").join(label)
}
