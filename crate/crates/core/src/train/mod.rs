//! Losses and the training loop for every network family.

mod losses;
mod perceptual;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;
use volsr_nn::{Adam, AdamConfig, Graph, Shape, Tensor};

use crate::arch::{prepare_input, save_checkpoint, Discriminator, Family, Network, NetworkSpec};
use crate::error::io_err;
use crate::phantom::{Manifest, Split};
use crate::volume::{extract_training_windows, normalize_pair, ExtractConfig, Grid, PatchPair};
use crate::{seeds, Error, Result};

pub use losses::{pixel_loss, pixel_loss_grad, ragan_losses, ragan_terms, PixelLoss, RaganTerms};
pub use perceptual::{perceptual_loss, perceptual_loss_grad, ExtractorKind, FeatureExtractor, FeatureExtractorSpec};

pub const HISTORY_FILE: &str = "history.csv";
pub const MODEL_FILE: &str = "model.volsr";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl LossWeights {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Esrgan => Self {
                pixel: 1e-2,
                perceptual: 1.0,
                adversarial: 5e-3,
            },
            _ => Self {
                pixel: 1.0,
                perceptual: 0.0,
                adversarial: 0.0,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to zero at the last step.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Defaults per family when absent.
    pub loss_weights: Option<LossWeights>,
    /// L2 for SRCNN, L1 otherwise, when absent.
    pub pixel_loss: Option<PixelLoss>,
    pub optimizer: OptimizerConfig,
    /// 0 keeps only the initial and final checkpoints.
    pub checkpoint_every: usize,
    pub validation_fraction: f64,
    /// Steps between validation passes; 0 validates only at the end.
    pub validate_every: usize,
    pub hr_patch: usize,
    pub patch_stride: usize,
    /// Random subset of the extracted patches, if set.
    pub max_patches: Option<usize>,
    /// Leading share of steps trained on the pixel loss alone (adversarial runs).
    pub warm_start_fraction: f64,
    pub extractor: FeatureExtractorSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            steps: 1000,
            learning_rate: AdamConfig::default().lr,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            loss_weights: None,
            pixel_loss: None,
            optimizer: OptimizerConfig::default(),
            checkpoint_every: 0,
            validation_fraction: 0.1,
            validate_every: 0,
            hr_patch: 128,
            patch_stride: 64,
            max_patches: None,
            warm_start_fraction: 0.2,
            extractor: FeatureExtractorSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn weights(&self, family: Family) -> LossWeights {
        self.loss_weights.unwrap_or_else(|| LossWeights::for_family(family))
    }

    pub fn pixel_kind(&self, family: Family) -> PixelLoss {
        self.pixel_loss.unwrap_or(match family {
            Family::Srcnn => PixelLoss::L2,
            _ => PixelLoss::L1,
        })
    }

    /// Learning rate used for the update at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = step as f64 / self.steps.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.optimizer.beta1,
            beta2: self.optimizer.beta2,
            eps: self.optimizer.eps,
        }
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        let w = self.weights(family);
        let bad = |msg: String| Err(Error::Invalid(msg));
        if [w.pixel, w.perceptual, w.adversarial].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!("loss weights must be finite and non-negative: {w:?}"));
        }
        if family != Family::Esrgan && (w.perceptual != 0.0 || w.adversarial != 0.0) {
            return bad(format!("{family} trains on the pixel loss only: {w:?}"));
        }
        if self.batch_size == 0 || self.hr_patch == 0 || self.patch_stride == 0 {
            return bad("batch size, patch size and stride must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation fraction must be in [0, 1), got {}", self.validation_fraction));
        }
        if !(0.0..=1.0).contains(&self.warm_start_fraction) {
            return bad(format!("warm start fraction must be in [0, 1], got {}", self.warm_start_fraction));
        }
        let o = self.optimizer;
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return bad(format!("invalid optimizer settings {o:?}"));
        }
        if family == Family::Esrgan && w.adversarial > 0.0 && self.hr_patch % 32 != 0 {
            return bad(format!("adversarial training needs a patch multiple of 32, got {}", self.hr_patch));
        }
        Ok(())
    }
}

/// One row of the loss history; losses are batch means before the update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub pixel: f64,
    pub perceptual: Option<f64>,
    pub adversarial_g: Option<f64>,
    pub adversarial_d: Option<f64>,
    pub total: f64,
    pub validation_psnr: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub checkpoint: PathBuf,
    pub history_path: PathBuf,
    pub history: Vec<HistoryRow>,
    pub n_train: usize,
    pub n_validation: usize,
}

/// Normalized, grid-aligned training windows from every training part.
pub fn training_pairs(spec: &NetworkSpec, manifest: &Manifest, cfg: &TrainConfig) -> Result<Vec<PatchPair>> {
    let extract = ExtractConfig {
        mode: spec.dimensionality,
        in_slices: spec.slices(),
        hr_patch: cfg.hr_patch,
        stride: cfg.patch_stride,
        scale: spec.scale,
        pre_upsampled: spec.family.pre_upsampled(),
    };
    let mut pairs = Vec::new();
    for entry in manifest.split(Split::Train) {
        let (lr, hr) = manifest.load_pair(entry)?;
        let (lr, hr, _) = normalize_pair(&lr, &hr)?;
        let input = prepare_input(&lr, spec)?;
        pairs.extend(extract_training_windows(&input, &hr, &extract)?);
    }
    if let Some(max) = cfg.max_patches {
        if pairs.len() > max {
            pairs.shuffle(&mut seeds::rng(seeds::derive(cfg.seed, "train/subset")));
            pairs.truncate(max);
        }
    }
    if pairs.is_empty() {
        return Err(Error::Invalid("no training patches fit the volumes".into()));
    }
    Ok(pairs)
}

/// Train on the training split of a dataset manifest.
pub fn train(spec: &NetworkSpec, manifest: &Manifest, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate(spec.family)?;
    let pairs = training_pairs(spec, manifest, cfg)?;
    train_on_pairs(spec, pairs, cfg, out_dir)
}

fn grid_shape(g: &Grid, n: usize, volumetric: bool) -> Shape {
    let [d, h, w] = g.dims;
    if volumetric {
        Shape::new(n, 1, d, h, w)
    } else {
        Shape::planar(n, d, h, w)
    }
}

/// Stack windows into `(input, target)` network tensors.
pub fn batch_tensors(pairs: &[&PatchPair], volumetric: bool) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = pairs.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let n = pairs.len();
    let mut x = Vec::with_capacity(n * first.input.data.len());
    let mut y = Vec::with_capacity(n * first.target.data.len());
    for p in pairs {
        if p.input.dims != first.input.dims || p.target.dims != first.target.dims {
            return Err(Error::Invalid("windows in a batch differ in size".into()));
        }
        x.extend_from_slice(&p.input.data);
        y.extend_from_slice(&p.target.data);
    }
    Ok((
        Tensor::from_vec(grid_shape(&first.input, n, volumetric), x)?,
        Tensor::from_vec(grid_shape(&first.target, n, volumetric), y)?,
    ))
}

/// Mean pixel loss of `net` over `pairs`, evaluated in batches.
pub fn evaluate_loss(net: &Network<f32>, pairs: &[PatchPair], kind: PixelLoss, batch: usize) -> Result<f64> {
    let volumetric = net.spec().dimensionality.is_volumetric();
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in pairs.chunks(batch.max(1)) {
        let refs: Vec<&PatchPair> = chunk.iter().collect();
        let (x, y) = batch_tensors(&refs, volumetric)?;
        let pred = net.infer(x)?;
        sum += pixel_loss(&pred, &y, kind)? * y.len() as f64;
        count += y.len();
    }
    Ok(sum / count.max(1) as f64)
}

fn validation_psnr(net: &Network<f32>, pairs: &[PatchPair], batch: usize) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let mse = evaluate_loss(net, pairs, PixelLoss::L2, batch)?;
    let db = if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() };
    Ok(Some(db))
}

struct Adversary {
    disc: Discriminator<f32>,
    opt: Adam<f32>,
    extractor: FeatureExtractor<f32>,
}

fn logits(disc: &Discriminator<f32>, store: &volsr_nn::ParamStore<f32>, x: Tensor<f32>) -> Result<Vec<f64>> {
    let g = Graph::inference(store);
    let v = disc.forward(&g, &g.constant(x))?;
    Ok(v.value().data().iter().map(|&v| v as f64).collect())
}

fn column(v: &[f64], shape: Shape) -> Result<Tensor<f32>> {
    Ok(Tensor::from_vec(shape, v.iter().map(|&x| x as f32).collect())?)
}

impl Adversary {
    /// Generator-side adversarial loss and its gradient on `pred`.
    fn generator_term(&self, pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<(f64, f64, Tensor<f32>)> {
        let mut frozen = self.disc.params().clone();
        frozen.freeze_all();
        let real = logits(&self.disc, &frozen, target.clone())?;
        let g = Graph::new(&frozen);
        let x = g.leaf(pred.clone());
        let fake_var = self.disc.forward(&g, &x)?;
        let fake: Vec<f64> = fake_var.value().data().iter().map(|&v| v as f64).collect();
        let terms = ragan_terms(&real, &fake)?;
        let seed = column(&terms.g_grad_fake, fake_var.shape())?;
        let grads = g.backward(vec![(&fake_var, seed)])?;
        let dx = grads.leaf(&x).cloned().unwrap_or_else(|| Tensor::zeros(pred.shape()));
        Ok((terms.g_loss, terms.d_loss, dx))
    }

    fn discriminator_step(&mut self, pred: &Tensor<f32>, target: &Tensor<f32>, step: usize) -> Result<f64> {
        let g = Graph::new(self.disc.params());
        let real = self.disc.forward(&g, &g.constant(target.clone()))?;
        let fake = self.disc.forward(&g, &g.constant(pred.clone()))?;
        let to_vec = |v: &volsr_nn::Var<f32>| v.value().data().iter().map(|&x| x as f64).collect::<Vec<_>>();
        let terms = ragan_terms(&to_vec(&real), &to_vec(&fake))?;
        let seeds = vec![
            (&real, column(&terms.d_grad_real, real.shape())?),
            (&fake, column(&terms.d_grad_fake, fake.shape())?),
        ];
        let grads = g.backward(seeds)?;
        if !grads.squared_norm().is_finite() {
            return Err(Error::Diverged { step, last_good: None });
        }
        self.opt.step(self.disc.params_mut(), &grads);
        Ok(terms.d_loss)
    }
}

struct Checkpointer<'a> {
    dir: PathBuf,
    cfg: &'a TrainConfig,
    last_good: Option<PathBuf>,
}

impl Checkpointer<'_> {
    fn save(&mut self, net: &Network<f32>, step: usize) -> Result<PathBuf> {
        let path = self.dir.join(format!("step-{step:07}.volsr"));
        let mut meta = BTreeMap::new();
        meta.insert("step".to_string(), json!(step));
        meta.insert("train_config".to_string(), serde_json::to_value(self.cfg).expect("plain struct serializes"));
        save_checkpoint(&path, net, &meta)?;
        self.last_good = Some(path.clone());
        Ok(path)
    }
}

fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Train on explicit windows. The validation share is split off with a
/// seeded shuffle; batches walk seeded permutations of the rest.
pub fn train_on_pairs(spec: &NetworkSpec, mut pairs: Vec<PatchPair>, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate(spec.family)?;
    if pairs.is_empty() {
        return Err(Error::Invalid("no training windows".into()));
    }
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    let volumetric = spec.dimensionality.is_volumetric();
    let weights = cfg.weights(spec.family);
    let kind = cfg.pixel_kind(spec.family);

    pairs.shuffle(&mut seeds::rng(seeds::derive(cfg.seed, "train/split")));
    let n_val = if pairs.len() >= 2 {
        ((pairs.len() as f64 * cfg.validation_fraction).floor() as usize).min(pairs.len() - 1)
    } else {
        0
    };
    let validation = pairs.split_off(pairs.len() - n_val);
    let train_set = pairs;

    let mut net = Network::<f32>::build(spec, seeds::derive(cfg.seed, "train/init"))?;
    let mut opt = Adam::new(cfg.adam());
    let adversarial = spec.family == Family::Esrgan && (weights.adversarial > 0.0 || weights.perceptual > 0.0);
    let mut adversary = if adversarial {
        Some(Adversary {
            disc: Discriminator::build(volumetric, cfg.hr_patch, seeds::derive(cfg.seed, "train/discriminator"))?,
            opt: Adam::new(cfg.adam()),
            extractor: FeatureExtractor::build(cfg.extractor)?,
        })
    } else {
        None
    };
    let warm_steps = if adversarial {
        (cfg.steps as f64 * cfg.warm_start_fraction).ceil() as usize
    } else {
        cfg.steps
    };

    let mut ckpt = Checkpointer {
        dir: ckpt_dir,
        cfg,
        last_good: None,
    };
    ckpt.save(&net, 0)?;
    let history_path = out_dir.join(HISTORY_FILE);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut order_rng = seeds::rng(seeds::derive(cfg.seed, "train/order"));
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let batch = cfg.batch_size.min(train_set.len());

    for step in 0..cfg.steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == order.len() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let refs: Vec<&PatchPair> = idx.iter().map(|&i| &train_set[i]).collect();
        let (x, target) = batch_tensors(&refs, volumetric)?;

        let g = Graph::new(net.params());
        let pred = net.forward(&g, &g.constant(x))?;
        let (pix, mut grad) = pixel_loss_grad(pred.value(), &target, kind)?;
        grad = grad.scale(weights.pixel as f32);
        let mut row = HistoryRow {
            step,
            pixel: pix,
            perceptual: None,
            adversarial_g: None,
            adversarial_d: None,
            total: weights.pixel * pix,
            validation_psnr: None,
        };
        let pred_t = pred.value().clone();
        if let Some(adv) = adversary.as_ref().filter(|_| step >= warm_steps) {
            let (perc, gp) = perceptual_loss_grad(&pred_t, &target, &adv.extractor)?;
            let (g_loss, d_loss, ga) = adv.generator_term(&pred_t, &target)?;
            grad.add_assign(&gp.scale(weights.perceptual as f32))?;
            grad.add_assign(&ga.scale(weights.adversarial as f32))?;
            row.perceptual = Some(perc);
            row.adversarial_g = Some(g_loss);
            row.adversarial_d = Some(d_loss);
            row.total += weights.perceptual * perc + weights.adversarial * g_loss;
        }
        if !row.total.is_finite() || !grad.all_finite() {
            write_history(&history_path, &history)?;
            return Err(Error::Diverged {
                step,
                last_good: ckpt.last_good.clone(),
            });
        }
        let grads = g.backward(vec![(&pred, grad)])?;
        if !grads.squared_norm().is_finite() {
            write_history(&history_path, &history)?;
            return Err(Error::Diverged {
                step,
                last_good: ckpt.last_good.clone(),
            });
        }
        opt.set_lr(cfg.lr_at(step));
        opt.step(net.params_mut(), &grads);
        if let Some(adv) = adversary.as_mut().filter(|_| step >= warm_steps) {
            adv.opt.set_lr(cfg.lr_at(step));
            if let Err(e) = adv.discriminator_step(&pred_t, &target, step) {
                write_history(&history_path, &history)?;
                return Err(match e {
                    Error::Diverged { step, .. } => Error::Diverged {
                        step,
                        last_good: ckpt.last_good.clone(),
                    },
                    e => e,
                });
            }
        }

        let done = step + 1;
        if cfg.validate_every > 0 && done % cfg.validate_every == 0 && done < cfg.steps {
            row.validation_psnr = validation_psnr(&net, &validation, batch)?;
        }
        if done == cfg.steps {
            row.validation_psnr = validation_psnr(&net, &validation, batch)?;
        }
        history.push(row);
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            ckpt.save(&net, done)?;
        }
    }

    write_history(&history_path, &history)?;
    let checkpoint = out_dir.join(MODEL_FILE);
    let mut meta = BTreeMap::new();
    meta.insert("step".to_string(), json!(cfg.steps));
    meta.insert("train_config".to_string(), serde_json::to_value(cfg).expect("plain struct serializes"));
    meta.insert("n_train".to_string(), json!(train_set.len()));
    meta.insert("n_validation".to_string(), json!(validation.len()));
    save_checkpoint(&checkpoint, &net, &meta)?;
    log::info!("trained {} {} for {} steps", spec.family, spec.dimensionality, cfg.steps);
    Ok(TrainOutcome {
        network: net,
        checkpoint,
        history_path,
        history,
        n_train: train_set.len(),
        n_validation: validation.len(),
    })
}
