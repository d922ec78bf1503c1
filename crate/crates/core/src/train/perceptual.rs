use serde::{Deserialize, Serialize};
use volsr_nn::{ConvGeom, Graph, Init, ParamId, ParamStore, Scalar, Shape, Tensor, Var};

use super::losses::{pixel_loss, pixel_loss_grad, PixelLoss};
use crate::{seeds, Error, Result};

const LAYERS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// Seeded random 3x3 convolution stack.
    FixedRandomConv,
    /// Weights supplied through [`FeatureExtractor::from_pretrained`].
    ExternalPretrained,
    /// Features are the image itself.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureExtractorSpec {
    pub kind: ExtractorKind,
    /// Convolution whose output, before its activation, is compared (1-based).
    #[serde(default = "default_tap")]
    pub tap_point: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_tap() -> usize {
    LAYERS
}

fn default_width() -> usize {
    32
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::FixedRandomConv,
            tap_point: default_tap(),
            width: default_width(),
            seed: 0,
        }
    }
}

/// Frozen feature network for perceptual losses.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    spec: FeatureExtractorSpec,
    params: ParamStore<T>,
    convs: Vec<(ParamId, ParamId)>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn build(spec: FeatureExtractorSpec) -> Result<Self> {
        match spec.kind {
            ExtractorKind::Identity => Ok(Self {
                spec,
                params: ParamStore::new(),
                convs: Vec::new(),
            }),
            ExtractorKind::ExternalPretrained => Err(Error::Unsupported(
                "external_pretrained extractors are loaded with FeatureExtractor::from_pretrained".into(),
            )),
            ExtractorKind::FixedRandomConv => {
                if !(1..=LAYERS).contains(&spec.tap_point) || spec.width == 0 {
                    return Err(Error::Invalid(format!(
                        "tap point must be in 1..={LAYERS} and width positive, got {} / {}",
                        spec.tap_point, spec.width
                    )));
                }
                let mut rng = seeds::rng(seeds::derive(spec.seed, "perceptual"));
                let mut params = ParamStore::new();
                let mut convs = Vec::new();
                let mut cin = 1;
                for i in 0..LAYERS {
                    let fan_in = (cin * 9) as f64;
                    let w = params.add(
                        format!("conv{i}.weight"),
                        Shape::new(spec.width, cin, 1, 3, 3),
                        Init::Normal { std: (2.0 / fan_in).sqrt() },
                        &mut rng,
                    );
                    let b = params.add(format!("conv{i}.bias"), Shape::new(1, spec.width, 1, 1, 1), Init::Zeros, &mut rng);
                    convs.push((w, b));
                    cin = spec.width;
                }
                params.freeze_all();
                Ok(Self { spec, params, convs })
            }
        }
    }

    /// Wrap externally trained weights: a chain of `conv{i}.weight` with
    /// shape `(cout, cin, 1, k, k)`, odd `k`, and `conv{i}.bias`, starting
    /// from one input channel.
    pub fn from_pretrained(params: ParamStore<T>, tap_point: usize) -> Result<Self> {
        let mut convs = Vec::new();
        let mut cin = 1;
        while let Some(w) = params.find(&format!("conv{}.weight", convs.len())) {
            let s = params.get(w).shape();
            let b = params
                .find(&format!("conv{}.bias", convs.len()))
                .ok_or_else(|| Error::Invalid(format!("conv{}.bias missing", convs.len())))?;
            if s.c != cin || s.d != 1 || s.h != s.w || s.h % 2 == 0 {
                return Err(Error::Invalid(format!("conv{} has unusable shape {s}", convs.len())));
            }
            cin = s.n;
            convs.push((w, b));
        }
        if !(1..=convs.len()).contains(&tap_point) {
            return Err(Error::Invalid(format!("tap point {tap_point} outside 1..={}", convs.len())));
        }
        let width = cin;
        Ok(Self {
            spec: FeatureExtractorSpec {
                kind: ExtractorKind::ExternalPretrained,
                tap_point,
                width,
                seed: 0,
            },
            params,
            convs,
        })
    }

    pub fn spec(&self) -> &FeatureExtractorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn features(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let slope = T::from_f64_lossy(0.2);
        let mut h = x.clone();
        for (i, &(w, b)) in self.convs.iter().take(self.spec.tap_point).enumerate() {
            let k = self.params.get(w).shape().h;
            let y = g.conv(&h, &g.param(w), Some(&g.param(b)), ConvGeom::planar(k))?;
            if i + 1 == self.spec.tap_point {
                return Ok(y);
            }
            h = g.leaky_relu(&y, slope);
        }
        Ok(h)
    }

    fn check(&self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        if !self.params.all_frozen() {
            return Err(Error::Invalid("perceptual extractor weights must be frozen".into()));
        }
        if pred.shape() != target.shape() || pred.shape().c != 1 {
            return Err(Error::Shape {
                expected: format!("single-channel {}", target.shape()),
                actual: pred.shape().to_string(),
            });
        }
        Ok(())
    }
}

/// Mean squared difference of pre-activation features.
pub fn perceptual_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, extractor: &FeatureExtractor<T>) -> Result<f64> {
    extractor.check(pred, target)?;
    if extractor.spec.kind == ExtractorKind::Identity {
        return pixel_loss(pred, target, PixelLoss::L2);
    }
    let g = Graph::inference(&extractor.params);
    let fp = extractor.features(&g, &g.constant(pred.clone()))?;
    let ft = extractor.features(&g, &g.constant(target.clone()))?;
    pixel_loss(fp.value(), ft.value(), PixelLoss::L2)
}

/// Loss value and its gradient with respect to `pred`.
pub fn perceptual_loss_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    extractor: &FeatureExtractor<T>,
) -> Result<(f64, Tensor<T>)> {
    extractor.check(pred, target)?;
    if extractor.spec.kind == ExtractorKind::Identity {
        return pixel_loss_grad(pred, target, PixelLoss::L2);
    }
    let ft = {
        let g = Graph::inference(&extractor.params);
        extractor.features(&g, &g.constant(target.clone()))?.into_tensor()
    };
    let g = Graph::new(&extractor.params);
    let x = g.leaf(pred.clone());
    let fp = extractor.features(&g, &x)?;
    let (value, seed) = pixel_loss_grad(fp.value(), &ft, PixelLoss::L2)?;
    let grads = g.backward(vec![(&fp, seed)])?;
    let dx = grads.leaf(&x).cloned().unwrap_or_else(|| Tensor::zeros(pred.shape()));
    Ok((value, dx))
}
