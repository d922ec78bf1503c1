use volsr_nn::{Graph, Init, ParamId, ParamStore, Scalar, Shape, Tensor, Var};

use super::blueprint::{conv_defs, upsample_stages, ConvDef, InitStyle};
use super::{Family, NetworkSpec};
use crate::{seeds, Error, Result};

const LRELU_SLOPE: f64 = 0.2;
const RDB_SCALE: f64 = 0.2;

#[derive(Clone, Debug)]
struct Layer {
    def: ConvDef,
    w: ParamId,
    b: Option<ParamId>,
}

/// A generator network with its weights.
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: ParamStore<T>,
    layers: Vec<Layer>,
}

/// Build an `f32` network with seeded initial weights.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network<f32>> {
    Network::build(spec, seed)
}

impl<T: Scalar> Network<T> {
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeds::rng(seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        for def in conv_defs(spec) {
            let [kd, kh, kw] = def.kernel;
            let fan_in = def.fan_in() as f64;
            let (wi, bi) = match def.init {
                InitStyle::FanInUniform => {
                    let bound = 1.0 / fan_in.sqrt();
                    (Init::Uniform { bound }, Init::Uniform { bound })
                }
                InitStyle::ScaledKaiming => (Init::Normal { std: 0.1 * (2.0 / fan_in).sqrt() }, Init::Zeros),
            };
            let w = params.add(format!("{}.weight", def.name), Shape::new(def.cout, def.cin, kd, kh, kw), wi, &mut rng);
            let b = def
                .bias
                .then(|| params.add(format!("{}.bias", def.name), Shape::new(1, def.cout, 1, 1, 1), bi, &mut rng));
            layers.push(Layer { def, w, b });
        }
        Ok(Self {
            spec: spec.clone(),
            params,
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Convolution layers in execution order with their weight and bias ids.
    pub fn layers(&self) -> impl Iterator<Item = (&ConvDef, ParamId, Option<ParamId>)> {
        self.layers.iter().map(|l| (&l.def, l.w, l.b))
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.cast(),
            layers: self.layers.clone(),
        }
    }

    /// Check a batched input against what this network accepts.
    pub fn check_input(&self, s: Shape) -> Result<()> {
        let planes = self.spec.input_planes();
        let ok = s.n >= 1
            && s.c == planes
            && s.h >= 1
            && s.w >= 1
            && if self.spec.dimensionality.is_volumetric() { s.d >= 1 } else { s.d == 1 };
        if ok {
            return Ok(());
        }
        let expected = if self.spec.dimensionality.is_volumetric() {
            "(n, 1, d, h, w)".to_string()
        } else {
            format!("(n, {planes}, 1, h, w)")
        };
        Err(Error::Shape {
            expected: format!("{} {} input {expected}", self.spec.family, self.spec.dimensionality),
            actual: s.to_string(),
        })
    }

    pub fn forward(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        self.run(g, x, None)
    }

    /// Forward pass that also records every tensor it allocates.
    pub fn forward_traced(&self, g: &Graph<'_, T>, x: &Var<T>, trace: &mut Vec<(String, Shape)>) -> Result<Var<T>> {
        self.run(g, x, Some(trace))
    }

    /// Evaluation-mode forward pass without gradient bookkeeping.
    pub fn infer(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::inference(&self.params);
        let x = g.constant(x);
        Ok(self.forward(&g, &x)?.into_tensor())
    }

    fn run(&self, g: &Graph<'_, T>, x: &Var<T>, trace: Option<&mut Vec<(String, Shape)>>) -> Result<Var<T>> {
        self.check_input(x.shape())?;
        let mut r = Runner {
            g,
            layers: self.layers.iter(),
            trace,
        };
        let spec = &self.spec;
        let t = |v: f64| T::from_f64_lossy(v);
        let slope = t(LRELU_SLOPE);
        let out = match spec.family {
            Family::Srcnn => {
                let h = r.conv(x)?;
                let h = g.relu(&h);
                let h = r.conv(&h)?;
                let h = g.relu(&h);
                r.conv(&h)?
            }
            Family::Edsr => {
                let x = if spec.dimensionality.is_volumetric() {
                    let u = g.upsample_linear3d(x, spec.scale);
                    r.record("upsample", &u);
                    u
                } else {
                    x.clone()
                };
                let head = r.conv(&x)?;
                let mut h = head.clone();
                for b in 0..spec.edsr_blocks {
                    let y = r.conv(&h)?;
                    let y = g.relu(&y);
                    let y = r.conv(&y)?;
                    h = g.add_scaled(&h, &y, t(spec.edsr_residual_scale))?;
                    r.record(&format!("body.{b}.add"), &h);
                }
                let h = r.conv(&h)?;
                let mut h = g.add(&head, &h)?;
                r.record("skip.add", &h);
                for s in 0..upsample_stages(spec) {
                    h = r.conv(&h)?;
                    h = g.pixel_shuffle(&h, 2)?;
                    r.record(&format!("upsample.{s}.shuffle"), &h);
                }
                r.conv(&h)?
            }
            Family::Esrgan => {
                let fea = r.conv(x)?;
                let mut h = fea.clone();
                for b in 0..spec.esrgan_rrdb_blocks {
                    let block_in = h.clone();
                    for rdb in 1..=3 {
                        let mut feats = vec![h.clone()];
                        for c in 1..=5 {
                            let input = if c == 1 {
                                h.clone()
                            } else {
                                let refs: Vec<&Var<T>> = feats.iter().collect();
                                let cat = g.concat(&refs)?;
                                r.record(&format!("trunk.{b}.rdb{rdb}.cat{c}"), &cat);
                                cat
                            };
                            let y = r.conv(&input)?;
                            if c < 5 {
                                feats.push(g.leaky_relu(&y, slope));
                            } else {
                                h = g.add_scaled(&h, &y, t(RDB_SCALE))?;
                                r.record(&format!("trunk.{b}.rdb{rdb}.add"), &h);
                            }
                        }
                    }
                    h = g.add_scaled(&block_in, &h, t(RDB_SCALE))?;
                    r.record(&format!("trunk.{b}.add"), &h);
                }
                let trunk = r.conv(&h)?;
                let mut h = g.add(&fea, &trunk)?;
                r.record("skip.add", &h);
                if spec.dimensionality.is_volumetric() {
                    h = g.upsample_linear3d(&h, spec.scale);
                    r.record("upsample", &h);
                }
                for s in 0..upsample_stages(spec) {
                    h = g.upsample_nearest2d(&h, 2);
                    r.record(&format!("upconv.{s}.resize"), &h);
                    h = r.conv(&h)?;
                    h = g.leaky_relu(&h, slope);
                }
                let h = r.conv(&h)?;
                let h = g.leaky_relu(&h, slope);
                r.conv(&h)?
            }
        };
        debug_assert!(r.layers.next().is_none(), "every layer consumed");
        Ok(out)
    }
}

struct Runner<'a, 'g, 'p, T> {
    g: &'g Graph<'p, T>,
    layers: std::slice::Iter<'a, Layer>,
    trace: Option<&'a mut Vec<(String, Shape)>>,
}

impl<T: Scalar> Runner<'_, '_, '_, T> {
    fn conv(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let layer = self.layers.next().expect("layer table matches forward");
        let w = self.g.param(layer.w);
        let b = layer.b.map(|b| self.g.param(b));
        let y = self.g.conv(x, &w, b.as_ref(), layer.def.geom())?;
        self.record(&layer.def.name, &y);
        Ok(y)
    }

    fn record(&mut self, name: &str, v: &Var<T>) {
        if let Some(t) = self.trace.as_mut() {
            t.push((name.to_string(), v.shape()));
        }
    }
}
