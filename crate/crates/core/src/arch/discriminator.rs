//! VGG-style relativistic discriminator (the ESRGAN `Discriminator_VGG_128`
//! layout), planar or volumetric, on one input channel.

use volsr_nn::{ConvGeom, Graph, Init, ParamId, ParamStore, Scalar, Shape, Var};

use crate::{seeds, Error, Result};

const STAGES: [(usize, usize); 5] = [(1, 64), (64, 128), (128, 256), (256, 512), (512, 512)];
const HIDDEN: usize = 100;
const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
struct Stage {
    conv0: (ParamId, Option<ParamId>),
    bn0: Option<(ParamId, ParamId)>,
    conv1: ParamId,
    bn1: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    volumetric: bool,
    input_size: usize,
    params: ParamStore<T>,
    stages: Vec<Stage>,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

fn geom(volumetric: bool, k: usize) -> ConvGeom {
    let g = if volumetric { ConvGeom::cubic(k) } else { ConvGeom::planar(k) };
    if k == 4 {
        let s = if volumetric { [2, 2, 2] } else { [1, 2, 2] };
        let p = if volumetric { [1, 1, 1] } else { [0, 1, 1] };
        g.with_stride(s).with_pad(p)
    } else {
        g
    }
}

fn kshape(volumetric: bool, cout: usize, cin: usize, k: usize) -> Shape {
    Shape::new(cout, cin, if volumetric { k } else { 1 }, k, k)
}

fn reduced(volumetric: bool, s: usize) -> usize {
    let r = s / 32;
    if volumetric {
        r * r * r
    } else {
        r * r
    }
}

/// Trainable parameters of the discriminator for square (or cubic) inputs of edge `input_size`.
pub fn discriminator_parameter_count(volumetric: bool, input_size: usize) -> usize {
    let taps = |k: usize| if volumetric { k * k * k } else { k * k };
    let mut total = 0;
    for (i, &(cin, cout)) in STAGES.iter().enumerate() {
        total += cin * cout * taps(3) + if i == 0 { cout } else { 2 * cout };
        total += cout * cout * taps(4) + 2 * cout;
    }
    let fin = 512 * reduced(volumetric, input_size);
    total + fin * HIDDEN + HIDDEN + HIDDEN + 1
}

impl<T: Scalar> Discriminator<T> {
    /// `input_size` must be a positive multiple of 32.
    pub fn build(volumetric: bool, input_size: usize, seed: u64) -> Result<Self> {
        if input_size == 0 || input_size % 32 != 0 {
            return Err(Error::Invalid(format!(
                "discriminator input size must be a positive multiple of 32, got {input_size}"
            )));
        }
        let mut rng = seeds::rng(seed);
        let mut p = ParamStore::new();
        let uniform = |fan_in: usize| Init::Uniform {
            bound: 1.0 / (fan_in as f64).sqrt(),
        };
        let taps = |k: usize| if volumetric { k * k * k } else { k * k };
        let mut stages = Vec::new();
        for (i, &(cin, cout)) in STAGES.iter().enumerate() {
            let w0 = p.add(format!("conv{i}_0.weight"), kshape(volumetric, cout, cin, 3), uniform(cin * taps(3)), &mut rng);
            let b0 = (i == 0).then(|| p.add(format!("conv{i}_0.bias"), Shape::new(1, cout, 1, 1, 1), uniform(cin * taps(3)), &mut rng));
            let bn0 = (i > 0).then(|| {
                (
                    p.add(format!("bn{i}_0.weight"), Shape::new(1, cout, 1, 1, 1), Init::Ones, &mut rng),
                    p.add(format!("bn{i}_0.bias"), Shape::new(1, cout, 1, 1, 1), Init::Zeros, &mut rng),
                )
            });
            let w1 = p.add(format!("conv{i}_1.weight"), kshape(volumetric, cout, cout, 4), uniform(cout * taps(4)), &mut rng);
            let bn1 = (
                p.add(format!("bn{i}_1.weight"), Shape::new(1, cout, 1, 1, 1), Init::Ones, &mut rng),
                p.add(format!("bn{i}_1.bias"), Shape::new(1, cout, 1, 1, 1), Init::Zeros, &mut rng),
            );
            stages.push(Stage {
                conv0: (w0, b0),
                bn0,
                conv1: w1,
                bn1,
            });
        }
        let fin = 512 * reduced(volumetric, input_size);
        let fc1 = (
            p.add("linear1.weight", Shape::new(HIDDEN, fin, 1, 1, 1), uniform(fin), &mut rng),
            p.add("linear1.bias", Shape::new(1, HIDDEN, 1, 1, 1), uniform(fin), &mut rng),
        );
        let fc2 = (
            p.add("linear2.weight", Shape::new(1, HIDDEN, 1, 1, 1), uniform(HIDDEN), &mut rng),
            p.add("linear2.bias", Shape::new(1, 1, 1, 1, 1), uniform(HIDDEN), &mut rng),
        );
        Ok(Self {
            volumetric,
            input_size,
            params: p,
            stages,
            fc1,
            fc2,
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    /// Logits of shape `(n, 1, 1, 1, 1)`. Batch normalization always uses
    /// the statistics of the current batch.
    pub fn forward(&self, g: &Graph<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        let e = self.input_size;
        let want = if self.volumetric {
            Shape::new(s.n, 1, e, e, e)
        } else {
            Shape::planar(s.n, 1, e, e)
        };
        if s != want {
            return Err(Error::Shape {
                expected: format!("discriminator input {want}"),
                actual: s.to_string(),
            });
        }
        let slope = T::from_f64_lossy(0.2);
        let eps = T::from_f64_lossy(BN_EPS);
        let mut h = x.clone();
        for st in &self.stages {
            let w = g.param(st.conv0.0);
            let b = st.conv0.1.map(|b| g.param(b));
            h = g.conv(&h, &w, b.as_ref(), geom(self.volumetric, 3))?;
            if let Some((gm, bt)) = st.bn0 {
                h = g.batch_norm(&h, &g.param(gm), &g.param(bt), eps)?;
            }
            h = g.leaky_relu(&h, slope);
            h = g.conv(&h, &g.param(st.conv1), None, geom(self.volumetric, 4))?;
            h = g.batch_norm(&h, &g.param(st.bn1.0), &g.param(st.bn1.1), eps)?;
            h = g.leaky_relu(&h, slope);
        }
        let h = g.linear(&h, &g.param(self.fc1.0), &g.param(self.fc1.1))?;
        let h = g.leaky_relu(&h, slope);
        Ok(g.linear(&h, &g.param(self.fc2.0), &g.param(self.fc2.1))?)
    }
}
