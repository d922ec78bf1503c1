//! Static layer tables: which convolutions a spec contains, and which
//! activation tensors a forward pass allocates.

use volsr_nn::ConvGeom;

use super::{Family, NetworkSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum InitStyle {
    /// Uniform weights and bias in `±1/sqrt(fan_in)`.
    FanInUniform,
    /// Kaiming-normal weights scaled by 0.1, zero bias.
    ScaledKaiming,
}

/// One convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvDef {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    /// `(kd, kh, kw)`.
    pub kernel: [usize; 3],
    pub bias: bool,
    pub(crate) init: InitStyle,
}

impl ConvDef {
    fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize, volumetric: bool, init: InitStyle) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel: if volumetric { [k; 3] } else { [1, k, k] },
            bias: true,
            init,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.cout * self.cin * self.kernel.iter().product::<usize>()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_count() + if self.bias { self.cout } else { 0 }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    /// Same-padded, unit-stride geometry.
    pub fn geom(&self) -> ConvGeom {
        let [kd, kh, kw] = self.kernel;
        ConvGeom {
            kernel: self.kernel,
            stride: [1; 3],
            pad: [kd / 2, kh / 2, kw / 2],
        }
    }
}

pub(crate) fn upsample_stages(spec: &NetworkSpec) -> usize {
    if spec.learned_upsampler() {
        spec.scale.trailing_zeros() as usize
    } else {
        0
    }
}

/// Convolutions in execution order.
pub(crate) fn conv_defs(spec: &NetworkSpec) -> Vec<ConvDef> {
    let vol = spec.dimensionality.is_volumetric();
    let cin = spec.input_planes();
    let f = spec.features;
    let mut v = Vec::new();
    match spec.family {
        Family::Srcnn => {
            let [k1, k2, k3] = spec.srcnn_kernels;
            let m = spec.srcnn_mid_features;
            let u = InitStyle::FanInUniform;
            v.push(ConvDef::new("conv1", cin, f, k1, vol, u));
            v.push(ConvDef::new("conv2", f, m, k2, vol, u));
            v.push(ConvDef::new("conv3", m, 1, k3, vol, u));
        }
        Family::Edsr => {
            let u = InitStyle::FanInUniform;
            v.push(ConvDef::new("head", cin, f, 3, vol, u));
            for b in 0..spec.edsr_blocks {
                v.push(ConvDef::new(format!("body.{b}.conv1"), f, f, 3, vol, u));
                v.push(ConvDef::new(format!("body.{b}.conv2"), f, f, 3, vol, u));
            }
            v.push(ConvDef::new("body_end", f, f, 3, vol, u));
            for s in 0..upsample_stages(spec) {
                v.push(ConvDef::new(format!("upsample.{s}"), f, 4 * f, 3, vol, u));
            }
            v.push(ConvDef::new("tail", f, 1, 3, vol, u));
        }
        Family::Esrgan => {
            let k = InitStyle::ScaledKaiming;
            let g = spec.esrgan_growth;
            v.push(ConvDef::new("conv_first", cin, f, 3, vol, k));
            for b in 0..spec.esrgan_rrdb_blocks {
                for r in 1..=3 {
                    for c in 1..=5 {
                        let cout = if c == 5 { f } else { g };
                        let name = format!("trunk.{b}.rdb{r}.conv{c}");
                        v.push(ConvDef::new(name, f + (c - 1) * g, cout, 3, vol, k));
                    }
                }
            }
            v.push(ConvDef::new("trunk_conv", f, f, 3, vol, k));
            for s in 0..upsample_stages(spec) {
                v.push(ConvDef::new(format!("upconv.{s}"), f, f, 3, vol, k));
            }
            v.push(ConvDef::new("hr_conv", f, f, 3, vol, k));
            v.push(ConvDef::new("conv_last", f, 1, 3, vol, k));
        }
    }
    v
}

/// A tensor produced during a forward pass, per batch item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedActivation {
    pub name: String,
    pub channels: usize,
    /// `(d, h, w)`.
    pub extent: [usize; 3],
}

impl PlannedActivation {
    pub fn numel(&self) -> usize {
        self.channels * self.extent.iter().product::<usize>()
    }
}

/// Activation tensors allocated by one forward pass over an input item of
/// spatial extent `input`.
///
/// Convolution, residual sums, concatenations and resampling each produce a
/// new tensor; pointwise activations are treated as in place and omitted.
pub fn activation_plan(spec: &NetworkSpec, input: [usize; 3]) -> Vec<PlannedActivation> {
    let mut plan = Vec::new();
    let mut push = |name: String, channels: usize, extent: [usize; 3]| {
        plan.push(PlannedActivation { name, channels, extent })
    };
    let f = spec.features;
    let s = spec.scale;
    match spec.family {
        Family::Srcnn => {
            push("conv1".into(), f, input);
            push("conv2".into(), spec.srcnn_mid_features, input);
            push("conv3".into(), 1, input);
        }
        Family::Edsr => {
            let mut e = input;
            if spec.dimensionality.is_volumetric() {
                e = [e[0] * s, e[1] * s, e[2] * s];
                push("upsample".into(), 1, e);
            }
            push("head".into(), f, e);
            for b in 0..spec.edsr_blocks {
                push(format!("body.{b}.conv1"), f, e);
                push(format!("body.{b}.conv2"), f, e);
                push(format!("body.{b}.add"), f, e);
            }
            push("body_end".into(), f, e);
            push("skip.add".into(), f, e);
            for st in 0..upsample_stages(spec) {
                push(format!("upsample.{st}"), 4 * f, e);
                e = [e[0], e[1] * 2, e[2] * 2];
                push(format!("upsample.{st}.shuffle"), f, e);
            }
            push("tail".into(), 1, e);
        }
        Family::Esrgan => {
            let g = spec.esrgan_growth;
            let mut e = input;
            push("conv_first".into(), f, e);
            for b in 0..spec.esrgan_rrdb_blocks {
                for r in 1..=3 {
                    for c in 1..=5 {
                        if c > 1 {
                            push(format!("trunk.{b}.rdb{r}.cat{c}"), f + (c - 1) * g, e);
                        }
                        push(format!("trunk.{b}.rdb{r}.conv{c}"), if c == 5 { f } else { g }, e);
                    }
                    push(format!("trunk.{b}.rdb{r}.add"), f, e);
                }
                push(format!("trunk.{b}.add"), f, e);
            }
            push("trunk_conv".into(), f, e);
            push("skip.add".into(), f, e);
            if spec.dimensionality.is_volumetric() {
                e = [e[0] * s, e[1] * s, e[2] * s];
                push("upsample".into(), f, e);
            }
            for st in 0..upsample_stages(spec) {
                e = [e[0], e[1] * 2, e[2] * 2];
                push(format!("upconv.{st}.resize"), f, e);
                push(format!("upconv.{st}"), f, e);
            }
            push("hr_conv".into(), f, e);
            push("conv_last".into(), 1, e);
        }
    }
    plan
}
