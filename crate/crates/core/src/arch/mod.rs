//! SRCNN, EDSR and the ESRGAN generator in 2D, 2.5D and 3D form.
//!
//! Tensors follow the `(n, c, d, h, w)` layout of `volsr-nn`. Planar networks
//! take the slice window on the channel axis with `d = 1`; volumetric
//! networks take one channel and a real depth axis.

mod blueprint;
mod checkpoint;
mod discriminator;
mod network;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::volume::{resample_z, upsample_all, Interp, Volume};
use crate::{Error, Result};

pub use blueprint::{activation_plan, ConvDef, PlannedActivation};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use discriminator::{discriminator_parameter_count, Discriminator};
pub use network::{build_network, Network};
pub use report::{count_parameters, first_layer_parameter_delta, spec_parameter_report, ParamReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Srcnn,
    Edsr,
    Esrgan,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Srcnn, Family::Edsr, Family::Esrgan];

    /// SRCNN consumes input already interpolated to the output grid.
    pub fn pre_upsampled(self) -> bool {
        self == Family::Srcnn
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimensionality {
    #[serde(rename = "2d")]
    D2,
    #[serde(rename = "2.5d")]
    D25,
    #[serde(rename = "3d")]
    D3,
}

impl Dimensionality {
    pub const ALL: [Dimensionality; 3] = [Dimensionality::D2, Dimensionality::D25, Dimensionality::D3];

    pub fn default_slices(self) -> usize {
        match self {
            Dimensionality::D25 => 7,
            _ => 1,
        }
    }

    pub fn is_volumetric(self) -> bool {
        self == Dimensionality::D3
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Srcnn => "srcnn",
            Family::Edsr => "edsr",
            Family::Esrgan => "esrgan",
        })
    }
}

impl fmt::Display for Dimensionality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimensionality::D2 => "2d",
            Dimensionality::D25 => "2.5d",
            Dimensionality::D3 => "3d",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "srcnn" => Ok(Family::Srcnn),
            "edsr" => Ok(Family::Edsr),
            "esrgan" => Ok(Family::Esrgan),
            other => Err(Error::Invalid(format!("unknown network family `{other}`"))),
        }
    }
}

impl FromStr for Dimensionality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2d" => Ok(Dimensionality::D2),
            "2.5d" | "25d" => Ok(Dimensionality::D25),
            "3d" => Ok(Dimensionality::D3),
            other => Err(Error::Invalid(format!("unknown dimensionality `{other}` (expected 2d, 2.5d or 3d)"))),
        }
    }
}

fn default_scale() -> usize {
    4
}
fn default_features() -> usize {
    64
}
fn default_mid() -> usize {
    32
}
fn default_kernels() -> [usize; 3] {
    [9, 5, 5]
}
fn default_blocks() -> usize {
    16
}
fn default_res_scale() -> f64 {
    1.0
}
fn default_rrdb() -> usize {
    23
}
fn default_growth() -> usize {
    32
}

/// Everything needed to build a network and count its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub family: Family,
    pub dimensionality: Dimensionality,
    #[serde(default = "default_scale")]
    pub scale: usize,
    /// Defaults to 1, or 7 for 2.5D.
    #[serde(default)]
    pub in_slices: Option<usize>,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_mid")]
    pub srcnn_mid_features: usize,
    #[serde(default = "default_kernels")]
    pub srcnn_kernels: [usize; 3],
    #[serde(default = "default_blocks")]
    pub edsr_blocks: usize,
    #[serde(default = "default_res_scale")]
    pub edsr_residual_scale: f64,
    #[serde(default = "default_rrdb")]
    pub esrgan_rrdb_blocks: usize,
    #[serde(default = "default_growth")]
    pub esrgan_growth: usize,
}

impl NetworkSpec {
    pub fn new(family: Family, dimensionality: Dimensionality) -> Self {
        Self {
            family,
            dimensionality,
            scale: default_scale(),
            in_slices: None,
            features: default_features(),
            srcnn_mid_features: default_mid(),
            srcnn_kernels: default_kernels(),
            edsr_blocks: default_blocks(),
            edsr_residual_scale: default_res_scale(),
            esrgan_rrdb_blocks: default_rrdb(),
            esrgan_growth: default_growth(),
        }
    }

    pub fn with_dimensionality(&self, dimensionality: Dimensionality) -> Self {
        Self {
            dimensionality,
            in_slices: None,
            ..self.clone()
        }
    }

    pub fn slices(&self) -> usize {
        self.in_slices.unwrap_or(self.dimensionality.default_slices())
    }

    /// Input channels of the first convolution.
    pub fn input_planes(&self) -> usize {
        match self.dimensionality {
            Dimensionality::D3 => 1,
            _ => self.slices(),
        }
    }

    /// Whether the network upsamples with learned sub-pixel or resize-conv stages.
    pub fn learned_upsampler(&self) -> bool {
        self.family != Family::Srcnn && !self.dimensionality.is_volumetric()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.slices();
        match self.dimensionality {
            Dimensionality::D25 if s < 3 || s % 2 == 0 => {
                return Err(Error::Invalid(format!("2.5D needs an odd slice window >= 3, got {s}")))
            }
            Dimensionality::D2 | Dimensionality::D3 if s != 1 => {
                return Err(Error::Unsupported(format!(
                    "{} {} takes a single input plane, got in_slices = {s}",
                    self.family, self.dimensionality
                )))
            }
            _ => {}
        }
        if self.scale == 0 {
            return Err(Error::Invalid("scale must be >= 1".into()));
        }
        if self.learned_upsampler() && !self.scale.is_power_of_two() {
            return Err(Error::Invalid(format!(
                "scale {} is not a power of two, which the learned upsampler requires",
                self.scale
            )));
        }
        let widths = [self.features, self.srcnn_mid_features, self.esrgan_growth];
        if widths.contains(&0) || self.srcnn_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Invalid("feature widths must be >= 1 and kernels odd".into()));
        }
        if !self.edsr_residual_scale.is_finite() {
            return Err(Error::Invalid("edsr_residual_scale must be finite".into()));
        }
        Ok(())
    }

    /// Output item extent `(d, h, w)` for an input item extent.
    pub fn output_extent(&self, input: [usize; 3]) -> [usize; 3] {
        let [d, h, w] = input;
        let s = self.scale;
        match (self.family.pre_upsampled(), self.dimensionality.is_volumetric()) {
            (true, _) => input,
            (false, false) => [d, h * s, w * s],
            (false, true) => [d * s, h * s, w * s],
        }
    }
}

/// Bring a native low-resolution volume onto the grid the network consumes.
///
/// Planar learned-upsampling networks get the z axis resampled to the
/// high-resolution slice grid; SRCNN gets every axis interpolated; volumetric
/// learned networks consume the native grid.
pub fn prepare_input(lr_native: &Volume, spec: &NetworkSpec) -> Result<Volume> {
    let s = spec.scale;
    match (spec.family.pre_upsampled(), spec.dimensionality.is_volumetric()) {
        (true, _) => upsample_all(lr_native, s, Interp::Cubic),
        (false, false) => resample_z(lr_native, s as f64, Interp::Cubic),
        (false, true) => Ok(lr_native.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trips_through_json() {
        let spec = NetworkSpec::new(Family::Edsr, Dimensionality::D25);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"2.5d\""));
        let back: NetworkSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let short: NetworkSpec = serde_json::from_str(r#"{"family":"srcnn","dimensionality":"3d"}"#).unwrap();
        assert_eq!(short, NetworkSpec::new(Family::Srcnn, Dimensionality::D3));
        assert!(serde_json::from_str::<NetworkSpec>(r#"{"family":"srcnn","dimensionality":"3d","depth":2}"#).is_err());
    }

    #[test]
    fn invalid_specs() {
        let mut s = NetworkSpec::new(Family::Edsr, Dimensionality::D25);
        s.in_slices = Some(4);
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::new(Family::Edsr, Dimensionality::D2);
        s.in_slices = Some(7);
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::new(Family::Esrgan, Dimensionality::D2);
        s.scale = 3;
        assert!(s.validate().is_err());
        s.dimensionality = Dimensionality::D3;
        assert!(s.validate().is_ok());
        let mut s = NetworkSpec::new(Family::Srcnn, Dimensionality::D2);
        s.scale = 3;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn parsing() {
        assert_eq!("2.5D".parse::<Dimensionality>().unwrap(), Dimensionality::D25);
        assert_eq!("EDSR".parse::<Family>().unwrap(), Family::Edsr);
        assert!("4d".parse::<Dimensionality>().is_err());
    }
}
