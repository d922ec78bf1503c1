use serde::Serialize;
use volsr_nn::Scalar;

use super::blueprint::{conv_defs, ConvDef};
use super::{Dimensionality, Network, NetworkSpec};
use crate::{Error, Result};

/// Trainable-parameter accounting for one network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
    /// First-layer parameters minus those of the same network's 2D form.
    pub first_layer_delta_vs_2d: i64,
    /// First-layer kernel height (`m`) and width (`n`).
    pub kernel_m: usize,
    pub kernel_n: usize,
    /// Output features of the first layer (`k`).
    pub first_layer_features_k: usize,
}

fn first_layer(spec: &NetworkSpec) -> ConvDef {
    conv_defs(spec).swap_remove(0)
}

fn assemble(spec: &NetworkSpec, per_layer: Vec<(String, usize)>) -> ParamReport {
    let first = first_layer(spec);
    let first_2d = first_layer(&spec.with_dimensionality(Dimensionality::D2));
    ParamReport {
        total: per_layer.iter().map(|(_, n)| n).sum(),
        per_layer,
        first_layer_delta_vs_2d: first.parameter_count() as i64 - first_2d.parameter_count() as i64,
        kernel_m: first.kernel[1],
        kernel_n: first.kernel[2],
        first_layer_features_k: first.cout,
    }
}

/// Count the trainable scalars actually held by a network.
pub fn count_parameters<T: Scalar>(net: &Network<T>) -> ParamReport {
    let p = net.params();
    let per_layer = net
        .layers()
        .map(|(def, w, b)| {
            let n: usize = [Some(w), b]
                .into_iter()
                .flatten()
                .filter(|&id| p.is_trainable(id))
                .map(|id| p.get(id).len())
                .sum();
            (def.name.clone(), n)
        })
        .collect();
    assemble(net.spec(), per_layer)
}

/// Parameter accounting from the layer table alone, without allocating weights.
pub fn spec_parameter_report(spec: &NetworkSpec) -> Result<ParamReport> {
    spec.validate()?;
    let per_layer = conv_defs(spec).into_iter().map(|d| (d.name.clone(), d.parameter_count())).collect();
    Ok(assemble(spec, per_layer))
}

/// Extra first-layer parameters of a multi-slice network over its 2D form:
/// `(slices - 1) * m * n * k`.
pub fn first_layer_parameter_delta(spec_2d: &NetworkSpec, spec_25d: &NetworkSpec) -> Result<i64> {
    spec_2d.validate()?;
    spec_25d.validate()?;
    if spec_2d.dimensionality != Dimensionality::D2 || spec_25d.dimensionality != Dimensionality::D25 {
        return Err(Error::Invalid(format!(
            "expected a 2d and a 2.5d spec, got {} and {}",
            spec_2d.dimensionality, spec_25d.dimensionality
        )));
    }
    let aligned = NetworkSpec {
        dimensionality: spec_2d.dimensionality,
        in_slices: spec_2d.in_slices,
        ..spec_25d.clone()
    };
    if &aligned != spec_2d {
        return Err(Error::Invalid("specs differ in more than dimensionality and slice count".into()));
    }
    let (m, n, k) = match spec_2d.family {
        super::Family::Srcnn => (spec_2d.srcnn_kernels[0], spec_2d.srcnn_kernels[0], spec_2d.features),
        _ => (3, 3, spec_2d.features),
    };
    Ok(((spec_25d.slices() - 1) * m * n * k) as i64)
}
