use serde::Serialize;

use crate::arch::{activation_plan, spec_parameter_report, NetworkSpec};
use crate::Result;

const BYTES_PER_ELEMENT: u64 = 4;

/// Analytic forward-pass memory for one batch, in bytes of f32.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryEstimate {
    pub batch: usize,
    pub parameters_bytes: u64,
    /// The network input tensor itself, reported but not part of `total`.
    pub input_bytes: u64,
    pub per_layer: Vec<(String, u64)>,
    /// Largest pair of consecutive tensors (a layer's input and output)
    /// that must coexist.
    pub peak_activation_bytes: u64,
    pub total: u64,
    pub assumptions: Vec<String>,
}

/// `input_extent` is one sample on the network-input grid as `(d, h, w)`;
/// planar networks take `d = 1` with the slice window as channels.
pub fn estimate_activation_memory(
    spec: &NetworkSpec,
    input_extent: [usize; 3],
    batch: usize,
) -> Result<MemoryEstimate> {
    spec.validate()?;
    if batch == 0 || input_extent.contains(&0) {
        return Err(crate::Error::Invalid(format!(
            "empty estimate request: batch {batch}, extent {input_extent:?}"
        )));
    }
    let b = batch as u64;
    let params = spec_parameter_report(spec)?.total as u64 * BYTES_PER_ELEMENT;
    let input_bytes =
        (spec.input_planes() * input_extent.iter().product::<usize>()) as u64 * BYTES_PER_ELEMENT * b;
    let per_layer: Vec<(String, u64)> = activation_plan(spec, input_extent)
        .into_iter()
        .map(|a| (a.name.clone(), a.numel() as u64 * BYTES_PER_ELEMENT * b))
        .collect();
    let mut peak = 0;
    let mut prev = input_bytes;
    for (_, bytes) in &per_layer {
        peak = peak.max(prev + bytes);
        prev = *bytes;
    }
    let activations: u64 = per_layer.iter().map(|(_, b)| b).sum();
    Ok(MemoryEstimate {
        batch,
        parameters_bytes: params,
        input_bytes,
        per_layer,
        peak_activation_bytes: peak,
        total: params + activations,
        assumptions: vec![
            "f32 storage".into(),
            "forward pass only; no gradients or optimizer state".into(),
            "every convolution, sum, concatenation and resampling output is retained".into(),
            "activations are applied in place".into(),
            "input tensor excluded from total".into(),
        ],
    })
}
