//! Parameters and forward pipeline: modality projection, band stack,
//! band masking, cross-band operator, graph-aware gating and fusion.

mod forward;
mod inputs;
mod mask;
mod params;

#[cfg(test)]
mod tests;

pub use forward::{
    band_energy_fractions, band_stack_on_tape, embed_on_tape, fuse_bands, graph_gate, hsno_apply,
    node_embedding, node_outputs, pair_logits_on_tape, project_modalities, score_pairs, Embedded,
    NodeOutputs, ParamVars,
};
pub use inputs::SpectralInputs;
pub use mask::{spectral_band_mask, MaskSample, MASK_RETRIES};
pub use params::{GraphGateMode, HyperKernel, ModelConfig, ModelParams, ModelShape};

/// Negative-side slope of the leaky rectifier used throughout the model.
pub const LEAKY_SLOPE: f64 = 0.01;
