//! Hash-encoded neural field: position encoder producing features and opacity, and a small
//! view-dependent color decoder, both with exact reverse-mode gradients.

mod hash;
mod mlp;
mod network;
mod optim;
mod sh;

pub use hash::{HashGrid, HashGridConfig, HashTape};
pub use mlp::{logistic, Mlp, MlpTape};
pub use network::{
    decoder_input, quantize_unit, to_u8, DecoderTape, EncoderTape, FeatureSample, FieldConfig,
    FieldGradients, FieldNetwork, FieldRecorder, DECODER_INPUTS, DECODER_WIDTHS, ENCODER_OUTPUTS,
    ENCODER_WIDTHS, FEATURE_CHANNELS,
};
pub use optim::{Adam, AdamConfig, FieldOptimizer, LearningRates};
pub use sh::{sh_encode, sh_encode_unchecked, SH_COEFFS};
