//! Scalar and vector quantizers.
//!
//! Every quantizer here splits a vector into its l2 norm, per-element signs
//! and per-element normalized magnitudes `r_i = |v_i| / ‖v‖ ∈ [0, 1]`; only
//! the scalar quantizer applied to the magnitudes differs between families.

pub mod alq;
pub mod distortion;
pub mod levels;
pub mod registry;
pub mod scalar;
pub mod vector;

pub use alq::{alq_coordinate_step, Cdf, EmpiricalCdf, FnCdf};
pub use distortion::{
    alq_distortion_bound, distortion_bound, empirical_distortion, ratio_distortion_bound,
};
pub use levels::{fit_lloyd_max, quantize_scalar_lm, CodebookId, LevelTable, LloydMaxFit};
pub use registry::{Encoded, Quantizer, QuantizerRegistry, QuantizerSettings};
pub use scalar::{natural_scalar, qsgd_scalar};
pub use vector::{
    decode_wire, dequantize, encode_wire, encoded_bits, quantize_vector, Magnitudes,
    QuantizedVector, QuantizerKind,
};
