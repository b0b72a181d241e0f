//! Attention-free Affine-Shift transformer blocks and the AST/VAST image and
//! video backbones, built on a small dense-tensor reverse-mode autodiff core.
//!
//! Tensors are channels-last: video activations are `[N, T, H, W, C]`, images
//! are the `T = 1` case, and token sequences are `[N, S, d]`.
//!
//! ```
//! use vast::{build_model, ModelSpec};
//!
//! let spec = ModelSpec::named("vast-micro").unwrap().with_input(4, 16, 16).with_classes(2);
//! let model = build_model(&spec, 0).unwrap();
//! let clip = vast::Tensor::zeros(&spec.input_shape(1)).unwrap();
//! let logits = model.predict(&clip).unwrap();
//! assert_eq!(logits.shape(), &[1, 2]);
//! ```

pub mod analysis;
pub mod autodiff;
pub mod blocks;
pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod models;
pub mod optim;
pub mod params;
pub mod shift;
pub mod tensor;
pub mod tnsr;

pub use analysis::{analyze, count_macs, count_params, ComputeStats};
pub use autodiff::{Tape, Var};
pub use blocks::{AffineShiftLayer, BlockConfig, BlockVariant, Mode};
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use models::{build_model, Domain, Model, ModelSpec, StemKind, Variant};
pub use params::ParamStore;
pub use shift::{shift, shift_vjp, Fraction, ShiftAxis, ShiftPolicy, ShiftSpec};
pub use tensor::Tensor;
