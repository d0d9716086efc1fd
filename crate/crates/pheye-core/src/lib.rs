//! Toy-scale high-resolution vision-language model with an exact
//! multiplication-count cost model.
//!
//! The crate provides:
//! * a minimal instrumented autograd engine ([`tensor`]),
//! * a multi-patch vision encoder with paired LoRA adapter sets ([`vision`]),
//! * a frozen causal decoder conditioned through dense cross-attention
//!   blocks ([`decoder`]),
//! * exact integer/rational multiplication-count calculators and ledger
//!   reconciliation ([`cost`]),
//! * evaluation analyses: area tertiles and cross-attention mass
//!   aggregation ([`analysis`]),
//! * a toy training harness on synthetic data ([`train`]).

pub mod analysis;
pub mod config;
pub mod cost;
pub mod decoder;
pub mod error;
pub mod image;
pub mod ledger;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod vision;
pub mod weights;

pub use config::ModelConfig;
pub use decoder::{DecoderGeometry, GenerationOutput, PheyeModel};
pub use error::{Error, Result};
pub use image::Image;
pub use ledger::{MulCategory, MulLedger};
pub use rng::Rng;
pub use tensor::{concat_cols, concat_rows, finite_difference_grad, Tensor};
pub use vision::{LoraConfig, VisionTokens, VitGeometry};
