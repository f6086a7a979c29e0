//! Mask-constrained adversarial perturbation and deceptive text overlay
//! against a differentiable image/text dual encoder, with SSIM-weighted
//! scoring and a batch pipeline.
//!
//! The attack runs in two stages. [`pmp`] perturbs only the pixels a mask
//! marks as attackable, using momentum sign-gradient steps under an L∞
//! budget and a multi-scale gradient ensemble. [`dtp`] then renders
//! misleading text onto the result. [`metrics`] scores the outcome and
//! [`pipeline`] runs it over a manifest.

pub mod dtp;
pub mod error;
pub mod font;
pub mod image;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pmp;
pub mod png_io;
pub mod resize;
pub mod synth;

pub use error::{Error, Result};
pub use image::{clip_linf, masked_compose, Dims, GradientField, ImageBuffer, MaskImage};
pub use model::{init_model, Caption, DualEncoder, Embedding, ToyDualEncoder};
pub use pmp::{pmp_attack, AttackTrace, PmpConfig};
