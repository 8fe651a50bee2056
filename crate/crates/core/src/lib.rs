//! Fused species-distribution models for distance-sampling (DS) and
//! capture–recapture (CR) surveys.
//!
//! The latent population is an inhomogeneous Poisson point process with
//! intensity `λ(s) = exp(x(s)'β)`. DS detections thin it by a half-normal
//! `exp(-d²/φ)` inside each point or transect region, CR captures by a
//! constant `θ` inside each trap region. The crate simulates both surveys,
//! fits five competing likelihoods (complete locations, two spatially
//! aggregated models, and two fused partial-location models), and runs the
//! replicate study comparing them.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariates;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod geometry;
pub mod likelihoods;
pub mod par;
pub mod pointprocess;
mod rng;

pub use error::{Error, Result};
pub use rng::replicate_seed;
