//! Weather-conditioned forward and inverse rendering with rectified flows.
//!
//! A procedural renderer ([`scenegen`], [`dataset`]) produces driving scenes
//! with their intrinsic maps under nine weather classes. A small latent
//! diffusion transformer ([`backbone`], with the map-aware attention of
//! [`maa`]) is trained by flow matching ([`flow`]) either to decompose an
//! image into maps or to render maps back into an image ([`pipelines`]).
//! [`evalkit`] scores the results.

pub mod autograd;
pub mod backbone;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod flow;
pub mod maa;
pub mod model;
pub mod nn;
pub mod pipelines;
pub mod preview;
pub mod rng;
pub mod scenegen;
pub mod tensor;
pub mod wdt;

pub use error::{Error, Result};
