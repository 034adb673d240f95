//! Fluvial-channel geomodelling with a generative prior.
//!
//! The pipeline has four stages:
//!
//! 1. [`obm`] synthesizes binary training images by stamping sinusoidal
//!    channels until the channel proportion reaches a target.
//! 2. [`gan`] trains a small DC-GAN on those images, built from the
//!    hand-written kernels in [`diffnet`].
//! 3. [`inpaint`] produces realizations that honor sparse point measurements
//!    by optimizing the generator's latent vector against a weighted
//!    context loss plus a discriminator prior loss.
//! 4. [`evalstats`] checks proportions, mean images and sample diversity.
//!
//! Data-parallel loops go through [`par`], which falls back to sequential
//! execution when the `parallel` feature is disabled or a single worker is
//! requested.

pub mod cli;
pub mod diffnet;
pub mod domain;
pub mod evalstats;
pub mod gan;
pub mod inpaint;
pub mod obm;
pub mod par;
pub mod seed;

mod error;

pub use error::{Error, Result};
