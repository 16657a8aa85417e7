//! Audio production style matching through black-box effects.
//!
//! The crate covers the full loop: effect processing ([`dafx`]), spectrogram
//! front end ([`stft`]), a small reverse-mode autodiff engine ([`nn`]), the
//! spectrogram VAE and parameter controller, a zeroth-order gradient bridge
//! across non-differentiable effects ([`spsa`]), multi-resolution spectral
//! losses, data generation, training loops, and embedding analysis tools.

pub mod analysis;
pub mod audio;
pub mod config;
pub mod controller;
pub mod dafx;
pub mod datagen;
pub mod error;
pub mod loss;
pub mod nn;
pub mod spsa;
pub mod stft;
pub mod trainer;
pub mod vae;
pub mod wav;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
