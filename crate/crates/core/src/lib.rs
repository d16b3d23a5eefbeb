//! Forecasting the hate-intensity profile of a conversation thread from its
//! first replies.
//!
//! The pipeline turns replies into window intensity profiles, learns
//! history/future latents with a dual-encoder autoencoder, clusters the joint
//! latents with a Gaussian mixture, and predicts a new thread's future latent
//! from its history, reply tree, and sentiment, decoding it back into a
//! profile.

pub mod checkpoint;
#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod evalcli;
pub mod forecaster;
pub mod intensity;
pub mod numcore;
mod par;
pub mod seqae;
pub mod strata;
pub mod threadstore;
pub mod treenc;

pub use error::{Error, Result};
