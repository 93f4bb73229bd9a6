//! Desk-scale laboratory for converting activation-quantized networks into
//! integrate-and-fire spiking networks.
//!
//! The pipeline: train a small network whose hidden activations are
//! quantized to integer states (optionally with uniform noise injected
//! before rounding), copy its weights into a spiking network whose firing
//! thresholds equal p * s per layer, pre-charge membranes to half threshold,
//! then simulate over T time steps and compare against the source network —
//! including the exact identities that hold at T = 1 with p = 1 and at
//! T = p under constant drive.

pub mod checkpoint;
pub mod convert;
pub mod data;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod net;
pub mod quant;
pub mod rng;
pub mod selftest;
pub mod sim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
