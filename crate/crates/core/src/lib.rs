//! Simulation and training library for metasurface-integrated neural networks.
//!
//! An encoder network at a multi-antenna transmitter, a programmable wireless
//! channel (a reconfigurable intelligent surface or a stacked intelligent
//! metasurface) and a decoder network at the receiver are trained end to end,
//! with gradients propagated analytically through the fading channel.

pub mod baseline;
pub mod channel;
pub mod config;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod metasurface;
pub mod minn;
pub mod neuralnet;
pub mod numerics;
pub mod units;

pub use error::{Error, Result};
