//! Receivers and Monte Carlo symbol-error-rate simulation for a two-user
//! nonlinear WDM optical link.

pub mod channel;
pub mod cli;
pub mod config;
pub mod demod;
pub mod detect;
pub mod error;
pub mod harness;
pub mod physparams;
pub mod ssfm;
pub mod waveform;

pub use error::{Error, Result};
