//! Certification and synthesis for networked control loops with Bernoulli
//! packet loss: second-moment stability and strict passivity via coupled
//! LMIs, a spectral-radius oracle, and Monte Carlo simulation.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod lmi;
pub mod model;
pub mod numerics;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
