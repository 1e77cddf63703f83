//! Latent-intent modelling and belief-space policy learning for sequential
//! advertising.
//!
//! * [`hmm`]: action-conditioned HMM with scaled forward/backward and EM.
//! * [`belief`]: Bayes filter over hidden intent states.
//! * [`spova`]: smooth-max belief value approximation and its update rule.
//! * [`env`]: synthetic multi-scenario ad auction environment.
//! * [`agents`]: baselines, replay memory and exploration schedules.

pub mod agents;
pub mod belief;
pub mod env;
pub mod error;
pub mod hmm;
pub mod spova;

pub use error::{Error, Result};
