//! Simulation and control workbench for the twin-column mAb capture step.
//!
//! The crate couples a general-rate-model simulator of the loading column
//! ([`grm`]) with the switching plant ([`plant`]), four switching controllers
//! (1% breakthrough, exact integer EMPC, sigmoid-relaxed EMPC and ReLU
//! surrogate EMPC, see [`empc`] and [`surrogate`]), a PPO agent ([`rl`]) and
//! an experiment harness ([`harness`]).

pub mod error;
pub mod empc;
pub mod grm;
pub mod harness;
pub mod nn;
pub mod plant;
pub mod rl;
pub mod surrogate;

pub use error::{Error, Result};
