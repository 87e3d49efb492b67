//! Simulation and verification of diagonal Ornstein–Uhlenbeck fields driven
//! by symmetric α-stable Lévy noise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod gaussian;
pub mod irregularity;
pub mod levy;
pub mod ou;
pub mod rng;
pub mod runner;
pub mod spaces;
pub mod stats;

pub use error::{Error, Result};
pub use levy::StableLaw;
pub use ou::{FieldPath, JumpEvent, SimulationMode, SpectralModel};
pub use rng::{Lane, StreamKey};
