//! Desk-scale whole-body motion tracking for a planar floating-base biped.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`motiondata`] builds, curates and retargets reference clips.
//! 2. [`teacher`] trains an oracle tracking policy with PPO on privileged
//!    simulator state.
//! 3. [`student`] distills the oracle into a deployable policy built around a
//!    conditional VAE with a learned prior, trained with online DAgger.
//!
//! [`evaluate`] measures both policies and runs the ablation and
//! observation-noise grids. Everything is seeded and single-writer, so a
//! re-run with the same seed is bit-identical.

pub mod error;
pub mod evaluate;
pub mod hashing;
pub mod motiondata;
pub mod neural;
pub mod rng;
pub mod simulator;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
