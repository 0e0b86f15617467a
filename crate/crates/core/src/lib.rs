//! Radio tomographic imaging with directional antennas.
//!
//! The crate covers the full pipeline: link geometry and the ellipse weight
//! model, per-link RSS statistics for omni, multi-channel and directional
//! traces, pattern-pair selection, Tikhonov image reconstruction, Kalman
//! tracking with error metrics, and a seeded RSS simulator.

pub mod error;
pub mod experiment;
pub mod geometry;
pub mod imaging;
pub mod linkstats;
pub mod scenarios;
pub mod selection;
pub mod simulator;
pub mod trace;
pub mod tracking;

pub use error::{Result, RtiError};
