//! RIS-aided structural health monitoring toolkit.
//!
//! A passive reconfigurable intelligent surface mounted on a structure is
//! tracked by receivers that observe the difference between snapshots taken
//! under two RIS phase profiles. The crate covers the cascade channel model,
//! Fisher information and position error bounds, spatiotemporal cooperation,
//! deformation detection, signal-level estimation and the experiment runners.

pub mod channel;
pub mod cooperation;
pub mod detection;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod fisher;
pub mod geometry;
pub mod linalg;
pub mod scenario;

pub use error::{Error, Result};
