//! Deterministic simulator and analysis toolkit for autonomous reef surveys.

pub mod acoustics;
pub mod analysis;
pub mod grid;
pub mod mission;
pub mod rng;
pub mod topics;
pub mod tracking;
pub mod vehicle;
pub mod world;
