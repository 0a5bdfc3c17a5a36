//! Nonparametric input-uncertainty aware multiple comparison with the best.

pub mod el;
pub mod extension;
pub mod harness;
pub mod influence;
pub mod model;
pub mod procedure;
pub mod stats;
