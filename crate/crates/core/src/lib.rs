//! Gradient-informativeness quantities for almost pairwise independent
//! hypothesis classes: pairwise-independence metrics, collision entropy,
//! variance bounds, and exact enumeration oracles that certify
//! them on small instances.

pub mod bound_check;
pub mod error;
pub mod gradient;
pub mod highfreq;
pub mod hypothesis;
pub mod independence;
pub mod lwe_lab;
pub mod measures;
pub mod modular;
pub mod symmetric;

pub use error::{Error, Result};
