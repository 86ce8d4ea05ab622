//! Sparse subnetwork discovery by iterative magnitude pruning and transfer of
//! the resulting tickets across depths of an architecture family.

pub mod arch;
pub mod data;
pub mod ett;
pub mod eval;
pub mod error;
pub mod nn;
pub mod prune;
pub mod tensor;
pub mod ticket;

pub use error::{Error, Result};
