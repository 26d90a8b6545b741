//! Coded federated learning over heterogeneous, unreliable edge networks.
//!
//! Clients embed their data with random Fourier features, upload one
//! random linear combination of it, and then train with a straggler
//! deadline chosen so that the server's parity gradient compensates for
//! the expected missing work.

// `!(x > 0.0)` guards reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod coding;
pub mod delay;
pub mod error;
pub mod harness;
pub mod privacy;
pub mod rff;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
