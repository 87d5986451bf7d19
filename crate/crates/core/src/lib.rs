#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod laws;
pub mod quad;
pub mod rng;

pub use error::{Error, Result};
pub mod acceptance;
pub mod brw;
pub mod cltlab;
pub mod occupancy;
pub mod renewal;
pub mod stats;
