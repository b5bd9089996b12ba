#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod aggregate;
pub mod eval;
pub mod instances;
pub mod model;
pub mod rng;
pub mod training;
pub mod signal;
pub mod stats;
pub mod synthgen;
