//! Core numerics for fractional parabolic SPDEs on the torus.
#![no_std]
#![cfg_attr(test, allow(unused_imports))]

extern crate alloc;

pub mod error;
pub mod fft;
pub mod flow;
pub mod kernels;
pub mod lattice;
pub mod model;
pub mod noise;
pub mod norms;
pub mod quad;
pub mod rng;
pub mod solver;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Fault, Result};
pub use lattice::{Axis, Domain, Field, LatticeSpec};
