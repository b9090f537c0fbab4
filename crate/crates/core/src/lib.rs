//! Numerical laboratory for the rescaled fluctuating Ising-Kac-Kawasaki
//! equation and the stochastic Cahn-Hilliard equation on the unit torus
//! `[-1/2, 1/2)`.
//!
//! Fourier modes are `exp(2 pi i k x)`, so `d/dx` acts as `2 pi i k`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ch;
pub mod entropy;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod ikk;
pub mod kernel;
pub mod noise;
pub mod skeleton;
pub mod trajectory;

pub use error::{Error, Result};
pub use grid::{Field, SpectralGrid, Spectrum};
pub use kernel::Kernel;
pub use trajectory::{ControlField, Trajectory};
