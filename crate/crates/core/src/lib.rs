//! Open-system simulation of a measurement-induced (Zeno) entangling gate
//! between a transmon qutrit and a transmon qubit sharing a cavity.
//!
//! Frequencies are configured in MHz (cyclic) and times in µs; everything is
//! converted to angular units (rad/µs) before it reaches a matrix.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod calib;
pub mod device;
pub mod experiment;
mod kernel;
pub mod lindblad;
pub mod metrics;
pub mod qcore;
pub mod runner;
pub mod sweep;
pub mod tomo;
pub mod traject;
pub mod zeno;

pub use qcore::{C64, CMatrix, CVector};

/// ω = 2π·ν, MHz → rad/µs.
pub fn ang(mhz: f64) -> f64 {
    std::f64::consts::TAU * mhz
}

/// ν = ω/2π, rad/µs → MHz.
pub fn cyc(rad_per_us: f64) -> f64 {
    rad_per_us / std::f64::consts::TAU
}
