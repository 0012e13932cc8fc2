//! Optical-nanofiber two-color trap simulator.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`, see
//! [`Scalar`]); the aliases below fix it to `f64`, which the CLI uses.

// `!(x > 0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod atom;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod fiber;
pub mod io;
pub mod linalg;
pub mod lsq;
pub mod scalar;
pub mod special;
pub mod trap;
pub mod units;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type AtomSpecies = atom::AtomSpecies<f64>;
pub type FiberSpec = fiber::FiberSpec<f64>;
pub type ModeSolution = fiber::ModeSolution<f64>;
pub type BeamSpec = trap::BeamSpec<f64>;
pub type TrapConfig = trap::TrapConfig<f64>;
pub type PotentialField = trap::PotentialField<f64>;
pub type TrapReport = trap::TrapReport<f64>;
pub type TimeSeries = analysis::TimeSeries<f64>;
pub type Spectrum = analysis::Spectrum<f64>;
pub type SpectrumPeak = analysis::SpectrumPeak<f64>;
pub type InitialDistribution = dynamics::InitialDistribution<f64>;
pub type SignalModel = dynamics::SignalModel<f64>;
pub type Scenario = config::Scenario<f64>;
