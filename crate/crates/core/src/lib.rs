//! Synthesis of minimum-information memoryless LQG controllers.
//!
//! For a stable linear-Gaussian plant and a quadratic cost, this crate
//! computes the memoryless linear controller that achieves a given external
//! cost with the least Shannon information flowing from sensor to actuator.
//! It solves the coupled forward/backward stationarity system at a trade-off
//! coefficient `beta`, sweeps the information-cost curve, detects
//! controller-order phase transitions, builds the matched additive Gaussian
//! channel realization, and validates everything against Monte Carlo
//! simulation and brute-force oracles.

pub mod channel;
pub mod controller;
pub mod error;
pub mod plant;
pub mod psd;
pub mod sim;
pub mod solver;
pub mod tradeoff;
pub mod waterfill;

pub use controller::{ControllerEstimator, ControllerRaw};
pub use error::{Error, Result};
pub use plant::{CostSpec, ObservationStats, PlantSpec};
pub use psd::{PsdMatrix, SymMatrix, Tolerance};
pub use solver::{FixedPointState, SolveReport, SolverConfig};
pub use tradeoff::{SweepResult, TradeoffPoint};
