//! Forced oscillator chains, symplectic integration and action-angle charts.

mod chain;
mod chart;
mod potential;
pub mod quadrature;

pub use chain::{
    energy_drift, integrate_symplectic, pendulum_fast_forced, ExtendedState, IntegrateOptions, OscillatorChain,
    Scheme, Trajectory,
};
pub use chart::{fast_action_angle, ActionAngleChart, SEPARATRIX_MARGIN};
pub use potential::{Potential, Spline};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("time step {dt:e} exceeds the forcing resolution bound {bound:e}")]
    StepTooLarge { dt: f64, bound: f64 },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("level set h = {h} is not a closed curve around the origin")]
    LevelSetOpen { h: f64 },
    #[error("energy {h} is within the separatrix margin of {h_sep}")]
    NearSeparatrix { h: f64, h_sep: f64 },
    #[error("point lies outside the chart")]
    OutsideChart,
    #[error("action variable must be positive, got {0}")]
    NonPositiveAction(f64),
    #[error("invalid potential table: {0}")]
    InvalidTable(String),
    #[error("root solve did not converge")]
    NoConvergence,
}
