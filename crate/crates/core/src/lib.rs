//! Multi-scale KAM iteration, Diophantine tools, chain dynamics and
//! frequency analysis.

pub mod fourier_taylor;
pub mod hamiltonian;
pub mod diophantine;
pub mod dynamics;
pub mod freq_analysis;
pub mod kam_engine;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
