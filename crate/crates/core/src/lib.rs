//! Simulation of a measurement-induced nonlinear transformation of qutrit
//! states and of the state-identification algorithm that iterates it.

pub mod ensemble;
pub mod error;
pub mod montecarlo;
pub mod protocol;
pub mod qsi;
pub mod state;

pub use error::{QsiError, Result};
