//! Differentiable open-quantum-system dynamics driven by trainable classical
//! processes.
//!
//! A model couples a Lindblad master equation to a set of classical stochastic
//! signals ε(t) that modulate Hamiltonian terms. Ensembles of noise
//! realizations are integrated with a trace-preserving first-order Kraus
//! step, observables are averaged over the ensemble, and the flexible
//! parameters of the processes, jump rates and pulse errors are fitted to
//! time-series data by reverse-mode differentiation through the full
//! trajectory.
//!
//! Two case studies ship with the library: [`caf`] (tweezer-trapped molecular
//! qubits under Ramsey, echo and XY8 sequences) and [`rubrene`] (Holstein
//! carrier transport and mobility estimation).

pub mod caf;
pub mod cli;
pub mod dataio;
pub mod dynamics;
pub mod error;
pub mod grad;
pub mod hilbert;
pub mod linalg;
pub mod models;
pub mod processes;
pub mod rubrene;
pub mod units;

#[cfg(doctest)]
mod book;

pub use error::{Error, Result};
