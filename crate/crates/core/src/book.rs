//! Guide chapters compiled as doctests so their listings stay runnable.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}
#[doc = include_str!("../../../book/src/states-and-operators.md")]
mod states_and_operators {}
#[doc = include_str!("../../../book/src/classical-processes.md")]
mod classical_processes {}
#[doc = include_str!("../../../book/src/ensemble-dynamics.md")]
mod ensemble_dynamics {}
#[doc = include_str!("../../../book/src/gradients-and-training.md")]
mod gradients_and_training {}
#[doc = include_str!("../../../book/src/caf-qubits.md")]
mod caf_qubits {}
#[doc = include_str!("../../../book/src/rubrene-transport.md")]
mod rubrene_transport {}
#[doc = include_str!("../../../book/src/data-and-cli.md")]
mod data_and_cli {}
