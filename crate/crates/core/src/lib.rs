//! Differentiable logic networks for tabular classification.
//!
//! A network binarizes continuous features with learned thresholds, combines
//! the bits through layers of two-input boolean gates, and counts gate outputs
//! per class. Training relaxes gate choice and wiring into softmax mixtures and
//! alternates between optimizing neuron functions and neuron connections;
//! afterwards the network is quantized into a pure boolean circuit
//! ([`discrete::DiscreteNetwork`]) from which rules can be extracted and
//! simplified ([`simplify`]).

pub mod binner;
pub mod cli;
pub mod data;
pub mod discrete;
pub mod error;
pub mod logic;
pub mod manifest;
pub mod model;
pub mod network;
pub mod simplify;
pub mod trainer;

pub use error::{DlnError, Result};
pub use logic::GateId;
pub use network::{Network, NetworkParams, NetworkSpec, PhaseMode};
