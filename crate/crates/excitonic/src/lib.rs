//! Excitonic energy transfer in pigment model systems.
//!
//! The crate simulates single-exciton dynamics under two open-quantum-system
//! models (secular Redfield and the scaled hierarchical equations of motion),
//! decomposes the energy-transfer efficiency into coherent, decoherent and
//! initial-state contributions, runs Monte Carlo ensembles of unitary
//! evolutions under fluctuating site energies, and synthesizes/inverts
//! process tensors of a dimer from rescaled 2D photon-echo peak amplitudes.
//!
//! Internal working units are rad/fs for generators and fs for time;
//! wavenumbers appear only at I/O boundaries (see [`units`]).

pub mod bathtraj;
pub mod density;
pub mod efficiency;
mod error;
pub mod exec;
pub mod heom;
pub mod integrate;
pub mod linalg;
pub mod qpt;
pub mod redfield;
pub mod superop;
pub mod system;
pub mod units;

pub use error::{Error, Result};
pub use exec::Threading;
pub use linalg::{CMat, CVec};
pub use system::{diagonalize, ExcitonBasis, ExcitonSystem};
