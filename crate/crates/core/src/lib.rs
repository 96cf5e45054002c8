//! Stabilizer-derived multipartite Bell inequalities for GHZ states and
//! device-independent randomness certification.

pub mod behavior;
pub mod bell;
pub mod classical;
pub mod error;
pub mod holevo;
pub mod matrix;
pub mod npa;
pub mod quantum;
pub mod randomness;
pub mod sdp;
pub mod simulator;

pub use behavior::{born_behavior, Behavior, QuantumState};
pub use bell::{build_bell, BellExpression, SettingSelector, Slot};
pub use error::{Error, Result};
pub use matrix::{ComplexMatrix, StateVector};
pub use quantum::ObservableSet;
