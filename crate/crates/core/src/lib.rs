// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Digital twin of a 1-bit reconfigurable intelligent surface: unit-cell
//! model, array response, configuration search and the block control plane.

pub mod array;
pub mod cell;
pub mod control;
pub mod optimizer;
pub mod scenario;
pub mod testbed;

pub use array::{ArrayGeometry, Direction, PhaseConfig, Placement};
pub use cell::{PinState, UnitCellModel};
pub use optimizer::{ElementOrder, OptimizerSettings, PowerTrace, TraceEntry};
pub use scenario::Scenario;
pub use testbed::{RunStatus, Testbed, TestbedError};
