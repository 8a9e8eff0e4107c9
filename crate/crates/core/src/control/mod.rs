//! Emulated master/slave control plane: wire codec, configuration
//! partitioning, block state machines and the daisy-chain bus.

pub mod block;
pub mod chain;
pub mod crc;
pub mod frame;
pub mod partition;

use thiserror::Error;

use crate::array::ArrayError;

pub use block::{
    master_step, slave_step, ApplyReport, BlockMode, BlockOutcome, BlockState, CensusEntry, CensusReport, Event,
    MasterReport, MasterState, NorthCommand, OutcomeKind, Outbound, Port,
};
pub use chain::{BlockSpec, BusRecord, Chain, FaultAction, FaultRule, LinkDirection};
pub use crc::crc16;
pub use frame::{decode_frame, encode_frame, BlockAddress, Frame, FrameError, Opcode, StatusReport};
pub use partition::{partition_config, reassemble, BlockPayloads};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error("MODE_VIOLATION: {0}")]
    ModeViolation(String),
    #[error("ADDRESS_CONFLICT: address {0} answered more than once")]
    AddressConflict(BlockAddress),
    #[error("chain rejected: {0}")]
    Capacity(String),
    #[error("{0} blocks exceed the 16-block address space")]
    TooManyBlocks(usize),
    #[error("blocks of {rows}x{cols} elements do not fit an 8x8 surface board")]
    BlockTooLarge { rows: usize, cols: usize },
    #[error("no block answers to address {0}")]
    MissingBlock(BlockAddress),
    #[error("block {address} unavailable: {reason}")]
    Unavailable { address: BlockAddress, reason: String },
    #[error("master is busy with another operation")]
    Busy,
    #[error("bus made no progress")]
    NoProgress,
}

impl ControlError {
    pub fn code(&self) -> &'static str {
        match self {
            ControlError::Frame(e) => e.code(),
            ControlError::Array(_) => "DIMENSION_MISMATCH",
            ControlError::ModeViolation(_) => "MODE_VIOLATION",
            ControlError::AddressConflict(_) => "ADDRESS_CONFLICT",
            ControlError::Capacity(_) | ControlError::TooManyBlocks(_) | ControlError::BlockTooLarge { .. } => {
                "CHAIN_CAPACITY"
            }
            ControlError::MissingBlock(_) | ControlError::Unavailable { .. } => "BLOCK_UNAVAILABLE",
            ControlError::Busy => "BUSY",
            ControlError::NoProgress => "NO_PROGRESS",
        }
    }
}
