//! Master and slave controller state machines.
//!
//! Both machines are pure: an event goes in, the next state and the frames to
//! transmit come out. `Upstream` is the port facing the master, `Downstream`
//! the port facing the next slave. Slaves store-and-forward: a frame is
//! processed locally before it is passed on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::frame::{decode_frame, encode_frame, BlockAddress, Frame, Opcode, StatusReport, SURFACE_BYTES};
use super::partition::partition_config;
use super::ControlError;
use crate::array::{ArrayGeometry, PhaseConfig};

/// Retransmissions of an unacknowledged SET_CONFIG before the address is failed.
pub const DEFAULT_RETRY_LIMIT: u32 = 3;

/// Up-chain frames are not routed; they carry this destination byte.
const UPLINK_DEST: BlockAddress = match BlockAddress::new(0) {
    Ok(a) => a,
    Err(_) => unreachable!(),
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockMode {
    Master,
    Slave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum StatusCode {
    Ok = 0,
    Unpowered = 1,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockState {
    pub mode: BlockMode,
    pub address: BlockAddress,
    pub surface: [u8; SURFACE_BYTES],
    /// Set by the first accepted SET_CONFIG.
    pub configured: bool,
    pub powered: bool,
    pub frames_seen: u64,
    pub last_error: Option<String>,
}

impl BlockState {
    pub fn new(mode: BlockMode, address: BlockAddress) -> Self {
        Self {
            mode,
            address,
            surface: [0; SURFACE_BYTES],
            configured: false,
            powered: true,
            frames_seen: 0,
            last_error: None,
        }
    }

    pub fn status_report(&self, status: StatusCode) -> StatusReport {
        StatusReport {
            address: self.address,
            status: status as u8,
            powered: self.powered,
            master: self.mode == BlockMode::Master,
            configured: self.configured,
            surface: self.surface,
        }
    }

    fn reply(&self, opcode: Opcode, payload: Vec<u8>) -> Outbound {
        let bytes = encode_frame(&Frame::new(UPLINK_DEST, opcode, payload)).expect("well-formed reply");
        Outbound { port: Port::Upstream, bytes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Port {
    /// Toward the master.
    Upstream,
    /// Toward the end of the chain.
    Downstream,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub port: Port,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NorthCommand {
    Apply(PhaseConfig),
    Status,
    Ping,
    Reset,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Command(NorthCommand),
    Inbound { port: Port, bytes: Vec<u8> },
    Timer,
}

fn mode_byte(mode: BlockMode) -> u8 {
    match mode {
        BlockMode::Master => 0,
        BlockMode::Slave => 1,
    }
}

pub fn slave_step(mut state: BlockState, event: Event) -> Result<(BlockState, Vec<Outbound>), ControlError> {
    if state.mode != BlockMode::Slave {
        return Err(ControlError::ModeViolation("slave_step driven with a master block".into()));
    }
    let (port, bytes) = match event {
        Event::Command(_) => {
            return Err(ControlError::ModeViolation(format!(
                "slave {} received a north-bound command",
                state.address
            )))
        }
        Event::Timer => return Ok((state, Vec::new())),
        Event::Inbound { port, bytes } => (port, bytes),
    };
    if !state.powered {
        return Ok((state, Vec::new()));
    }
    if port == Port::Downstream {
        return Ok((state, vec![Outbound { port: Port::Upstream, bytes }]));
    }

    let frame = match decode_frame(&bytes) {
        Ok(f) => f,
        Err(e) => {
            state.last_error = Some(e.code().to_string());
            return Ok((state, Vec::new()));
        }
    };
    state.frames_seen += 1;
    let mut out = Vec::new();
    if frame.dest == state.address || frame.dest.is_broadcast() {
        match frame.opcode {
            Opcode::SetConfig => {
                state.surface.copy_from_slice(&frame.payload);
                state.configured = true;
                out.push(state.reply(Opcode::StatusReply, state.status_report(StatusCode::Ok).to_bytes()));
            }
            Opcode::GetStatus => {
                out.push(state.reply(Opcode::StatusReply, state.status_report(StatusCode::Ok).to_bytes()));
            }
            Opcode::Ping => {
                out.push(state.reply(Opcode::Pong, vec![state.address.value(), mode_byte(state.mode)]));
            }
            Opcode::Reset => {
                state.surface = [0; SURFACE_BYTES];
            }
            Opcode::StatusReply | Opcode::Pong => {
                state.last_error = Some("UNEXPECTED_OPCODE".into());
            }
        }
    }
    if frame.dest != state.address {
        out.push(Outbound { port: Port::Downstream, bytes });
    }
    Ok((state, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Configured,
    Timeout,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockOutcome {
    pub result: OutcomeKind,
    /// Transmissions of the SET_CONFIG, including the first.
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyReport {
    pub outcomes: BTreeMap<BlockAddress, BlockOutcome>,
}

impl ApplyReport {
    pub fn total(&self) -> usize {
        self.outcomes.len()
    }

    pub fn configured(&self) -> usize {
        self.outcomes.values().filter(|o| o.result == OutcomeKind::Configured).count()
    }

    pub fn is_success(&self) -> bool {
        self.configured() == self.total()
    }

    pub fn failed(&self) -> Vec<BlockAddress> {
        self.outcomes
            .iter()
            .filter(|(_, o)| o.result != OutcomeKind::Configured)
            .map(|(a, _)| *a)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusEntry {
    pub address: BlockAddress,
    pub mode: BlockMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<StatusReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusReport {
    /// Master first, then replies in arrival order.
    pub entries: Vec<CensusEntry>,
    /// Addresses answered by more than one block.
    pub conflicts: Vec<BlockAddress>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MasterReport {
    Apply(ApplyReport),
    Census(CensusReport),
    Reset,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pending {
    bytes: Vec<u8>,
    attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Operation {
    Apply { pending: BTreeMap<BlockAddress, Pending>, report: ApplyReport },
    Census { entries: Vec<CensusEntry> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterState {
    pub block: BlockState,
    pub geometry: ArrayGeometry,
    pub retry_limit: u32,
    op: Option<Operation>,
    pub last_report: Option<MasterReport>,
}

impl MasterState {
    pub fn new(address: BlockAddress, geometry: ArrayGeometry) -> Self {
        Self {
            block: BlockState::new(BlockMode::Master, address),
            geometry,
            retry_limit: DEFAULT_RETRY_LIMIT,
            op: None,
            last_report: None,
        }
    }

    pub fn is_busy(&self) -> bool {
        self.op.is_some()
    }

    fn finish_if_done(&mut self) {
        if let Some(Operation::Apply { pending, report }) = &self.op {
            if pending.is_empty() {
                self.last_report = Some(MasterReport::Apply(report.clone()));
                self.op = None;
            }
        }
    }

    fn finish_census(&mut self, entries: Vec<CensusEntry>) {
        let mut all = vec![CensusEntry {
            address: self.block.address,
            mode: BlockMode::Master,
            status: Some(self.block.status_report(StatusCode::Ok)),
        }];
        all.extend(entries);
        let mut seen = BTreeMap::<BlockAddress, usize>::new();
        for e in &all {
            *seen.entry(e.address).or_default() += 1;
        }
        let conflicts = seen.into_iter().filter(|(_, n)| *n > 1).map(|(a, _)| a).collect();
        self.last_report = Some(MasterReport::Census(CensusReport { entries: all, conflicts }));
        self.op = None;
    }
}

fn broadcast(opcode: Opcode) -> Outbound {
    let bytes = encode_frame(&Frame::new(BlockAddress::BROADCAST, opcode, Vec::new())).expect("empty payload");
    Outbound { port: Port::Downstream, bytes }
}

pub fn master_step(mut state: MasterState, event: Event) -> Result<(MasterState, Vec<Outbound>), ControlError> {
    if state.block.mode != BlockMode::Master {
        return Err(ControlError::ModeViolation("master_step driven with a slave block".into()));
    }
    let mut out = Vec::new();
    match event {
        Event::Command(cmd) => {
            if state.op.is_some() {
                return Err(ControlError::Busy);
            }
            match cmd {
                NorthCommand::Apply(config) => {
                    let parts = partition_config(&config, &state.geometry)?;
                    let mut pending = BTreeMap::new();
                    let mut report = ApplyReport::default();
                    for (addr, field) in parts {
                        if addr == state.block.address {
                            state.block.surface = field;
                            state.block.configured = true;
                            report
                                .outcomes
                                .insert(addr, BlockOutcome { result: OutcomeKind::Configured, attempts: 1, status: Some(0) });
                        } else {
                            let bytes = encode_frame(&Frame::set_config(addr, field))?;
                            out.push(Outbound { port: Port::Downstream, bytes: bytes.clone() });
                            pending.insert(addr, Pending { bytes, attempts: 1 });
                        }
                    }
                    state.op = Some(Operation::Apply { pending, report });
                    state.finish_if_done();
                }
                NorthCommand::Status => {
                    out.push(broadcast(Opcode::GetStatus));
                    state.op = Some(Operation::Census { entries: Vec::new() });
                }
                NorthCommand::Ping => {
                    out.push(broadcast(Opcode::Ping));
                    state.op = Some(Operation::Census { entries: Vec::new() });
                }
                NorthCommand::Reset => {
                    out.push(broadcast(Opcode::Reset));
                    state.block.surface = [0; SURFACE_BYTES];
                    state.last_report = Some(MasterReport::Reset);
                }
            }
        }
        Event::Inbound { port: Port::Upstream, .. } => {}
        Event::Inbound { port: Port::Downstream, bytes } => {
            let frame = match decode_frame(&bytes) {
                Ok(f) => f,
                Err(e) => {
                    state.block.last_error = Some(e.code().to_string());
                    return Ok((state, out));
                }
            };
            state.block.frames_seen += 1;
            match (&mut state.op, frame.opcode) {
                (Some(Operation::Apply { pending, report }), Opcode::StatusReply) => {
                    let status = StatusReport::from_bytes(&frame.payload)?;
                    if let Some(p) = pending.remove(&status.address) {
                        let result = if status.status == StatusCode::Ok as u8 {
                            OutcomeKind::Configured
                        } else {
                            OutcomeKind::Rejected
                        };
                        report
                            .outcomes
                            .insert(status.address, BlockOutcome { result, attempts: p.attempts, status: Some(status.status) });
                    }
                }
                (Some(Operation::Census { entries }), Opcode::StatusReply) => {
                    let status = StatusReport::from_bytes(&frame.payload)?;
                    let mode = if status.master { BlockMode::Master } else { BlockMode::Slave };
                    entries.push(CensusEntry { address: status.address, mode, status: Some(status) });
                }
                (Some(Operation::Census { entries }), Opcode::Pong) => {
                    let address = BlockAddress::new(frame.payload[0])?;
                    let mode = if frame.payload[1] == 0 { BlockMode::Master } else { BlockMode::Slave };
                    entries.push(CensusEntry { address, mode, status: None });
                }
                _ => {}
            }
            state.finish_if_done();
        }
        Event::Timer => match state.op.take() {
            Some(Operation::Apply { mut pending, mut report }) => {
                let limit = state.retry_limit;
                pending.retain(|addr, p| {
                    if p.attempts <= limit {
                        p.attempts += 1;
                        out.push(Outbound { port: Port::Downstream, bytes: p.bytes.clone() });
                        true
                    } else {
                        report
                            .outcomes
                            .insert(*addr, BlockOutcome { result: OutcomeKind::Timeout, attempts: p.attempts, status: None });
                        false
                    }
                });
                state.op = Some(Operation::Apply { pending, report });
                state.finish_if_done();
            }
            Some(Operation::Census { entries }) => state.finish_census(entries),
            None => {}
        },
    }
    Ok((state, out))
}
