//! Daisy chain of blocks on an emulated RS422 bus.
//!
//! Position 0 is the master; link `i` joins positions `i` and `i + 1`. Frames
//! are delivered one at a time from a single FIFO, which keeps every link FIFO
//! in both directions. When the bus goes quiet while the master still waits
//! for replies, the master gets a timer tick.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::block::{
    master_step, slave_step, ApplyReport, BlockMode, BlockState, CensusReport, Event, MasterReport, MasterState,
    NorthCommand, Outbound, Port,
};
use super::frame::{to_hex, BlockAddress, Opcode};
use super::partition::{reassemble, tile_address, BlockPayloads, MAX_BLOCKS};
use super::ControlError;
use crate::array::{ArrayGeometry, PhaseConfig};

pub const MAX_SLAVES: usize = 16;
const MAX_TIMER_ROUNDS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub mode: BlockMode,
    pub address: BlockAddress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkDirection {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FaultAction {
    /// XOR one byte of the frame in flight.
    FlipByte { offset: usize, xor: u8 },
    Drop,
}

/// Corrupts or drops frames matching every populated filter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRule {
    pub link: Option<usize>,
    pub direction: Option<LinkDirection>,
    pub dest: Option<BlockAddress>,
    pub opcode: Option<Opcode>,
    pub action: FaultAction,
    /// Number of frames still to hit; `None` never runs out.
    pub remaining: Option<u32>,
}

impl FaultRule {
    /// Corrupts every frame addressed to `dest` on its way down the chain.
    pub fn corrupt_to(dest: BlockAddress) -> Self {
        Self {
            link: None,
            direction: Some(LinkDirection::Down),
            dest: Some(dest),
            opcode: None,
            action: FaultAction::FlipByte { offset: 6, xor: 0x5A },
            remaining: None,
        }
    }

    fn matches(&self, link: usize, dir: LinkDirection, bytes: &[u8]) -> bool {
        self.remaining != Some(0)
            && self.link.is_none_or(|l| l == link)
            && self.direction.is_none_or(|d| d == dir)
            && self.dest.is_none_or(|d| bytes.get(2) == Some(&d.value()))
            && self.opcode.is_none_or(|o| bytes.get(3) == Some(&(o as u8)))
    }
}

/// One frame on one link, for the JSON-lines bus trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusRecord {
    pub timestamp: u64,
    pub link: usize,
    pub direction: LinkDirection,
    pub hex: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    master: MasterState,
    slaves: Vec<BlockState>,
    faults: Vec<FaultRule>,
    log: Option<Vec<BusRecord>>,
    clock: u64,
}

impl Chain {
    /// `blocks[0]` must be the only master; at most [`MAX_SLAVES`] follow it.
    pub fn new(geometry: ArrayGeometry, blocks: &[BlockSpec]) -> Result<Self, ControlError> {
        let masters = blocks.iter().filter(|b| b.mode == BlockMode::Master).count();
        if masters != 1 {
            return Err(ControlError::Capacity(format!("chain needs exactly one master, found {masters}")));
        }
        if blocks[0].mode != BlockMode::Master {
            return Err(ControlError::Capacity("the master must head the chain".into()));
        }
        if blocks.len() - 1 > MAX_SLAVES {
            return Err(ControlError::Capacity(format!(
                "{} slaves exceed the limit of {MAX_SLAVES}",
                blocks.len() - 1
            )));
        }
        if blocks.iter().any(|b| b.address.is_broadcast()) {
            return Err(ControlError::Capacity("broadcast is not a block address".into()));
        }
        Ok(Self {
            master: MasterState::new(blocks[0].address, geometry),
            slaves: blocks[1..].iter().map(|b| BlockState::new(BlockMode::Slave, b.address)).collect(),
            faults: Vec::new(),
            log: None,
            clock: 0,
        })
    }

    /// One block per tile, switches set to the tile address; tile 0 is the master.
    pub fn for_geometry(geometry: ArrayGeometry) -> Result<Self, ControlError> {
        let n = geometry.block_count();
        if n > MAX_BLOCKS {
            return Err(ControlError::TooManyBlocks(n));
        }
        let specs: Vec<BlockSpec> = (0..geometry.tile_rows)
            .flat_map(|i| (0..geometry.tile_cols).map(move |j| (i, j)))
            .enumerate()
            .map(|(k, (i, j))| BlockSpec {
                mode: if k == 0 { BlockMode::Master } else { BlockMode::Slave },
                address: tile_address(&geometry, i, j),
            })
            .collect();
        Self::new(geometry, &specs)
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.master.geometry
    }

    pub fn master(&self) -> &MasterState {
        &self.master
    }

    pub fn slaves(&self) -> &[BlockState] {
        &self.slaves
    }

    /// Blocks in chain order, master first.
    pub fn blocks(&self) -> impl Iterator<Item = &BlockState> {
        std::iter::once(&self.master.block).chain(self.slaves.iter())
    }

    pub fn len(&self) -> usize {
        1 + self.slaves.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn set_retry_limit(&mut self, limit: u32) {
        self.master.retry_limit = limit;
    }

    pub fn inject(&mut self, rule: FaultRule) {
        self.faults.push(rule);
    }

    pub fn clear_faults(&mut self) {
        self.faults.clear();
    }

    /// Cuts power at chain `position`; it and every block behind it go dark.
    pub fn cut_power(&mut self, position: usize) {
        for (i, s) in self.slaves.iter_mut().enumerate() {
            if i + 1 >= position {
                s.powered = false;
            }
        }
    }

    pub fn restore_power(&mut self) {
        for s in &mut self.slaves {
            s.powered = true;
        }
    }

    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn log(&self) -> &[BusRecord] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn log_jsonl(&self) -> String {
        self.log()
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }

    pub fn run(&mut self, cmd: NorthCommand) -> Result<MasterReport, ControlError> {
        self.master.last_report = None;
        let out = self.step_master(Event::Command(cmd))?;
        let mut queue: VecDeque<(usize, Outbound)> = out.into_iter().map(|o| (0, o)).collect();
        let mut rounds = 0;
        loop {
            while let Some((from, ob)) = queue.pop_front() {
                let (to, link, dir, port) = match ob.port {
                    Port::Downstream => (from + 1, from, LinkDirection::Down, Port::Upstream),
                    Port::Upstream if from == 0 => continue,
                    Port::Upstream => (from - 1, from - 1, LinkDirection::Up, Port::Downstream),
                };
                if to >= self.len() {
                    continue;
                }
                let Some(bytes) = self.transmit(link, dir, ob.bytes) else {
                    continue;
                };
                let event = Event::Inbound { port, bytes };
                let out = if to == 0 {
                    self.step_master(event)?
                } else {
                    let state = std::mem::replace(&mut self.slaves[to - 1], BlockState::new(BlockMode::Slave, BlockAddress::BROADCAST));
                    let (next, out) = slave_step(state, event)?;
                    self.slaves[to - 1] = next;
                    out
                };
                queue.extend(out.into_iter().map(|o| (to, o)));
            }
            if !self.master.is_busy() {
                break;
            }
            rounds += 1;
            if rounds > MAX_TIMER_ROUNDS {
                return Err(ControlError::NoProgress);
            }
            self.clock += 1000;
            queue.extend(self.step_master(Event::Timer)?.into_iter().map(|o| (0, o)));
        }
        self.master.last_report.clone().ok_or(ControlError::NoProgress)
    }

    fn step_master(&mut self, event: Event) -> Result<Vec<Outbound>, ControlError> {
        let (next, out) = master_step(self.master.clone(), event)?;
        self.master = next;
        Ok(out)
    }

    fn transmit(&mut self, link: usize, dir: LinkDirection, mut bytes: Vec<u8>) -> Option<Vec<u8>> {
        self.clock += 1;
        let mut fault = None;
        if let Some(rule) = self.faults.iter_mut().find(|r| r.matches(link, dir, &bytes)) {
            if let Some(n) = rule.remaining.as_mut() {
                *n -= 1;
            }
            match rule.action {
                FaultAction::FlipByte { offset, xor } => {
                    if let Some(b) = bytes.get_mut(offset) {
                        *b ^= xor;
                    }
                    fault = Some(format!("flip byte {offset} ^ {xor:#04x}"));
                }
                FaultAction::Drop => fault = Some("drop".into()),
            }
        }
        let dropped = matches!(fault.as_deref(), Some("drop"));
        if let Some(log) = self.log.as_mut() {
            log.push(BusRecord { timestamp: self.clock, link, direction: dir, hex: to_hex(&bytes), fault });
        }
        (!dropped).then_some(bytes)
    }

    pub fn apply(&mut self, config: &PhaseConfig) -> Result<ApplyReport, ControlError> {
        match self.run(NorthCommand::Apply(config.clone()))? {
            MasterReport::Apply(r) => Ok(r),
            _ => Err(ControlError::NoProgress),
        }
    }

    /// PING census; fails on duplicate addresses.
    pub fn census(&mut self) -> Result<CensusReport, ControlError> {
        match self.run(NorthCommand::Ping)? {
            MasterReport::Census(c) => match c.conflicts.first() {
                Some(a) => Err(ControlError::AddressConflict(*a)),
                None => Ok(c),
            },
            _ => Err(ControlError::NoProgress),
        }
    }

    pub fn status(&mut self) -> Result<CensusReport, ControlError> {
        match self.run(NorthCommand::Status)? {
            MasterReport::Census(c) => Ok(c),
            _ => Err(ControlError::NoProgress),
        }
    }

    pub fn reset(&mut self) -> Result<(), ControlError> {
        self.run(NorthCommand::Reset).map(|_| ())
    }

    /// Global configuration as currently held by the surface boards.
    pub fn assemble(&self) -> Result<PhaseConfig, ControlError> {
        let geom = *self.geometry();
        let mut payloads = BlockPayloads::new();
        for i in 0..geom.tile_rows {
            for j in 0..geom.tile_cols {
                let addr = tile_address(&geom, i, j);
                let block = self
                    .blocks()
                    .find(|b| b.address == addr)
                    .ok_or(ControlError::MissingBlock(addr))?;
                if !block.powered {
                    return Err(ControlError::Unavailable { address: addr, reason: "unpowered".into() });
                }
                if !block.configured {
                    return Err(ControlError::Unavailable { address: addr, reason: "not configured".into() });
                }
                payloads.insert(addr, block.surface);
            }
        }
        reassemble(&payloads, &geom)
    }
}
