//! Inter-block wire frame.
//!
//! ```text
//! +------+---------+------+--------+--------+-----------+--------+--------+
//! | 0xA5 | version | dest | opcode | length | payload.. | crc_hi | crc_lo |
//! +------+---------+------+--------+--------+-----------+--------+--------+
//! ```
//!
//! `dest` is a 4-bit block address (0x00–0x0F) or 0xFF for broadcast. The CRC
//! covers `version` through the last payload byte.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::crc::crc16;

pub const SOF: u8 = 0xA5;
pub const PROTOCOL_VERSION: u8 = 0x01;
pub const MAX_PAYLOAD: usize = 64;
pub const HEADER_LEN: usize = 5;
pub const OVERHEAD: usize = HEADER_LEN + 2;
/// One 8×8 block of surface bits.
pub const SURFACE_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("BAD_SOF: first byte {0:#04x}")]
    BadSof(u8),
    #[error("TRUNCATED: have {have} bytes, need {need}")]
    Truncated { have: usize, need: usize },
    #[error("BAD_CRC: frame carries {got:#06x}, computed {expected:#06x}")]
    BadCrc { expected: u16, got: u16 },
    #[error("BAD_OPCODE: {0:#04x}")]
    BadOpcode(u8),
    #[error("BAD_LENGTH: {0} exceeds {MAX_PAYLOAD}")]
    BadLength(usize),
    #[error("BAD_PAYLOAD: {opcode} expects {expected} bytes, got {got}")]
    PayloadMismatch { opcode: Opcode, expected: usize, got: usize },
    #[error("BAD_ADDRESS: {0:#04x}")]
    BadAddress(u8),
    #[error("TRAILING_BYTES: {0} bytes after frame end")]
    TrailingBytes(usize),
}

impl FrameError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            FrameError::BadSof(_) => "BAD_SOF",
            FrameError::Truncated { .. } => "TRUNCATED",
            FrameError::BadCrc { .. } => "BAD_CRC",
            FrameError::BadOpcode(_) => "BAD_OPCODE",
            FrameError::BadLength(_) => "BAD_LENGTH",
            FrameError::PayloadMismatch { .. } => "BAD_PAYLOAD",
            FrameError::BadAddress(_) => "BAD_ADDRESS",
            FrameError::TrailingBytes(_) => "TRAILING_BYTES",
        }
    }
}

/// 4-bit block address set on the controller's toggle switches, or broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BlockAddress(u8);

impl BlockAddress {
    pub const BROADCAST: BlockAddress = BlockAddress(0xFF);
    pub const MAX_UNICAST: u8 = 0x0F;

    pub const fn new(value: u8) -> Result<Self, FrameError> {
        match value {
            0..=Self::MAX_UNICAST | 0xFF => Ok(Self(value)),
            other => Err(FrameError::BadAddress(other)),
        }
    }

    /// `switches = [b3, b2, b1, b0]`, most significant first.
    pub fn from_switches(switches: [bool; 4]) -> Self {
        Self(switches.iter().fold(0u8, |acc, &b| acc << 1 | b as u8))
    }

    pub fn switches(self) -> [bool; 4] {
        [self.0 & 8 != 0, self.0 & 4 != 0, self.0 & 2 != 0, self.0 & 1 != 0]
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }
}

impl TryFrom<u8> for BlockAddress {
    type Error = FrameError;

    fn try_from(value: u8) -> Result<Self, FrameError> {
        Self::new(value)
    }
}

impl From<BlockAddress> for u8 {
    fn from(a: BlockAddress) -> u8 {
        a.0
    }
}

impl fmt::Display for BlockAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_broadcast() {
            f.write_str("broadcast")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum Opcode {
    SetConfig = 0x01,
    GetStatus = 0x02,
    StatusReply = 0x03,
    Ping = 0x04,
    Pong = 0x05,
    Reset = 0x06,
}

impl Opcode {
    pub const ALL: [Opcode; 6] = [
        Opcode::SetConfig,
        Opcode::GetStatus,
        Opcode::StatusReply,
        Opcode::Ping,
        Opcode::Pong,
        Opcode::Reset,
    ];

    pub fn from_byte(b: u8) -> Result<Self, FrameError> {
        Self::ALL.into_iter().find(|o| *o as u8 == b).ok_or(FrameError::BadOpcode(b))
    }

    pub fn payload_len(self) -> usize {
        match self {
            Opcode::SetConfig => SURFACE_BYTES,
            Opcode::StatusReply => StatusReport::LEN,
            Opcode::Pong => 2,
            Opcode::GetStatus | Opcode::Ping | Opcode::Reset => 0,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        let norm = name.to_ascii_uppercase().replace('-', "_");
        Self::ALL.into_iter().find(|o| o.to_string() == norm)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Opcode::SetConfig => "SET_CONFIG",
            Opcode::GetStatus => "GET_STATUS",
            Opcode::StatusReply => "STATUS_REPLY",
            Opcode::Ping => "PING",
            Opcode::Pong => "PONG",
            Opcode::Reset => "RESET",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub version: u8,
    pub dest: BlockAddress,
    pub opcode: Opcode,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(dest: BlockAddress, opcode: Opcode, payload: Vec<u8>) -> Self {
        Self { version: PROTOCOL_VERSION, dest, opcode, payload }
    }

    pub fn set_config(dest: BlockAddress, surface: [u8; SURFACE_BYTES]) -> Self {
        Self::new(dest, Opcode::SetConfig, surface.to_vec())
    }

    pub fn encoded_len(&self) -> usize {
        OVERHEAD + self.payload.len()
    }

    fn check(&self) -> Result<(), FrameError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(FrameError::BadLength(self.payload.len()));
        }
        let expected = self.opcode.payload_len();
        if self.payload.len() != expected {
            return Err(FrameError::PayloadMismatch { opcode: self.opcode, expected, got: self.payload.len() });
        }
        Ok(())
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    frame.check()?;
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(&[SOF, frame.version, frame.dest.value(), frame.opcode as u8, frame.payload.len() as u8]);
    out.extend_from_slice(&frame.payload);
    let crc = crc16(&out[1..]);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

/// Decodes one frame from the front of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
    let Some(&first) = bytes.first() else {
        return Err(FrameError::Truncated { have: 0, need: OVERHEAD });
    };
    if first != SOF {
        return Err(FrameError::BadSof(first));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated { have: bytes.len(), need: OVERHEAD });
    }
    let len = bytes[4] as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::BadLength(len));
    }
    let total = OVERHEAD + len;
    if bytes.len() < total {
        return Err(FrameError::Truncated { have: bytes.len(), need: total });
    }
    let expected = crc16(&bytes[1..HEADER_LEN + len]);
    let got = u16::from_be_bytes([bytes[total - 2], bytes[total - 1]]);
    if expected != got {
        return Err(FrameError::BadCrc { expected, got });
    }
    let opcode = Opcode::from_byte(bytes[3])?;
    let dest = BlockAddress::new(bytes[2])?;
    let frame = Frame { version: bytes[1], dest, opcode, payload: bytes[HEADER_LEN..HEADER_LEN + len].to_vec() };
    frame.check()?;
    Ok((frame, total))
}

/// Decodes exactly one frame; trailing bytes are an error.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    let (frame, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FrameError::TrailingBytes(bytes.len() - used));
    }
    Ok(frame)
}

/// Body of a STATUS_REPLY.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusReport {
    pub address: BlockAddress,
    /// 0 on success, otherwise a [`super::block::StatusCode`] value.
    pub status: u8,
    pub powered: bool,
    pub master: bool,
    pub configured: bool,
    pub surface: [u8; SURFACE_BYTES],
}

impl StatusReport {
    pub const LEN: usize = 3 + SURFACE_BYTES;

    pub fn to_bytes(&self) -> Vec<u8> {
        let flags = self.powered as u8 | (self.master as u8) << 1 | (self.configured as u8) << 2;
        let mut out = vec![self.address.value(), self.status, flags];
        out.extend_from_slice(&self.surface);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, FrameError> {
        if b.len() != Self::LEN {
            return Err(FrameError::PayloadMismatch { opcode: Opcode::StatusReply, expected: Self::LEN, got: b.len() });
        }
        let mut surface = [0u8; SURFACE_BYTES];
        surface.copy_from_slice(&b[3..]);
        Ok(Self {
            address: BlockAddress::new(b[0])?,
            status: b[1],
            powered: b[2] & 1 != 0,
            master: b[2] & 2 != 0,
            configured: b[2] & 4 != 0,
            surface,
        })
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn from_hex(text: &str) -> Option<Vec<u8>> {
    let digits: Vec<u8> = text.bytes().filter(|c| !c.is_ascii_whitespace()).collect();
    if !digits.len().is_multiple_of(2) {
        return None;
    }
    digits
        .chunks(2)
        .map(|p| u8::from_str_radix(std::str::from_utf8(p).ok()?, 16).ok())
        .collect()
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::to_hex(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        super::from_hex(&text).ok_or_else(|| serde::de::Error::custom("invalid hex"))
    }
}
