//! Fixed 8-byte clicker datagram.
//!
//! ```text
//! 0      1    2..4   4..6   6        7
//! magic  seq  x:i16  y:i16  buttons  xor(0..7)
//! ```
//! Multi-byte fields are little-endian. Joystick axes are scaled by 32767.

use thiserror::Error;

pub const CLICKER_MAGIC: u8 = 0xC1;
pub const CLICKER_PACKET_LEN: usize = 8;
pub const BUTTON_PRESS: u8 = 0x01;
const SCALE: f64 = 32767.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClickerError {
    #[error("clicker packet has {0} bytes, expected 8")]
    ShortPacket(usize),
    #[error("bad magic byte {0:#04x}")]
    BadMagic(u8),
    #[error("checksum mismatch: expected {expected:#04x}, got {actual:#04x}")]
    BadChecksum { expected: u8, actual: u8 },
}

/// Joystick and button input as produced by the device.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ClickerInput {
    pub joystick: [f64; 2],
    pub button: bool,
}

/// Decoded packet with the raw (quantized) axis values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct ClickerPacket {
    pub seq: u8,
    pub x: i16,
    pub y: i16,
    pub buttons: u8,
}

fn quantize(v: f64) -> i16 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(-1.0, 1.0) * SCALE).round() as i16
}

fn checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0, |acc, b| acc ^ b)
}

impl ClickerPacket {
    pub fn from_input(input: &ClickerInput, seq: u8) -> Self {
        Self {
            seq,
            x: quantize(input.joystick[0]),
            y: quantize(input.joystick[1]),
            buttons: if input.button { BUTTON_PRESS } else { 0 },
        }
    }

    pub fn joystick(&self) -> [f64; 2] {
        // i16::MIN is outside the scaled range; clamp it to -1.
        [(self.x as f64 / SCALE).max(-1.0), (self.y as f64 / SCALE).max(-1.0)]
    }

    pub fn pressed(&self) -> bool {
        self.buttons & BUTTON_PRESS != 0
    }

    pub fn input(&self) -> ClickerInput {
        ClickerInput {
            joystick: self.joystick(),
            button: self.pressed(),
        }
    }

    pub fn to_bytes(&self) -> [u8; CLICKER_PACKET_LEN] {
        let mut out = [0u8; CLICKER_PACKET_LEN];
        out[0] = CLICKER_MAGIC;
        out[1] = self.seq;
        out[2..4].copy_from_slice(&self.x.to_le_bytes());
        out[4..6].copy_from_slice(&self.y.to_le_bytes());
        out[6] = self.buttons;
        out[7] = checksum(&out[..7]);
        out
    }
}

pub fn encode_clicker(input: &ClickerInput, seq: u8) -> [u8; CLICKER_PACKET_LEN] {
    ClickerPacket::from_input(input, seq).to_bytes()
}

pub fn decode_clicker(bytes: &[u8]) -> Result<ClickerPacket, ClickerError> {
    if bytes.len() != CLICKER_PACKET_LEN {
        return Err(ClickerError::ShortPacket(bytes.len()));
    }
    if bytes[0] != CLICKER_MAGIC {
        return Err(ClickerError::BadMagic(bytes[0]));
    }
    let expected = checksum(&bytes[..7]);
    if expected != bytes[7] {
        return Err(ClickerError::BadChecksum {
            expected,
            actual: bytes[7],
        });
    }
    Ok(ClickerPacket {
        seq: bytes[1],
        x: i16::from_le_bytes([bytes[2], bytes[3]]),
        y: i16::from_le_bytes([bytes[4], bytes[5]]),
        buttons: bytes[6],
    })
}

/// Drops repeated clicker packets. A sequence number is a duplicate if it was
/// accepted within the last `window` packets, which tolerates wrap-around of
/// the 8-bit counter.
#[derive(Clone, Debug)]
pub struct SeqFilter {
    recent: std::collections::VecDeque<u8>,
    window: usize,
}

impl Default for SeqFilter {
    fn default() -> Self {
        Self::new(64)
    }
}

impl SeqFilter {
    pub fn new(window: usize) -> Self {
        Self {
            recent: Default::default(),
            window: window.clamp(1, 255),
        }
    }

    pub fn accept(&mut self, seq: u8) -> bool {
        if self.recent.contains(&seq) {
            return false;
        }
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(seq);
        true
    }

    pub fn reset(&mut self) {
        self.recent.clear();
    }
}
