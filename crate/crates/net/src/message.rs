//! Stream messages: JSON payloads behind a 32-bit big-endian length prefix.

use rams_core::arm::JointConfig;
use rams_core::geometry::{FrameId, RigidTransform};
use rams_core::human::AvatarTracking;
use rams_core::planning::JointTrajectory;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: &str = "1";
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;
pub const MESSAGE_TYPES: [&str; 7] = [
    "PoseUpdate",
    "AvatarUpdate",
    "TargetConfirm",
    "TrajectoryMsg",
    "ExecuteCmd",
    "Ack",
    "Error",
];

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("malformed JSON payload: {0}")]
    MalformedJson(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("transport closed")]
    TransportClosed,
    #[error("protocol version mismatch: local {local}, peer {peer}")]
    VersionMismatch { local: String, peer: String },
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    PoseUpdate {
        trial: u32,
        parent: FrameId,
        child: FrameId,
        pose: RigidTransform,
        #[serde(default)]
        stamp: f64,
    },
    AvatarUpdate {
        trial: u32,
        /// Frame the tracking data is expressed in.
        frame: FrameId,
        tracking: AvatarTracking,
    },
    TargetConfirm {
        trial: u32,
        accepted: bool,
        /// Instrument pose in the image frame.
        pose: RigidTransform,
    },
    TrajectoryMsg {
        trial: u32,
        trajectory: JointTrajectory,
        flange_goal: RigidTransform,
        start: JointConfig,
        /// Wall-clock seconds; the only non-deterministic field.
        planning_time: f64,
    },
    ExecuteCmd {
        trial: u32,
    },
    Ack {
        version: String,
        subject: String,
        #[serde(default)]
        value: u64,
    },
    Error {
        trial: Option<u32>,
        stage: String,
        message: String,
    },
}

impl Message {
    pub fn ack(subject: &str, value: u64) -> Self {
        Message::Ack {
            version: PROTOCOL_VERSION.to_string(),
            subject: subject.to_string(),
            value,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Message::PoseUpdate { .. } => "PoseUpdate",
            Message::AvatarUpdate { .. } => "AvatarUpdate",
            Message::TargetConfirm { .. } => "TargetConfirm",
            Message::TrajectoryMsg { .. } => "TrajectoryMsg",
            Message::ExecuteCmd { .. } => "ExecuteCmd",
            Message::Ack { .. } => "Ack",
            Message::Error { .. } => "Error",
        }
    }

    /// Copy with wall-clock fields zeroed, for comparing runs.
    pub fn without_timing(&self) -> Message {
        let mut m = self.clone();
        if let Message::TrajectoryMsg { planning_time, .. } = &mut m {
            *planning_time = 0.0;
        }
        m
    }
}

pub fn encode_payload(msg: &Message) -> Vec<u8> {
    serde_json::to_vec(msg).expect("messages always serialize")
}

pub fn decode_payload(payload: &[u8]) -> Result<Message, StreamError> {
    let value: serde_json::Value =
        serde_json::from_slice(payload).map_err(|e| StreamError::MalformedJson(e.to_string()))?;
    match value.get("type").and_then(|t| t.as_str()) {
        Some(t) if MESSAGE_TYPES.contains(&t) => {}
        Some(t) => return Err(StreamError::UnknownType(t.to_string())),
        None => return Err(StreamError::MalformedJson("missing \"type\" field".into())),
    }
    // Parse from the bytes again: going through `Value` would lose the exact
    // float round trip for some inputs.
    serde_json::from_slice(payload).map_err(|e| StreamError::MalformedJson(e.to_string()))
}

pub fn frame_bytes(payload: &[u8]) -> Result<Vec<u8>, StreamError> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(StreamError::FrameTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, StreamError> {
    frame_bytes(&encode_payload(msg))
}

/// Incremental reassembly of length-prefixed frames from arbitrary chunks.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete payload, if one is buffered. An oversized length prefix
    /// is reported as soon as the header arrives.
    pub fn next_payload(&mut self) -> Result<Option<Vec<u8>>, StreamError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize;
        if len > MAX_FRAME_LEN {
            return Err(StreamError::FrameTooLarge(len));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let payload = self.buf[4..4 + len].to_vec();
        self.buf.drain(..4 + len);
        Ok(Some(payload))
    }

    pub fn next_message(&mut self) -> Result<Option<Message>, StreamError> {
        match self.next_payload()? {
            Some(p) => decode_payload(&p).map(Some),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose_msg() -> Message {
        Message::PoseUpdate {
            trial: 3,
            parent: FrameId::N,
            child: FrameId::P,
            pose: RigidTransform::translation_xyz(0.1, -0.2, 0.3) * RigidTransform::rot_z(0.7),
            stamp: 0.25,
        }
    }

    #[test]
    fn frame_prefix_is_big_endian_length() {
        let f = encode_frame(&Message::ack("hello", 0)).unwrap();
        let len = u32::from_be_bytes([f[0], f[1], f[2], f[3]]) as usize;
        assert_eq!(len, f.len() - 4);
        let v: serde_json::Value = serde_json::from_slice(&f[4..]).unwrap();
        assert_eq!(v["type"], "Ack");
        assert_eq!(v["version"], "1");
    }

    #[test]
    fn byte_at_a_time_reassembly() {
        let a = pose_msg();
        let b = Message::ExecuteCmd { trial: 9 };
        let mut bytes = encode_frame(&a).unwrap();
        bytes.extend(encode_frame(&b).unwrap());
        let mut d = FrameDecoder::new();
        let mut out = Vec::new();
        for byte in bytes {
            d.push(&[byte]);
            while let Some(m) = d.next_message().unwrap() {
                out.push(m);
            }
        }
        assert_eq!(out, vec![a, b]);
        assert_eq!(d.buffered(), 0);
    }

    #[test]
    fn oversized_frames_rejected() {
        let payload = vec![b' '; 17 * 1024 * 1024];
        assert!(matches!(frame_bytes(&payload), Err(StreamError::FrameTooLarge(_))));
        let mut d = FrameDecoder::new();
        d.push(&((17u32 * 1024 * 1024).to_be_bytes()));
        assert!(matches!(d.next_payload(), Err(StreamError::FrameTooLarge(_))));
    }

    #[test]
    fn payload_errors() {
        assert!(matches!(decode_payload(b"{not json"), Err(StreamError::MalformedJson(_))));
        assert!(matches!(decode_payload(b"{\"x\":1}"), Err(StreamError::MalformedJson(_))));
        assert!(matches!(
            decode_payload(b"{\"type\":\"Teleport\"}"),
            Err(StreamError::UnknownType(t)) if t == "Teleport"
        ));
        // Known type with missing fields.
        assert!(matches!(decode_payload(b"{\"type\":\"ExecuteCmd\"}"), Err(StreamError::MalformedJson(_))));
    }

    #[test]
    fn timing_is_stripped() {
        let m = Message::Error {
            trial: None,
            stage: "x".into(),
            message: "y".into(),
        };
        assert_eq!(m.without_timing(), m);
    }
}
