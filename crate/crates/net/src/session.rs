use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use crate::message::{encode_frame, FrameDecoder, Message, StreamError, PROTOCOL_VERSION};

/// Framed message I/O over a byte stream.
#[derive(Debug)]
pub struct StreamChannel<S> {
    io: S,
    decoder: FrameDecoder,
}

impl<S: Read + Write> StreamChannel<S> {
    pub fn new(io: S) -> Self {
        Self {
            io,
            decoder: FrameDecoder::new(),
        }
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), StreamError> {
        let frame = encode_frame(msg)?;
        self.io.write_all(&frame).map_err(closed_or_io)?;
        self.io.flush().map_err(closed_or_io)
    }

    pub fn recv(&mut self) -> Result<Message, StreamError> {
        let mut buf = [0u8; 8192];
        loop {
            if let Some(m) = self.decoder.next_message()? {
                return Ok(m);
            }
            let n = self.io.read(&mut buf).map_err(closed_or_io)?;
            if n == 0 {
                return Err(StreamError::TransportClosed);
            }
            self.decoder.push(&buf[..n]);
        }
    }

    pub fn into_inner(self) -> S {
        self.io
    }
}

fn closed_or_io(e: std::io::Error) -> StreamError {
    use std::io::ErrorKind::*;
    match e.kind() {
        BrokenPipe | ConnectionReset | ConnectionAborted | UnexpectedEof => StreamError::TransportClosed,
        _ => StreamError::Io(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Hmd,
    Ros,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Hmd => "hmd",
            Role::Ros => "ros",
        }
    }
}

/// Outbound queue shared by any number of producers; the session flushes it
/// in insertion order.
#[derive(Clone, Debug, Default)]
pub struct Outbox(Arc<Mutex<VecDeque<Message>>>);

impl Outbox {
    pub fn push(&self, msg: Message) {
        self.0.lock().expect("outbox poisoned").push_back(msg);
    }

    fn drain(&self) -> Vec<Message> {
        self.0.lock().expect("outbox poisoned").drain(..).collect()
    }
}

type Handler = Box<dyn FnMut(&Message) -> Vec<Message> + Send>;

pub struct Session<S> {
    channel: StreamChannel<S>,
    pub role: Role,
    pub peer_version: String,
    outbox: Outbox,
    handlers: BTreeMap<&'static str, Handler>,
    fallback: Option<Handler>,
}

impl<S: Read + Write> Session<S> {
    pub fn establish(io: S, role: Role) -> Result<Self, StreamError> {
        Self::establish_with_version(io, role, PROTOCOL_VERSION)
    }

    /// Both ends send their hello before reading the peer's, so a mismatch is
    /// detected on both sides.
    pub fn establish_with_version(io: S, role: Role, version: &str) -> Result<Self, StreamError> {
        let mut channel = StreamChannel::new(io);
        channel.send(&Message::Ack {
            version: version.to_string(),
            subject: format!("hello:{}", role.name()),
            value: 0,
        })?;
        let peer_version = match channel.recv()? {
            Message::Ack { version, subject, .. } if subject.starts_with("hello") => version,
            other => return Err(StreamError::Unexpected(other.type_name().to_string())),
        };
        if peer_version != version {
            return Err(StreamError::VersionMismatch {
                local: version.to_string(),
                peer: peer_version,
            });
        }
        Ok(Self {
            channel,
            role,
            peer_version,
            outbox: Outbox::default(),
            handlers: BTreeMap::new(),
            fallback: None,
        })
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), StreamError> {
        self.channel.send(msg)
    }

    pub fn recv(&mut self) -> Result<Message, StreamError> {
        self.channel.recv()
    }

    pub fn outbox(&self) -> Outbox {
        self.outbox.clone()
    }

    pub fn flush(&mut self) -> Result<(), StreamError> {
        for m in self.outbox.drain() {
            self.channel.send(&m)?;
        }
        Ok(())
    }

    pub fn on(&mut self, type_name: &'static str, handler: impl FnMut(&Message) -> Vec<Message> + Send + 'static) {
        self.handlers.insert(type_name, Box::new(handler));
    }

    pub fn on_any(&mut self, handler: impl FnMut(&Message) -> Vec<Message> + Send + 'static) {
        self.fallback = Some(Box::new(handler));
    }

    /// Handles one inbound message: replies from the handler are queued
    /// behind anything already in the outbox, then everything is flushed.
    pub fn dispatch_one(&mut self) -> Result<(), StreamError> {
        let msg = self.channel.recv()?;
        let replies = match self.handlers.get_mut(msg.type_name()) {
            Some(h) => h(&msg),
            None => match &mut self.fallback {
                Some(h) => h(&msg),
                None => vec![Message::Error {
                    trial: None,
                    stage: "dispatch".into(),
                    message: format!("no handler for {}", msg.type_name()),
                }],
            },
        };
        for r in replies {
            self.outbox.push(r);
        }
        self.flush()
    }

    /// Dispatch loop; returns cleanly when the peer closes the stream.
    pub fn run(&mut self) -> Result<(), StreamError> {
        loop {
            match self.dispatch_one() {
                Ok(()) => {}
                Err(StreamError::TransportClosed) => return Ok(()),
                Err(e) => return Err(e),
            }
        }
    }

    pub fn into_inner(self) -> S {
        self.channel.into_inner()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::LoopbackStream;
    use std::thread;

    #[test]
    fn handshake_and_dispatch() {
        let (a, b) = LoopbackStream::pair_chunked(5);
        let server = thread::spawn(move || {
            let mut s = Session::establish(b, Role::Ros).unwrap();
            s.on("ExecuteCmd", |m| match m {
                Message::ExecuteCmd { trial } => vec![Message::ack("done", *trial as u64)],
                _ => unreachable!(),
            });
            s.outbox().push(Message::ack("ready", 0));
            s.flush().unwrap();
            s.run().unwrap();
        });
        let mut c = Session::establish(a, Role::Hmd).unwrap();
        assert_eq!(c.peer_version, "1");
        assert_eq!(c.recv().unwrap(), Message::ack("ready", 0));
        for t in 0..3 {
            c.send(&Message::ExecuteCmd { trial: t }).unwrap();
            assert_eq!(c.recv().unwrap(), Message::ack("done", t as u64));
        }
        c.send(&Message::ack("stray", 0)).unwrap();
        assert!(matches!(c.recv().unwrap(), Message::Error { .. }));
        drop(c);
        server.join().unwrap();
    }

    #[test]
    fn version_mismatch_on_both_ends() {
        let (a, b) = LoopbackStream::pair();
        let server = thread::spawn(move || Session::establish_with_version(b, Role::Ros, "2").err());
        let client = Session::establish(a, Role::Hmd).err();
        assert!(matches!(client, Some(StreamError::VersionMismatch { .. })));
        assert!(matches!(server.join().unwrap(), Some(StreamError::VersionMismatch { .. })));
    }

    #[test]
    fn closed_transport() {
        let (a, b) = LoopbackStream::pair();
        drop(b);
        assert!(matches!(Session::establish(a, Role::Hmd), Err(StreamError::TransportClosed)));
    }
}
