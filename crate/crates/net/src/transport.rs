//! Stream transports are plain `Read + Write` byte pipes (TCP or the
//! in-process loopback here); datagram transports carry whole packets and may
//! lose them.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, UdpSocket};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One end of an in-process byte pipe. Reads return at most `max_read`
/// bytes, which lets tests exercise reassembly across arbitrary boundaries.
#[derive(Debug)]
pub struct LoopbackStream {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: VecDeque<u8>,
    max_read: usize,
}

impl LoopbackStream {
    pub fn pair() -> (LoopbackStream, LoopbackStream) {
        Self::pair_chunked(usize::MAX)
    }

    pub fn pair_chunked(max_read: usize) -> (LoopbackStream, LoopbackStream) {
        let (atx, brx) = mpsc::channel();
        let (btx, arx) = mpsc::channel();
        let max_read = max_read.max(1);
        (
            LoopbackStream {
                tx: atx,
                rx: arx,
                pending: VecDeque::new(),
                max_read,
            },
            LoopbackStream {
                tx: btx,
                rx: brx,
                pending: VecDeque::new(),
                max_read,
            },
        )
    }
}

impl Read for LoopbackStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pending.is_empty() {
            match self.rx.recv() {
                Ok(chunk) => self.pending.extend(chunk),
                // Peer dropped: end of stream.
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.max_read).min(self.pending.len());
        for (slot, byte) in buf.iter_mut().zip(self.pending.drain(..n)) {
            *slot = byte;
        }
        Ok(n)
    }
}

impl Write for LoopbackStream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "loopback peer closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub trait DatagramTransport: Send {
    fn send_datagram(&mut self, bytes: &[u8]) -> io::Result<()>;
    /// `Ok(None)` on timeout.
    fn recv_datagram(&mut self, timeout: Duration) -> io::Result<Option<Vec<u8>>>;
}

/// In-process datagram link that drops each sent packet with probability
/// `drop_rate`, drawn from its own seeded stream.
#[derive(Debug)]
pub struct LoopbackDatagram {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    drop_rate: f64,
    rng: ChaCha8Rng,
}

impl LoopbackDatagram {
    pub fn pair(drop_rate: f64, seed: u64) -> (LoopbackDatagram, LoopbackDatagram) {
        let (atx, brx) = mpsc::channel();
        let (btx, arx) = mpsc::channel();
        let drop_rate = drop_rate.clamp(0.0, 1.0);
        (
            LoopbackDatagram {
                tx: atx,
                rx: arx,
                drop_rate,
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
            LoopbackDatagram {
                tx: btx,
                rx: brx,
                drop_rate,
                rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5555_5555_5555_5555),
            },
        )
    }
}

impl DatagramTransport for LoopbackDatagram {
    fn send_datagram(&mut self, bytes: &[u8]) -> io::Result<()> {
        if self.drop_rate > 0.0 && self.rng.random::<f64>() < self.drop_rate {
            return Ok(());
        }
        // A vanished receiver looks like loss, as with UDP.
        let _ = self.tx.send(bytes.to_vec());
        Ok(())
    }

    fn recv_datagram(&mut self, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        match self.rx.recv_timeout(timeout) {
            Ok(p) => Ok(Some(p)),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => Ok(None),
        }
    }
}

#[derive(Debug)]
pub struct UdpDatagram {
    socket: UdpSocket,
    peer: SocketAddr,
}

impl UdpDatagram {
    pub fn new(socket: UdpSocket, peer: SocketAddr) -> Self {
        Self { socket, peer }
    }

    /// Two sockets on 127.0.0.1 addressed at each other.
    pub fn local_pair() -> io::Result<(UdpDatagram, UdpDatagram)> {
        let a = UdpSocket::bind("127.0.0.1:0")?;
        let b = UdpSocket::bind("127.0.0.1:0")?;
        let (aa, ba) = (a.local_addr()?, b.local_addr()?);
        Ok((UdpDatagram::new(a, ba), UdpDatagram::new(b, aa)))
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }
}

impl DatagramTransport for UdpDatagram {
    fn send_datagram(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.socket.send_to(bytes, self.peer).map(|_| ())
    }

    fn recv_datagram(&mut self, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        self.socket.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let mut buf = [0u8; 1500];
        match self.socket.recv_from(&mut buf) {
            Ok((n, _)) => Ok(Some(buf[..n].to_vec())),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e),
        }
    }
}
