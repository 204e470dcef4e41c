//! Message schemas and transports between the HMD side and the robot side.

pub mod clicker;
pub mod message;
pub mod session;
pub mod transport;

pub use clicker::{decode_clicker, encode_clicker, ClickerError, ClickerInput, ClickerPacket, SeqFilter};
pub use message::{decode_payload, encode_frame, FrameDecoder, Message, StreamError, MAX_FRAME_LEN, PROTOCOL_VERSION};
pub use session::{Outbox, Role, Session, StreamChannel};
pub use transport::{DatagramTransport, LoopbackDatagram, LoopbackStream, UdpDatagram};
