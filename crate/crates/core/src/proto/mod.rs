//! Wire protocol between the host emulator and the device simulator.
//!
//! Four unidirectional channels (see [`ChannelId`]) carry length-prefixed
//! little-endian frames. Writes are posted; reads carry a tag and are
//! answered in issue order on the paired response channel.

mod channel;
mod checker;
mod message;
pub mod transport;

use thiserror::Error;

pub use channel::{ChannelId, Direction, Role};
pub use checker::ProtocolChecker;
pub use message::{
    decode_body, decode_stream, encode_frame, FrameDecoder, Status, WireMessage, MAX_FRAME_BODY, MAX_PAYLOAD,
    PROTOCOL_VERSION,
};
pub use transport::{open_channel, open_channel_with_version, Endpoint, Stream};

/// Maximum number of outstanding read requests per direction.
pub const MAX_OUTSTANDING: usize = 64;

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("{kind} is not allowed on channel {channel}")]
    ChannelDiscipline { channel: ChannelId, kind: &'static str },
    #[error("tag mismatch on {channel}: expected {expected:?}, got {got}")]
    TagMismatch { channel: ChannelId, expected: Option<u32>, got: u32 },
    #[error("handshake rejected: {0}")]
    HandshakeRejected(String),
    #[error("bad endpoint {0:?}: expected host:port or a socket path")]
    BadEndpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Allocates request tags from a wrapping counter.
#[derive(Debug, Default, Clone)]
pub struct TagAllocator {
    next: u32,
}

impl TagAllocator {
    pub fn next_tag(&mut self) -> u32 {
        let tag = self.next;
        self.next = self.next.wrapping_add(1);
        tag
    }
}
