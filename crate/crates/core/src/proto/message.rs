//! Bridge messages and their length-prefixed binary framing.
//!
//! Every frame is a little-endian `u32` body length followed by the body.
//! The body starts with a one-byte message type and continues with the
//! message fields in declaration order, all multi-byte integers
//! little-endian. Payload-carrying messages put their data last and the
//! data length is implied by the frame length.

use serde::Serialize;

use super::ProtoError;

/// Largest data payload a single message may carry.
pub const MAX_PAYLOAD: usize = 4096;

/// Upper bound on a frame body: payload plus header slack.
pub const MAX_FRAME_BODY: usize = MAX_PAYLOAD + 32;

/// Protocol version carried in `Hello`.
pub const PROTOCOL_VERSION: u16 = 1;

pub const MSG_HELLO: u8 = 0x00;
pub const MSG_MMIO_READ_REQ: u8 = 0x01;
pub const MSG_MMIO_READ_RESP: u8 = 0x02;
pub const MSG_MMIO_WRITE_REQ: u8 = 0x03;
pub const MSG_HOST_MEM_READ_REQ: u8 = 0x11;
pub const MSG_HOST_MEM_READ_RESP: u8 = 0x12;
pub const MSG_HOST_MEM_WRITE_REQ: u8 = 0x13;
pub const MSG_INTERRUPT_REQ: u8 = 0x21;

/// Completion status carried by read responses and bus completions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    AddressError,
    DisconnectAbort,
}

impl Status {
    pub fn to_u8(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::AddressError => 1,
            Status::DisconnectAbort => 2,
        }
    }

    pub fn from_u8(raw: u8) -> Option<Status> {
        match raw {
            0 => Some(Status::Ok),
            1 => Some(Status::AddressError),
            2 => Some(Status::DisconnectAbort),
            _ => None,
        }
    }

    pub fn is_ok(self) -> bool {
        self == Status::Ok
    }
}

/// One bridge protocol message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        version: u16,
        channel_id: u8,
        role: u8,
    },
    MmioReadReq {
        bar: u8,
        offset: u64,
        len: u32,
        tag: u32,
    },
    MmioReadResp {
        tag: u32,
        status: Status,
        #[serde(with = "hex_bytes")]
        data: Vec<u8>,
    },
    MmioWriteReq {
        bar: u8,
        offset: u64,
        len: u32,
        #[serde(with = "hex_bytes")]
        data: Vec<u8>,
    },
    HostMemReadReq {
        addr: u64,
        len: u32,
        tag: u32,
    },
    HostMemReadResp {
        tag: u32,
        status: Status,
        #[serde(with = "hex_bytes")]
        data: Vec<u8>,
    },
    HostMemWriteReq {
        addr: u64,
        len: u32,
        #[serde(with = "hex_bytes")]
        data: Vec<u8>,
    },
    InterruptReq {
        vector: u16,
    },
}

mod hex_bytes {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(data: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(data))
    }
}

impl WireMessage {
    pub fn msg_type(&self) -> u8 {
        match self {
            WireMessage::Hello { .. } => MSG_HELLO,
            WireMessage::MmioReadReq { .. } => MSG_MMIO_READ_REQ,
            WireMessage::MmioReadResp { .. } => MSG_MMIO_READ_RESP,
            WireMessage::MmioWriteReq { .. } => MSG_MMIO_WRITE_REQ,
            WireMessage::HostMemReadReq { .. } => MSG_HOST_MEM_READ_REQ,
            WireMessage::HostMemReadResp { .. } => MSG_HOST_MEM_READ_RESP,
            WireMessage::HostMemWriteReq { .. } => MSG_HOST_MEM_WRITE_REQ,
            WireMessage::InterruptReq { .. } => MSG_INTERRUPT_REQ,
        }
    }

    /// Snake-case name used in logs.
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "hello",
            WireMessage::MmioReadReq { .. } => "mmio_read_req",
            WireMessage::MmioReadResp { .. } => "mmio_read_resp",
            WireMessage::MmioWriteReq { .. } => "mmio_write_req",
            WireMessage::HostMemReadReq { .. } => "host_mem_read_req",
            WireMessage::HostMemReadResp { .. } => "host_mem_read_resp",
            WireMessage::HostMemWriteReq { .. } => "host_mem_write_req",
            WireMessage::InterruptReq { .. } => "interrupt_req",
        }
    }

    /// Checks the structural invariants that do not depend on device configuration.
    pub fn validate(&self) -> Result<(), ProtoError> {
        let check_len = |len: u32| {
            if len == 0 || len as usize > MAX_PAYLOAD {
                Err(ProtoError::InvalidMessage(format!("length {len} outside 1..={MAX_PAYLOAD}")))
            } else {
                Ok(())
            }
        };
        let check_resp = |status: Status, data: &[u8]| {
            if status.is_ok() {
                if data.is_empty() || data.len() > MAX_PAYLOAD {
                    return Err(ProtoError::InvalidMessage(format!("ok response carries {} data bytes", data.len())));
                }
            } else if !data.is_empty() {
                return Err(ProtoError::InvalidMessage("failed response must not carry data".into()));
            }
            Ok(())
        };
        match self {
            WireMessage::Hello { .. } | WireMessage::InterruptReq { .. } => Ok(()),
            WireMessage::MmioReadReq { len, .. } | WireMessage::HostMemReadReq { len, .. } => check_len(*len),
            WireMessage::MmioWriteReq { len, data, .. } | WireMessage::HostMemWriteReq { len, data, .. } => {
                check_len(*len)?;
                if data.len() != *len as usize {
                    return Err(ProtoError::InvalidMessage(format!(
                        "write declares {len} bytes but carries {}",
                        data.len()
                    )));
                }
                Ok(())
            }
            WireMessage::MmioReadResp { status, data, .. } | WireMessage::HostMemReadResp { status, data, .. } => {
                check_resp(*status, data)
            }
        }
    }
}

/// Encodes `msg` as a complete length-prefixed frame.
pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>, ProtoError> {
    msg.validate()?;
    let mut body = Vec::with_capacity(32);
    body.push(msg.msg_type());
    match msg {
        WireMessage::Hello { version, channel_id, role } => {
            body.extend_from_slice(&version.to_le_bytes());
            body.push(*channel_id);
            body.push(*role);
        }
        WireMessage::MmioReadReq { bar, offset, len, tag } => {
            body.push(*bar);
            body.extend_from_slice(&offset.to_le_bytes());
            body.extend_from_slice(&len.to_le_bytes());
            body.extend_from_slice(&tag.to_le_bytes());
        }
        WireMessage::MmioReadResp { tag, status, data } | WireMessage::HostMemReadResp { tag, status, data } => {
            body.extend_from_slice(&tag.to_le_bytes());
            body.push(status.to_u8());
            body.extend_from_slice(data);
        }
        WireMessage::MmioWriteReq { bar, offset, len, data } => {
            body.push(*bar);
            body.extend_from_slice(&offset.to_le_bytes());
            body.extend_from_slice(&len.to_le_bytes());
            body.extend_from_slice(data);
        }
        WireMessage::HostMemReadReq { addr, len, tag } => {
            body.extend_from_slice(&addr.to_le_bytes());
            body.extend_from_slice(&len.to_le_bytes());
            body.extend_from_slice(&tag.to_le_bytes());
        }
        WireMessage::HostMemWriteReq { addr, len, data } => {
            body.extend_from_slice(&addr.to_le_bytes());
            body.extend_from_slice(&len.to_le_bytes());
            body.extend_from_slice(data);
        }
        WireMessage::InterruptReq { vector } => {
            body.extend_from_slice(&vector.to_le_bytes());
        }
    }
    debug_assert!(body.len() <= MAX_FRAME_BODY);
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtoError> {
        if self.buf.len() - self.pos < n {
            return Err(ProtoError::Malformed("frame body too short".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ProtoError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtoError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ProtoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn status(&mut self) -> Result<Status, ProtoError> {
        let raw = self.u8()?;
        Status::from_u8(raw).ok_or_else(|| ProtoError::Malformed(format!("unknown status {raw}")))
    }

    fn rest(&mut self) -> Vec<u8> {
        let out = self.buf[self.pos..].to_vec();
        self.pos = self.buf.len();
        out
    }

    fn finish(&self) -> Result<(), ProtoError> {
        if self.pos != self.buf.len() {
            return Err(ProtoError::Malformed(format!("{} trailing bytes in frame body", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Decodes one frame body (type byte plus fields, without the length prefix).
pub fn decode_body(body: &[u8]) -> Result<WireMessage, ProtoError> {
    let mut c = Cursor { buf: body, pos: 0 };
    let msg = match c.u8()? {
        MSG_HELLO => WireMessage::Hello { version: c.u16()?, channel_id: c.u8()?, role: c.u8()? },
        MSG_MMIO_READ_REQ => WireMessage::MmioReadReq { bar: c.u8()?, offset: c.u64()?, len: c.u32()?, tag: c.u32()? },
        MSG_MMIO_READ_RESP => WireMessage::MmioReadResp { tag: c.u32()?, status: c.status()?, data: c.rest() },
        MSG_MMIO_WRITE_REQ => {
            WireMessage::MmioWriteReq { bar: c.u8()?, offset: c.u64()?, len: c.u32()?, data: c.rest() }
        }
        MSG_HOST_MEM_READ_REQ => WireMessage::HostMemReadReq { addr: c.u64()?, len: c.u32()?, tag: c.u32()? },
        MSG_HOST_MEM_READ_RESP => WireMessage::HostMemReadResp { tag: c.u32()?, status: c.status()?, data: c.rest() },
        MSG_HOST_MEM_WRITE_REQ => WireMessage::HostMemWriteReq { addr: c.u64()?, len: c.u32()?, data: c.rest() },
        MSG_INTERRUPT_REQ => WireMessage::InterruptReq { vector: c.u16()? },
        other => return Err(ProtoError::UnknownType(other)),
    };
    c.finish()?;
    msg.validate().map_err(|e| ProtoError::Malformed(e.to_string()))?;
    Ok(msg)
}

/// Incremental decoder for a reliable ordered byte stream.
///
/// Bytes may arrive split at arbitrary points; complete frames are yielded
/// once, in order, and any trailing partial frame is retained. After the
/// first error the decoder is poisoned and the channel must be torn down.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    poisoned: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet part of a complete frame.
    pub fn residual(&self) -> &[u8] {
        &self.buf
    }

    /// Returns the next complete message, if any.
    pub fn next_message(&mut self) -> Result<Option<WireMessage>, ProtoError> {
        if self.poisoned {
            return Err(ProtoError::Malformed("decoder poisoned by earlier error".into()));
        }
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(self.buf[..4].try_into().unwrap()) as usize;
        if len == 0 || len > MAX_FRAME_BODY {
            self.poisoned = true;
            return Err(ProtoError::Malformed(format!("frame length {len} out of range")));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let result = decode_body(&self.buf[4..4 + len]);
        self.buf.drain(..4 + len);
        if result.is_err() {
            self.poisoned = true;
        }
        result.map(Some)
    }
}

/// Appends `chunk` to `buffer` and decodes every complete frame, leaving the
/// residual bytes in `buffer`.
pub fn decode_stream(buffer: &mut Vec<u8>) -> Result<Vec<WireMessage>, ProtoError> {
    let mut dec = FrameDecoder { buf: std::mem::take(buffer), poisoned: false };
    let mut out = Vec::new();
    let res = loop {
        match dec.next_message() {
            Ok(Some(m)) => out.push(m),
            Ok(None) => break Ok(out),
            Err(e) => break Err(e),
        }
    };
    *buffer = dec.buf;
    res
}
