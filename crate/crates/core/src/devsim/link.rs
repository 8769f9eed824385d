//! How the kernel reaches the host: real sockets or an in-process loopback.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use crate::proto::transport::{Acceptor, AcceptorHandle, SessionEvent};
use crate::proto::{encode_frame, ChannelId, Endpoint, Stream, WireMessage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkEvent {
    Up,
    Down(String),
    Message(ChannelId, WireMessage),
    /// The peer broke the protocol; the session is gone.
    ProtocolError(String),
}

pub trait DeviceLink {
    /// Appends every event available without blocking.
    fn poll(&mut self, out: &mut Vec<LinkEvent>);
    /// Blocks for up to `timeout` until an event is available.
    fn wait(&mut self, timeout: Duration) -> bool;
    fn send(&mut self, channel: ChannelId, msg: &WireMessage);
}

/// Device end of the four-channel socket topology.
pub struct SocketDeviceLink {
    rx: Receiver<SessionEvent>,
    stashed: VecDeque<SessionEvent>,
    handle: AcceptorHandle,
    generation: Option<u64>,
    writers: Vec<Stream>,
    send_failures: u64,
}

impl SocketDeviceLink {
    pub fn listen(endpoint: &Endpoint) -> std::io::Result<Self> {
        let acceptor = Acceptor::bind(endpoint)?;
        let (tx, rx) = mpsc::channel();
        let handle = acceptor.spawn(tx);
        Ok(SocketDeviceLink {
            rx,
            stashed: VecDeque::new(),
            handle,
            generation: None,
            writers: Vec::new(),
            send_failures: 0,
        })
    }

    pub fn local_endpoint(&self) -> &Endpoint {
        self.handle.local_endpoint()
    }

    pub fn is_connected(&self) -> bool {
        self.generation.is_some()
    }

    pub fn send_failures(&self) -> u64 {
        self.send_failures
    }

    /// Stops accepting and closes the current session.
    pub fn close(&mut self) {
        self.handle.stop();
        self.writers.clear();
        self.generation = None;
    }

    fn translate(&mut self, ev: SessionEvent, out: &mut Vec<LinkEvent>) {
        if let Some(e) = self.translate_one(ev, out) {
            out.push(e);
        }
    }

    fn translate_one(&mut self, ev: SessionEvent, out: &mut Vec<LinkEvent>) -> Option<LinkEvent> {
        match ev {
            SessionEvent::Up { generation, writers } => {
                if self.generation.is_some_and(|g| g != generation) {
                    out.push(LinkEvent::Down("superseded by a new session".into()));
                }
                self.generation = Some(generation);
                self.writers = writers;
                Some(LinkEvent::Up)
            }
            SessionEvent::Message { generation, channel, msg } => {
                (self.generation == Some(generation)).then_some(LinkEvent::Message(channel, msg))
            }
            SessionEvent::ProtocolError { generation, channel, error } => {
                if self.generation != Some(generation) {
                    return None;
                }
                self.generation = None;
                self.writers.clear();
                Some(LinkEvent::ProtocolError(format!("{channel}: {error}")))
            }
            SessionEvent::Down { generation, reason } => {
                if self.generation != Some(generation) {
                    return None;
                }
                self.generation = None;
                self.writers.clear();
                Some(LinkEvent::Down(reason))
            }
        }
    }
}

impl DeviceLink for SocketDeviceLink {
    fn poll(&mut self, out: &mut Vec<LinkEvent>) {
        while let Some(ev) = self.stashed.pop_front().or_else(|| self.rx.try_recv().ok()) {
            self.translate(ev, out);
        }
    }

    fn wait(&mut self, timeout: Duration) -> bool {
        if !self.stashed.is_empty() {
            return true;
        }
        match self.rx.recv_timeout(timeout) {
            Ok(ev) => {
                self.stashed.push_back(ev);
                true
            }
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => false,
        }
    }

    fn send(&mut self, channel: ChannelId, msg: &WireMessage) {
        let Some(w) = self.writers.get_mut(channel.index()) else {
            self.send_failures += 1;
            return;
        };
        let frame = encode_frame(msg).expect("device emits valid messages");
        if let Err(e) = w.write_all(&frame) {
            // the reader side reports the disconnect
            log::debug!("send on {channel} failed: {e}");
            self.send_failures += 1;
        }
    }
}

/// In-process link for lockstep runs: the host side pushes and pulls
/// messages directly, with no threads or sockets involved.
#[derive(Debug, Default)]
pub struct LoopbackLink {
    inbound: VecDeque<LinkEvent>,
    outbound: VecDeque<(ChannelId, WireMessage)>,
}

impl LoopbackLink {
    /// A link whose session is already up.
    pub fn connected() -> Self {
        let mut l = LoopbackLink::default();
        l.inbound.push_back(LinkEvent::Up);
        l
    }

    pub fn deliver(&mut self, channel: ChannelId, msg: WireMessage) {
        self.inbound.push_back(LinkEvent::Message(channel, msg));
    }

    pub fn inject(&mut self, event: LinkEvent) {
        self.inbound.push_back(event);
    }

    pub fn take_sent(&mut self) -> Option<(ChannelId, WireMessage)> {
        self.outbound.pop_front()
    }

    pub fn has_sent(&self) -> bool {
        !self.outbound.is_empty()
    }
}

impl DeviceLink for LoopbackLink {
    fn poll(&mut self, out: &mut Vec<LinkEvent>) {
        out.extend(self.inbound.drain(..));
    }

    fn wait(&mut self, _timeout: Duration) -> bool {
        !self.inbound.is_empty()
    }

    fn send(&mut self, channel: ChannelId, msg: &WireMessage) {
        self.outbound.push_back((channel, msg.clone()));
    }
}
