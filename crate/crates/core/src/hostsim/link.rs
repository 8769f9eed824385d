//! How the host reaches the device.

use std::io::Write;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info};
use thiserror::Error;

use crate::devsim::{LinkEvent, LoopbackLink, Platform, SimKernel};
use crate::proto::transport::{spawn_reader, ReadEvent};
use crate::proto::{
    encode_frame, open_channel, ChannelId, Endpoint, ProtoError, ProtocolChecker, Role, Stream, WireMessage,
};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("device disconnected: {0}")]
    Disconnected(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cannot connect: {0}")]
    Connect(String),
}

pub trait HostLink {
    fn send(&mut self, channel: ChannelId, msg: &WireMessage) -> Result<(), LinkError>;

    /// Next message from the device. `None` as timeout blocks until one
    /// arrives; `Ok(None)` means the timeout expired.
    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<(ChannelId, WireMessage)>, LinkError>;
}

enum Inbound {
    Message(ChannelId, WireMessage),
    Closed(String),
    Error(String),
}

/// Host end of the four-channel socket topology.
pub struct SocketHostLink {
    streams: Vec<Stream>,
    rx: Receiver<Inbound>,
    down: Option<String>,
}

impl SocketHostLink {
    /// Opens and handshakes all four channels.
    pub fn connect(endpoint: &Endpoint) -> Result<Self, ProtoError> {
        let mut streams = Vec::with_capacity(4);
        for ch in ChannelId::ALL {
            match open_channel(endpoint, ch, Role::Host) {
                Ok(s) => streams.push(s),
                Err(e) => {
                    streams.iter().for_each(Stream::shutdown);
                    return Err(e);
                }
            }
        }
        let (tx, rx) = mpsc::channel();
        for ch in ChannelId::ALL {
            let tx = tx.clone();
            let reader = streams[ch.index()].try_clone()?;
            spawn_reader(reader, format!("cosim-host-{ch}"), move |ev| {
                let inbound = match ev {
                    ReadEvent::Message(msg) if ch.sender() == Role::Device && ch.allows(&msg) => {
                        Inbound::Message(ch, msg)
                    }
                    ReadEvent::Message(msg) => Inbound::Error(format!("{} not allowed on {ch}", msg.kind())),
                    ReadEvent::Closed(reason) => Inbound::Closed(format!("{ch}: {reason}")),
                    ReadEvent::Error(e) => Inbound::Error(format!("{ch}: {e}")),
                };
                tx.send(inbound).is_ok()
            });
        }
        Ok(SocketHostLink { streams, rx, down: None })
    }

    /// Connects, retrying with exponential backoff from 50 ms up to 1 s
    /// for at most `retries` additional attempts.
    pub fn connect_with_backoff(endpoint: &Endpoint, retries: u32) -> Result<Self, LinkError> {
        let mut delay = Duration::from_millis(50);
        let mut attempt = 0;
        loop {
            match Self::connect(endpoint) {
                Ok(link) => {
                    info!("connected to device at {endpoint}");
                    return Ok(link);
                }
                Err(e) if attempt < retries => {
                    debug!("connect attempt {} to {endpoint} failed: {e}", attempt + 1);
                    thread::sleep(delay);
                    delay = (delay * 2).min(Duration::from_secs(1));
                    attempt += 1;
                }
                Err(e) => return Err(LinkError::Connect(format!("{endpoint}: {e} after {} attempts", attempt + 1))),
            }
        }
    }

    pub fn close(&mut self) {
        self.streams.iter().for_each(Stream::shutdown);
    }

    fn take(&mut self, inbound: Inbound) -> Result<Option<(ChannelId, WireMessage)>, LinkError> {
        match inbound {
            Inbound::Message(ch, msg) => Ok(Some((ch, msg))),
            Inbound::Closed(reason) => {
                self.close();
                self.down = Some(reason.clone());
                Err(LinkError::Disconnected(reason))
            }
            Inbound::Error(e) => {
                self.close();
                self.down = Some(e.clone());
                Err(LinkError::Protocol(e))
            }
        }
    }
}

impl Drop for SocketHostLink {
    fn drop(&mut self) {
        self.close();
    }
}

impl HostLink for SocketHostLink {
    fn send(&mut self, channel: ChannelId, msg: &WireMessage) -> Result<(), LinkError> {
        if let Some(reason) = &self.down {
            return Err(LinkError::Disconnected(reason.clone()));
        }
        let frame = encode_frame(msg).map_err(|e| LinkError::Protocol(e.to_string()))?;
        self.streams[channel.index()].write_all(&frame).map_err(|e| {
            self.down = Some(e.to_string());
            LinkError::Disconnected(format!("{channel}: {e}"))
        })
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<(ChannelId, WireMessage)>, LinkError> {
        if let Some(reason) = &self.down {
            return Err(LinkError::Disconnected(reason.clone()));
        }
        let inbound = match timeout {
            None => match self.rx.recv() {
                Ok(i) => i,
                Err(_) => Inbound::Closed("all readers gone".into()),
            },
            Some(t) => match self.rx.recv_timeout(t) {
                Ok(i) => i,
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => Inbound::Closed("all readers gone".into()),
            },
        };
        self.take(inbound)
    }
}

/// In-process link that drives a device kernel in lockstep.
///
/// The kernel only advances while the host waits for a message, so message
/// arrival cycles depend on nothing but the sequence of host operations.
pub struct LockstepLink<P: Platform> {
    kernel: SimKernel<P, LoopbackLink>,
    step_limit: u64,
    connected: bool,
}

impl<P: Platform> LockstepLink<P> {
    /// `step_limit` bounds the cycles a single blocking receive may run.
    pub fn new(kernel: SimKernel<P, LoopbackLink>, step_limit: u64) -> Self {
        LockstepLink { kernel, step_limit, connected: true }
    }

    pub fn kernel(&self) -> &SimKernel<P, LoopbackLink> {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut SimKernel<P, LoopbackLink> {
        &mut self.kernel
    }

    pub fn into_kernel(self) -> SimKernel<P, LoopbackLink> {
        self.kernel
    }

    fn step(&mut self) -> Result<(), LinkError> {
        self.kernel.step().map_err(|e| LinkError::Protocol(e.to_string()))
    }

    /// Runs the device for `cycles` without the host consuming anything.
    pub fn advance(&mut self, cycles: u64) -> Result<(), LinkError> {
        for _ in 0..cycles {
            self.step()?;
        }
        Ok(())
    }

    /// Simulates the host going away: the device sees the session drop.
    pub fn disconnect(&mut self) {
        self.connected = false;
        self.kernel.link_mut().inject(LinkEvent::Down("host left".into()));
        while self.kernel.link_mut().take_sent().is_some() {}
    }

    pub fn reconnect(&mut self) {
        self.connected = true;
        self.kernel.link_mut().inject(LinkEvent::Up);
    }
}

impl<P: Platform> HostLink for LockstepLink<P> {
    fn send(&mut self, channel: ChannelId, msg: &WireMessage) -> Result<(), LinkError> {
        if !self.connected {
            return Err(LinkError::Disconnected("lockstep link down".into()));
        }
        self.kernel.link_mut().deliver(channel, msg.clone());
        Ok(())
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<(ChannelId, WireMessage)>, LinkError> {
        if !self.connected {
            return Err(LinkError::Disconnected("lockstep link down".into()));
        }
        let limit = if timeout == Some(Duration::ZERO) { 1 } else { self.step_limit };
        let mut steps = 0;
        loop {
            if let Some(m) = self.kernel.link_mut().take_sent() {
                return Ok(Some(m));
            }
            if steps == limit {
                return Ok(None);
            }
            self.step()?;
            steps += 1;
        }
    }
}

/// Observes every message crossing a link with a [`ProtocolChecker`].
pub struct CheckedLink<L> {
    inner: L,
    checker: ProtocolChecker,
}

impl<L: HostLink> CheckedLink<L> {
    pub fn new(inner: L) -> Self {
        CheckedLink { inner, checker: ProtocolChecker::new() }
    }

    pub fn checker(&self) -> &ProtocolChecker {
        &self.checker
    }

    pub fn inner(&self) -> &L {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut L {
        &mut self.inner
    }

    fn observe(&mut self, channel: ChannelId, msg: &WireMessage) -> Result<(), LinkError> {
        self.checker.observe(channel, msg).map_err(|e| LinkError::Protocol(e.to_string()))
    }

    fn note(&mut self, err: LinkError) -> LinkError {
        if matches!(err, LinkError::Disconnected(_)) {
            self.checker.reset_outstanding();
        }
        err
    }
}

impl<L: HostLink> HostLink for CheckedLink<L> {
    fn send(&mut self, channel: ChannelId, msg: &WireMessage) -> Result<(), LinkError> {
        match self.inner.send(channel, msg) {
            Ok(()) => self.observe(channel, msg),
            Err(e) => Err(self.note(e)),
        }
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<(ChannelId, WireMessage)>, LinkError> {
        match self.inner.recv(timeout) {
            Ok(Some((ch, msg))) => {
                self.observe(ch, &msg)?;
                Ok(Some((ch, msg)))
            }
            Ok(None) => Ok(None),
            Err(e) => Err(self.note(e)),
        }
    }
}

/// Receives with a deadline, treating `None` as no deadline.
pub(crate) fn recv_until<L: HostLink + ?Sized>(
    link: &mut L,
    deadline: Option<Instant>,
) -> Result<Option<(ChannelId, WireMessage)>, LinkError> {
    match deadline {
        None => link.recv(None),
        Some(d) => link.recv(Some(d.saturating_duration_since(Instant::now()))),
    }
}
