//! Stream transports, the `Hello` handshake, and the device-side session
//! acceptor.
//!
//! The device listens on a single endpoint. The host opens one connection
//! per [`ChannelId`]; each connection starts with the connector sending
//! `Hello` and the listener answering with a `Hello` for the same channel.
//! Once all four channels of a session are live the acceptor reports the
//! session as up; losing any one of them tears the whole session down so a
//! restarted peer can run a fresh handshake.

use std::fmt;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use super::{encode_frame, ChannelId, FrameDecoder, ProtoError, Role, WireMessage, PROTOCOL_VERSION};

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(2);

/// A local reliable ordered byte-stream address: `host:port` or a filesystem path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Unix(PathBuf),
}

impl FromStr for Endpoint {
    type Err = ProtoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(ProtoError::BadEndpoint(s.into()));
        }
        if s.contains('/') {
            return Ok(Endpoint::Unix(PathBuf::from(s)));
        }
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Endpoint::Tcp(s.to_string())),
            _ => Err(ProtoError::BadEndpoint(s.into())),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => f.write_str(addr),
            Endpoint::Unix(path) => write!(f, "{}", path.display()),
        }
    }
}

/// A connected byte stream of either transport.
#[derive(Debug)]
pub enum Stream {
    Tcp(TcpStream),
    Unix(UnixStream),
}

impl Stream {
    pub fn connect(endpoint: &Endpoint) -> io::Result<Stream> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let s = TcpStream::connect(addr.as_str())?;
                s.set_nodelay(true)?;
                Ok(Stream::Tcp(s))
            }
            Endpoint::Unix(path) => Ok(Stream::Unix(UnixStream::connect(path)?)),
        }
    }

    pub fn try_clone(&self) -> io::Result<Stream> {
        match self {
            Stream::Tcp(s) => s.try_clone().map(Stream::Tcp),
            Stream::Unix(s) => s.try_clone().map(Stream::Unix),
        }
    }

    pub fn shutdown(&self) {
        let _ = match self {
            Stream::Tcp(s) => s.shutdown(Shutdown::Both),
            Stream::Unix(s) => s.shutdown(Shutdown::Both),
        };
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.set_read_timeout(timeout),
            Stream::Unix(s) => s.set_read_timeout(timeout),
        }
    }
}

impl Read for Stream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.read(buf),
            Stream::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Stream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.write(buf),
            Stream::Unix(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.flush(),
            Stream::Unix(s) => s.flush(),
        }
    }
}

/// Writes one whole frame. Callers own the stream exclusively, so frames
/// never interleave.
pub fn write_message<W: Write>(w: &mut W, msg: &WireMessage) -> Result<(), ProtoError> {
    let frame = encode_frame(msg)?;
    w.write_all(&frame)?;
    Ok(())
}

/// Blocks for the next message. `Ok(None)` means the peer closed cleanly.
pub fn read_message<R: Read>(r: &mut R, dec: &mut FrameDecoder) -> Result<Option<WireMessage>, ProtoError> {
    let mut chunk = [0u8; 8192];
    loop {
        if let Some(msg) = dec.next_message()? {
            return Ok(Some(msg));
        }
        let n = r.read(&mut chunk)?;
        if n == 0 {
            if dec.residual().is_empty() {
                return Ok(None);
            }
            return Err(ProtoError::Malformed("stream closed inside a frame".into()));
        }
        dec.push(&chunk[..n]);
    }
}

/// Connects `channel` to the device at `endpoint` and runs the handshake.
pub fn open_channel(endpoint: &Endpoint, channel: ChannelId, role: Role) -> Result<Stream, ProtoError> {
    open_channel_with_version(endpoint, channel, role, PROTOCOL_VERSION)
}

/// Like [`open_channel`] but announcing an arbitrary protocol version.
pub fn open_channel_with_version(
    endpoint: &Endpoint,
    channel: ChannelId,
    role: Role,
    version: u16,
) -> Result<Stream, ProtoError> {
    let mut stream = Stream::connect(endpoint)?;
    write_message(&mut stream, &WireMessage::Hello { version, channel_id: channel as u8, role: role as u8 })?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let mut dec = FrameDecoder::new();
    let reply = match read_message(&mut stream, &mut dec) {
        Ok(Some(m)) => m,
        Ok(None) => return Err(ProtoError::HandshakeRejected(format!("{channel}: peer closed"))),
        Err(ProtoError::Io(e)) => return Err(ProtoError::HandshakeRejected(format!("{channel}: {e}"))),
        Err(e) => return Err(e),
    };
    match reply {
        WireMessage::Hello { version: v, channel_id, .. } if v == version && channel_id == channel as u8 => {}
        WireMessage::Hello { version: v, channel_id, .. } => {
            return Err(ProtoError::HandshakeRejected(format!(
                "{channel}: peer answered version {v} channel {channel_id}"
            )))
        }
        other => return Err(ProtoError::HandshakeRejected(format!("{channel}: unexpected {}", other.kind()))),
    }
    stream.set_read_timeout(None)?;
    if !dec.residual().is_empty() {
        return Err(ProtoError::Malformed("data before handshake completed".into()));
    }
    Ok(stream)
}

/// What a reader thread observed on one connection.
#[derive(Debug)]
pub enum ReadEvent {
    Message(WireMessage),
    Closed(String),
    Error(ProtoError),
}

/// Spawns a thread that decodes messages from `stream` until it closes.
///
/// The callback receives every event; the thread exits after the first
/// `Closed` or `Error`, or when the callback returns `false`.
pub fn spawn_reader<F>(mut stream: Stream, name: String, mut on_event: F) -> JoinHandle<()>
where
    F: FnMut(ReadEvent) -> bool + Send + 'static,
{
    thread::Builder::new()
        .name(name)
        .spawn(move || {
            let mut dec = FrameDecoder::new();
            loop {
                let ev = match read_message(&mut stream, &mut dec) {
                    Ok(Some(m)) => ReadEvent::Message(m),
                    Ok(None) => ReadEvent::Closed("peer closed".into()),
                    Err(ProtoError::Io(e)) => ReadEvent::Closed(e.to_string()),
                    Err(e) => ReadEvent::Error(e),
                };
                let terminal = !matches!(ev, ReadEvent::Message(_));
                if !on_event(ev) || terminal {
                    break;
                }
            }
        })
        .expect("spawn reader thread")
}

/// Session lifecycle as seen by the device.
#[derive(Debug)]
pub enum SessionEvent {
    /// All four channels are live. `writers[c]` writes channel `c`.
    Up {
        generation: u64,
        writers: Vec<Stream>,
    },
    Message {
        generation: u64,
        channel: ChannelId,
        msg: WireMessage,
    },
    /// The peer violated the protocol; the session is being torn down.
    ProtocolError {
        generation: u64,
        channel: ChannelId,
        error: String,
    },
    Down {
        generation: u64,
        reason: String,
    },
}

#[derive(Default)]
struct SessionTable {
    generation: u64,
    slots: [Option<Stream>; 4],
}

impl SessionTable {
    fn end(&mut self, generation: u64) -> bool {
        if self.generation != generation {
            return false;
        }
        for slot in self.slots.iter_mut() {
            if let Some(s) = slot.take() {
                s.shutdown();
            }
        }
        self.generation += 1;
        true
    }
}

enum Listener {
    Tcp(TcpListener),
    Unix(UnixListener, PathBuf),
}

/// Listening side of the channel topology.
pub struct Acceptor {
    listener: Listener,
    local: Endpoint,
}

impl Acceptor {
    /// Binds `endpoint`. A TCP port of 0 picks a free port; a stale socket
    /// file at a Unix path is replaced.
    pub fn bind(endpoint: &Endpoint) -> io::Result<Acceptor> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let l = TcpListener::bind(addr.as_str())?;
                let local = Endpoint::Tcp(l.local_addr()?.to_string());
                Ok(Acceptor { listener: Listener::Tcp(l), local })
            }
            Endpoint::Unix(path) => {
                if path.exists() {
                    std::fs::remove_file(path)?;
                }
                let l = UnixListener::bind(path)?;
                Ok(Acceptor { listener: Listener::Unix(l, path.clone()), local: endpoint.clone() })
            }
        }
    }

    /// The bound address, with any wildcard port resolved.
    pub fn local_endpoint(&self) -> &Endpoint {
        &self.local
    }

    /// Runs the accept loop on a background thread, reporting session events on `tx`.
    pub fn spawn(self, tx: Sender<SessionEvent>) -> AcceptorHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let table = Arc::new(Mutex::new(SessionTable::default()));
        let local = self.local.clone();
        let thread_stop = stop.clone();
        let thread_table = table.clone();
        let thread = thread::Builder::new()
            .name("cosim-accept".into())
            .spawn(move || accept_loop(self.listener, thread_stop, thread_table, tx))
            .expect("spawn accept thread");
        AcceptorHandle { stop, table, local, thread: Some(thread) }
    }
}

/// Owner of a running accept loop. Dropping it stops accepting and closes
/// the current session.
pub struct AcceptorHandle {
    stop: Arc<AtomicBool>,
    table: Arc<Mutex<SessionTable>>,
    local: Endpoint,
    thread: Option<JoinHandle<()>>,
}

impl AcceptorHandle {
    pub fn local_endpoint(&self) -> &Endpoint {
        &self.local
    }

    pub fn stop(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = Stream::connect(&self.local);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        let mut table = self.table.lock().unwrap();
        let g = table.generation;
        table.end(g);
        if let Endpoint::Unix(path) = &self.local {
            let _ = std::fs::remove_file(path);
        }
    }
}

impl Drop for AcceptorHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: Listener, stop: Arc<AtomicBool>, table: Arc<Mutex<SessionTable>>, tx: Sender<SessionEvent>) {
    loop {
        let accepted = match &listener {
            Listener::Tcp(l) => l.accept().map(|(s, _)| {
                let _ = s.set_nodelay(true);
                Stream::Tcp(s)
            }),
            Listener::Unix(l, _) => l.accept().map(|(s, _)| Stream::Unix(s)),
        };
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match accepted {
            Ok(stream) => {
                if let Err(e) = handshake(stream, &table, &tx) {
                    warn!("rejected connection: {e}");
                }
            }
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
    if let Listener::Unix(_, path) = &listener {
        debug!("listener on {} closed", path.display());
    }
}

fn handshake(
    mut stream: Stream,
    table: &Arc<Mutex<SessionTable>>,
    tx: &Sender<SessionEvent>,
) -> Result<(), ProtoError> {
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let mut dec = FrameDecoder::new();
    let (version, raw_channel) = match read_message(&mut stream, &mut dec)? {
        Some(WireMessage::Hello { version, channel_id, .. }) => (version, channel_id),
        Some(other) => return Err(ProtoError::HandshakeRejected(format!("expected hello, got {}", other.kind()))),
        None => return Err(ProtoError::HandshakeRejected("closed before hello".into())),
    };
    let channel = ChannelId::from_u8(raw_channel)
        .ok_or_else(|| ProtoError::HandshakeRejected(format!("unknown channel id {raw_channel}")))?;
    let reply = WireMessage::Hello { version: PROTOCOL_VERSION, channel_id: raw_channel, role: Role::Device as u8 };
    if version != PROTOCOL_VERSION {
        let _ = write_message(&mut stream, &reply);
        stream.shutdown();
        return Err(ProtoError::HandshakeRejected(format!("{channel}: version {version}")));
    }
    if !dec.residual().is_empty() {
        return Err(ProtoError::Malformed("data before handshake completed".into()));
    }
    stream.set_read_timeout(None)?;

    let generation = {
        let mut t = table.lock().unwrap();
        if t.slots[channel.index()].is_some() {
            stream.shutdown();
            return Err(ProtoError::HandshakeRejected(format!("{channel} already live")));
        }
        t.slots[channel.index()] = Some(stream.try_clone()?);
        let generation = t.generation;
        if t.slots.iter().all(Option::is_some) {
            let writers = t.slots.iter().map(|s| s.as_ref().unwrap().try_clone()).collect::<io::Result<Vec<_>>>()?;
            let _ = tx.send(SessionEvent::Up { generation, writers });
        }
        generation
    };
    write_message(&mut stream, &reply)?;

    let table = table.clone();
    let tx = tx.clone();
    spawn_reader(stream, format!("cosim-dev-{channel}"), move |ev| {
        let end = |reason: String, tx: &Sender<SessionEvent>| {
            // sent under the lock so a new session's Up cannot overtake it
            let mut t = table.lock().unwrap();
            if t.end(generation) {
                let _ = tx.send(SessionEvent::Down { generation, reason });
            }
        };
        match ev {
            ReadEvent::Message(msg) if channel.sender() == Role::Host && channel.allows(&msg) => {
                tx.send(SessionEvent::Message { generation, channel, msg }).is_ok()
            }
            ReadEvent::Message(msg) => {
                let error = format!("{} not allowed on {channel}", msg.kind());
                let _ = tx.send(SessionEvent::ProtocolError { generation, channel, error: error.clone() });
                end(error, &tx);
                false
            }
            ReadEvent::Error(e) => {
                let _ = tx.send(SessionEvent::ProtocolError { generation, channel, error: e.to_string() });
                end(e.to_string(), &tx);
                false
            }
            ReadEvent::Closed(reason) => {
                end(format!("{channel}: {reason}"), &tx);
                false
            }
        }
    });
    Ok(())
}
