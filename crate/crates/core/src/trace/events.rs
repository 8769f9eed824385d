use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use super::TraceError;
use crate::proto::{ChannelId, Direction, WireMessage};

/// Payload of one trace record.
#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    Message { channel: ChannelId, msg: WireMessage },
    State { component: &'static str, from: String, to: String },
    Note { component: &'static str, text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub payload: EventPayload,
}

impl TraceEvent {
    pub fn message(cycle: u64, channel: ChannelId, msg: WireMessage) -> Self {
        TraceEvent { cycle, payload: EventPayload::Message { channel, msg } }
    }

    pub fn direction(&self) -> Direction {
        match &self.payload {
            EventPayload::Message { channel, .. } => channel.direction(),
            _ => Direction::Internal,
        }
    }

    /// Renders the record as one JSON object.
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("cycle".into(), json!(self.cycle));
        obj.insert("direction".into(), serde_json::to_value(self.direction()).unwrap());
        match &self.payload {
            EventPayload::Message { channel, msg } => {
                obj.insert("channel".into(), json!(channel.name()));
                if let Value::Object(fields) = serde_json::to_value(msg).unwrap() {
                    obj.extend(fields);
                }
            }
            EventPayload::State { component, from, to } => {
                obj.insert("type".into(), json!("state"));
                obj.insert("component".into(), json!(component));
                obj.insert("from".into(), json!(from));
                obj.insert("to".into(), json!(to));
            }
            EventPayload::Note { component, text } => {
                obj.insert("type".into(), json!("note"));
                obj.insert("component".into(), json!(component));
                obj.insert("text".into(), json!(text));
            }
        }
        Value::Object(obj)
    }
}

enum Sink {
    Memory(Vec<String>),
    File(BufWriter<File>),
}

/// Line-per-record structured event log.
///
/// Records must arrive in non-decreasing cycle order. Write failures are
/// remembered and reported by [`EventLog::flush`]; they never panic.
pub struct EventLog {
    sink: Sink,
    wall_clock: bool,
    last_cycle: u64,
    messages: u64,
    records: u64,
    io_error: Option<std::io::Error>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::with_sink(Sink::Memory(Vec::new()))
    }

    /// Creates (truncates) `path`. An empty run leaves an empty, valid file.
    pub fn create(path: &Path) -> Result<Self, TraceError> {
        Ok(Self::with_sink(Sink::File(BufWriter::new(File::create(path)?))))
    }

    fn with_sink(sink: Sink) -> Self {
        EventLog { sink, wall_clock: false, last_cycle: 0, messages: 0, records: 0, io_error: None }
    }

    /// Adds a `wall_us` field to every record. Off by default so logs stay reproducible.
    pub fn with_wall_clock(mut self, on: bool) -> Self {
        self.wall_clock = on;
        self
    }

    pub fn log_event(&mut self, event: &TraceEvent) {
        debug_assert!(event.cycle >= self.last_cycle, "event log cycles went backwards");
        self.last_cycle = event.cycle;
        let mut value = event.to_json();
        if self.wall_clock {
            let us = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros()).unwrap_or(0);
            value.as_object_mut().unwrap().insert("wall_us".into(), json!(us as u64));
        }
        if matches!(event.payload, EventPayload::Message { .. }) {
            self.messages += 1;
        }
        self.records += 1;
        let line = value.to_string();
        match &mut self.sink {
            Sink::Memory(lines) => lines.push(line),
            Sink::File(w) => {
                if self.io_error.is_none() {
                    if let Err(e) = writeln!(w, "{line}") {
                        self.io_error = Some(e);
                    }
                }
            }
        }
    }

    pub fn flush(&mut self) -> Result<(), TraceError> {
        if let Some(e) = self.io_error.take() {
            return Err(e.into());
        }
        if let Sink::File(w) = &mut self.sink {
            w.flush()?;
            w.get_ref().sync_data()?;
        }
        Ok(())
    }

    /// Number of protocol-message records logged so far.
    pub fn message_count(&self) -> u64 {
        self.messages
    }

    pub fn record_count(&self) -> u64 {
        self.records
    }

    /// Lines of an in-memory log (empty for file-backed logs).
    pub fn lines(&self) -> &[String] {
        match &self.sink {
            Sink::Memory(lines) => lines,
            Sink::File(_) => &[],
        }
    }
}
