//! Value-change-dump writer.
//!
//! Signals are declared up front with dotted hierarchical names
//! (`top.bridge.outstanding`); the dots become nested `$scope module`
//! blocks. The header is written lazily at the first value change, after
//! which no further declarations are accepted. Timestamps are simulation
//! cycles and are emitted only for cycles with at least one change.

use std::collections::BTreeMap;
use std::io::{self, Write};

use super::TraceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Wire,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalDef {
    pub name: String,
    pub width: u32,
    pub kind: SignalKind,
}

impl SignalDef {
    pub fn wire(name: impl Into<String>, width: u32) -> Self {
        SignalDef { name: name.into(), width, kind: SignalKind::Wire }
    }

    pub fn integer(name: impl Into<String>, width: u32) -> Self {
        SignalDef { name: name.into(), width, kind: SignalKind::Integer }
    }
}

/// Handle to a declared signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignalId(usize);

struct Signal {
    def: SignalDef,
    code: String,
    last: Option<u64>,
}

pub struct VcdWriter<W: Write> {
    out: W,
    timescale: String,
    signals: Vec<Signal>,
    header_written: bool,
    current_time: Option<u64>,
}

/// Printable identifier code for the `index`th signal (base-94 over `!`..`~`).
fn id_code(mut index: usize) -> String {
    let mut code = String::new();
    loop {
        code.push((b'!' + (index % 94) as u8) as char);
        index /= 94;
        if index == 0 {
            break;
        }
        index -= 1;
    }
    code
}

#[derive(Default)]
struct ScopeNode {
    children: BTreeMap<String, ScopeNode>,
    vars: Vec<usize>,
}

impl<W: Write> VcdWriter<W> {
    /// Starts a document with the given timescale, e.g. `"4ns"`.
    pub fn begin(out: W, timescale: &str) -> Self {
        VcdWriter {
            out,
            timescale: timescale.to_string(),
            signals: Vec::new(),
            header_written: false,
            current_time: None,
        }
    }

    pub fn define(&mut self, def: SignalDef) -> Result<SignalId, TraceError> {
        if self.header_written {
            return Err(TraceError::Usage(format!("define of {} after first change", def.name)));
        }
        if def.width == 0 || def.width > 64 {
            return Err(TraceError::Usage(format!("{}: width {} outside 1..=64", def.name, def.width)));
        }
        if def.name.split('.').any(str::is_empty) {
            return Err(TraceError::Usage(format!("bad signal name {:?}", def.name)));
        }
        if self.signals.iter().any(|s| s.def.name == def.name) {
            return Err(TraceError::Usage(format!("duplicate signal {}", def.name)));
        }
        let id = self.signals.len();
        self.signals.push(Signal { def, code: id_code(id), last: None });
        Ok(SignalId(id))
    }

    fn write_header(&mut self) -> io::Result<()> {
        writeln!(self.out, "$version cosim $end")?;
        writeln!(self.out, "$timescale {} $end", self.timescale)?;
        let mut root = ScopeNode::default();
        for (i, s) in self.signals.iter().enumerate() {
            let mut parts: Vec<&str> = s.def.name.split('.').collect();
            parts.pop();
            let mut node = &mut root;
            for p in parts {
                node = node.children.entry(p.to_string()).or_default();
            }
            node.vars.push(i);
        }
        self.write_scope(&root)?;
        writeln!(self.out, "$enddefinitions $end")?;
        self.header_written = true;
        Ok(())
    }

    fn write_scope(&mut self, node: &ScopeNode) -> io::Result<()> {
        for &i in &node.vars {
            let s = &self.signals[i];
            let leaf = s.def.name.rsplit('.').next().unwrap();
            let kind = match s.def.kind {
                SignalKind::Wire => "wire",
                SignalKind::Integer => "integer",
            };
            writeln!(self.out, "$var {} {} {} {} $end", kind, s.def.width, s.code, leaf)?;
        }
        for (name, child) in &node.children {
            writeln!(self.out, "$scope module {name} $end")?;
            self.write_scope(child)?;
            writeln!(self.out, "$upscope $end")?;
        }
        Ok(())
    }

    /// Records `value` for `id` at `cycle`. Repeated values are suppressed.
    pub fn change(&mut self, cycle: u64, id: SignalId, value: u64) -> Result<(), TraceError> {
        let signal =
            self.signals.get(id.0).ok_or_else(|| TraceError::Usage(format!("change on undefined signal #{}", id.0)))?;
        let width = signal.def.width;
        if width < 64 && value >> width != 0 {
            return Err(TraceError::Usage(format!("value {value:#x} does not fit {} ({width} bits)", signal.def.name)));
        }
        if let Some(t) = self.current_time {
            if cycle < t {
                return Err(TraceError::Usage(format!("time went backwards: {cycle} < {t}")));
            }
        }
        if signal.last == Some(value) {
            return Ok(());
        }
        if !self.header_written {
            self.write_header()?;
        }
        if self.current_time != Some(cycle) {
            writeln!(self.out, "#{cycle}")?;
            self.current_time = Some(cycle);
        }
        let signal = &mut self.signals[id.0];
        if width == 1 {
            writeln!(self.out, "{}{}", value, signal.code)?;
        } else {
            writeln!(self.out, "b{:b} {}", value, signal.code)?;
        }
        signal.last = Some(value);
        Ok(())
    }

    /// Finishes the document and returns the underlying writer.
    pub fn end(mut self) -> Result<W, TraceError> {
        if !self.header_written {
            self.write_header()?;
        }
        self.out.flush()?;
        Ok(self.out)
    }
}
