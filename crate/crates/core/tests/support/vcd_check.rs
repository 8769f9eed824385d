//! Minimal value-change-dump reader used to validate waveform files.
//!
//! Written independently of the writer: it tokenizes on whitespace and
//! rejects unbalanced scopes, undeclared or duplicate identifier codes,
//! values wider than their declaration, and timestamps that do not
//! strictly increase.

use std::collections::HashMap;

#[derive(Debug, Default)]
pub struct VcdSummary {
    pub timescale: String,
    /// Full dotted name -> (code, width).
    pub vars: HashMap<String, (String, u32)>,
    pub timestamps: Vec<u64>,
    /// (time, code, value) for every change, in file order.
    pub changes: Vec<(u64, String, u64)>,
}

impl VcdSummary {
    /// Value of `name` at `time`, from the last change at or before it.
    pub fn value_at(&self, name: &str, time: u64) -> Option<u64> {
        let code = &self.vars.get(name)?.0;
        self.changes.iter().rfind(|(t, c, _)| *t <= time && c == code).map(|c| c.2)
    }

    pub fn changes_of(&self, name: &str) -> Vec<(u64, u64)> {
        let Some((code, _)) = self.vars.get(name) else { return Vec::new() };
        self.changes.iter().filter(|(_, c, _)| c == code).map(|(t, _, v)| (*t, *v)).collect()
    }
}

fn parse_bits(bits: &str) -> Result<u64, String> {
    if bits.is_empty() || bits.len() > 64 {
        return Err(format!("bad vector value {bits:?}"));
    }
    let mut v = 0u64;
    for ch in bits.chars() {
        v = (v << 1)
            | match ch {
                '0' | 'x' | 'z' | 'X' | 'Z' => 0,
                '1' => 1,
                _ => return Err(format!("bad bit {ch:?}")),
            };
    }
    Ok(v)
}

pub fn check_vcd(text: &str) -> Result<VcdSummary, String> {
    let mut out = VcdSummary::default();
    let mut toks = text.split_whitespace().peekable();
    let mut scopes: Vec<String> = Vec::new();
    let mut widths: HashMap<String, u32> = HashMap::new();
    let mut in_defs = true;
    let mut now: Option<u64> = None;

    let until_end = |toks: &mut std::iter::Peekable<std::str::SplitWhitespace<'_>>| -> Result<Vec<String>, String> {
        let mut body = Vec::new();
        loop {
            match toks.next() {
                Some("$end") => return Ok(body),
                Some(t) => body.push(t.to_string()),
                None => return Err("unterminated section".into()),
            }
        }
    };

    while let Some(tok) = toks.next() {
        if in_defs {
            match tok {
                "$version" | "$date" | "$comment" => {
                    until_end(&mut toks)?;
                }
                "$timescale" => out.timescale = until_end(&mut toks)?.join(""),
                "$scope" => {
                    let body = until_end(&mut toks)?;
                    if body.len() != 2 {
                        return Err(format!("bad scope {body:?}"));
                    }
                    scopes.push(body[1].clone());
                }
                "$upscope" => {
                    until_end(&mut toks)?;
                    scopes.pop().ok_or("upscope without scope")?;
                }
                "$var" => {
                    let body = until_end(&mut toks)?;
                    if body.len() < 4 {
                        return Err(format!("bad var {body:?}"));
                    }
                    let width: u32 = body[1].parse().map_err(|_| format!("bad width {}", body[1]))?;
                    if width == 0 {
                        return Err("zero width var".into());
                    }
                    let code = body[2].clone();
                    if widths.insert(code.clone(), width).is_some() {
                        return Err(format!("duplicate id code {code}"));
                    }
                    let mut name = scopes.join(".");
                    if !name.is_empty() {
                        name.push('.');
                    }
                    name.push_str(&body[3]);
                    if out.vars.insert(name.clone(), (code, width)).is_some() {
                        return Err(format!("duplicate name {name}"));
                    }
                }
                "$enddefinitions" => {
                    until_end(&mut toks)?;
                    if !scopes.is_empty() {
                        return Err(format!("unclosed scopes {scopes:?}"));
                    }
                    in_defs = false;
                }
                other => return Err(format!("unexpected header token {other:?}")),
            }
            continue;
        }
        match tok {
            "$dumpvars" | "$dumpall" | "$dumpon" | "$dumpoff" | "$end" => {}
            t if t.starts_with('#') => {
                let time: u64 = t[1..].parse().map_err(|_| format!("bad timestamp {t}"))?;
                if now.is_some_and(|n| time <= n) {
                    return Err(format!("timestamp {time} not after {}", now.unwrap()));
                }
                now = Some(time);
                out.timestamps.push(time);
            }
            t if t.starts_with('b') || t.starts_with('B') => {
                let value = parse_bits(&t[1..])?;
                let code = toks.next().ok_or("vector value without id")?;
                let width = *widths.get(code).ok_or_else(|| format!("undeclared id {code}"))?;
                if t.len() - 1 > width as usize {
                    return Err(format!("value {t} wider than {width} bits"));
                }
                let time = now.ok_or("value change before first timestamp")?;
                out.changes.push((time, code.to_string(), value));
            }
            t => {
                let (bit, code) = t.split_at(1);
                let value = match bit {
                    "0" | "x" | "z" | "X" | "Z" => 0,
                    "1" => 1,
                    _ => return Err(format!("unexpected token {t:?}")),
                };
                let width = *widths.get(code).ok_or_else(|| format!("undeclared id {code:?}"))?;
                if width != 1 {
                    return Err(format!("scalar change on {width}-bit id {code}"));
                }
                let time = now.ok_or("value change before first timestamp")?;
                out.changes.push((time, code.to_string(), value));
            }
        }
    }
    if in_defs {
        return Err("missing $enddefinitions".into());
    }
    Ok(out)
}

#[cfg(test)]
mod self_check {
    #[test]
    fn rejects_broken_documents() {
        let ok = "$timescale 1ns $end $scope module top $end $var wire 1 ! clk $end $upscope $end \
                  $enddefinitions $end #0 1! #1 0!";
        let s = super::check_vcd(ok).unwrap();
        assert_eq!(s.value_at("top.clk", 0), Some(1));
        assert!(super::check_vcd(&ok.replace("$upscope $end", "")).is_err());
        assert!(super::check_vcd(&ok.replace("#1", "#0")).is_err());
        assert!(super::check_vcd(&ok.replace("0!", "0\"")).is_err());
    }
}
