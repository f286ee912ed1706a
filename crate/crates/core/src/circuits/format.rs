//! Line-oriented text form of a circuit.
//!
//! ```text
//! # format=1 qubits=3 slots=1
//! CRY(0) 0,2 1.0471975511965976
//! CNOT 2,0
//! MEASURE(0) 2
//! RESET 2
//! ```

use std::fmt::Write as _;

use super::{Circuit, Gate, GateKind};
use crate::error::{Error, Result};

fn kind_token(kind: GateKind) -> String {
    match kind {
        GateKind::Rx => "RX".into(),
        GateKind::Ry => "RY".into(),
        GateKind::Rz => "RZ".into(),
        GateKind::H => "H".into(),
        GateKind::S => "S".into(),
        GateKind::Sdg => "SDG".into(),
        GateKind::X => "X".into(),
        GateKind::Cnot => "CNOT".into(),
        GateKind::CRx(p) => format!("CRX({p})"),
        GateKind::CRy(p) => format!("CRY({p})"),
        GateKind::CCRy([a, b]) => format!("CCRY({a},{b})"),
        GateKind::Measure(slot) => format!("MEASURE({slot})"),
        GateKind::Reset => "RESET".into(),
    }
}

/// Text dump; angles use the shortest representation that parses back to
/// the same `f64`.
pub fn dump(c: &Circuit) -> String {
    let mut out = format!("# format=1 qubits={} slots={}\n", c.n_qubits(), c.n_slots());
    for g in c.gates() {
        let qs: Vec<String> = g.qubits.iter().map(|q| q.to_string()).collect();
        let _ = write!(out, "{} {}", kind_token(g.kind), qs.join(","));
        if g.kind.has_angle() {
            let _ = write!(out, " {}", g.angle);
        }
        out.push('\n');
    }
    out
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

fn parse_kind(tok: &str, line: usize) -> Result<GateKind> {
    let (name, args) = match tok.find('(') {
        Some(i) if tok.ends_with(')') => (&tok[..i], Some(&tok[i + 1..tok.len() - 1])),
        Some(_) => return Err(parse_err(line, format!("malformed gate `{tok}`"))),
        None => (tok, None),
    };
    let nums = |expected: usize| -> Result<Vec<usize>> {
        let a = args.ok_or_else(|| parse_err(line, format!("`{name}` needs arguments")))?;
        let v: Vec<usize> = a
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| parse_err(line, e)))
            .collect::<Result<_>>()?;
        if v.len() != expected {
            return Err(parse_err(line, format!("`{name}` takes {expected} arguments")));
        }
        Ok(v)
    };
    let pol = |v: usize| -> Result<u8> {
        if v > 1 {
            return Err(parse_err(line, format!("polarity {v} is not 0 or 1")));
        }
        Ok(v as u8)
    };
    let plain = |k: GateKind| -> Result<GateKind> {
        if args.is_some() {
            return Err(parse_err(line, format!("`{name}` takes no arguments")));
        }
        Ok(k)
    };
    match name {
        "RX" => plain(GateKind::Rx),
        "RY" => plain(GateKind::Ry),
        "RZ" => plain(GateKind::Rz),
        "H" => plain(GateKind::H),
        "S" => plain(GateKind::S),
        "SDG" => plain(GateKind::Sdg),
        "X" => plain(GateKind::X),
        "CNOT" => plain(GateKind::Cnot),
        "RESET" => plain(GateKind::Reset),
        "CRX" => Ok(GateKind::CRx(pol(nums(1)?[0])?)),
        "CRY" => Ok(GateKind::CRy(pol(nums(1)?[0])?)),
        "CCRY" => {
            let v = nums(2)?;
            Ok(GateKind::CCRy([pol(v[0])?, pol(v[1])?]))
        }
        "MEASURE" => Ok(GateKind::Measure(nums(1)?[0])),
        other => Err(parse_err(line, format!("unknown gate `{other}`"))),
    }
}

fn header_value(header: &str, key: &str) -> Option<usize> {
    header
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
}

/// Parses the output of [`dump`].
pub fn parse(text: &str) -> Result<Circuit> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty circuit text".into()))?;
    let header = header
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| parse_err(1, "missing `# format=1 ...` header"))?;
    if header_value(header, "format") != Some(1) {
        return Err(parse_err(1, "unsupported format version"));
    }
    let n_qubits = header_value(header, "qubits").ok_or_else(|| parse_err(1, "missing qubits="))?;
    let mut c = Circuit::new(n_qubits);
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let kind = parse_kind(toks.next().unwrap(), line_no)?;
        let qubits: Vec<usize> = toks
            .next()
            .ok_or_else(|| parse_err(line_no, "missing operands"))?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|e| parse_err(line_no, e)))
            .collect::<Result<_>>()?;
        let angle = if kind.has_angle() {
            toks.next()
                .ok_or_else(|| parse_err(line_no, "missing angle"))?
                .parse::<f64>()
                .map_err(|e| parse_err(line_no, e))?
        } else {
            0.0
        };
        if toks.next().is_some() {
            return Err(parse_err(line_no, "trailing tokens"));
        }
        c.push(Gate::new(kind, &qubits, angle)).map_err(|e| parse_err(line_no, e))?;
    }
    Ok(c)
}
