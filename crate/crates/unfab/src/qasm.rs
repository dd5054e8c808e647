//! OpenQASM 2.0 output, plus a reader for the subset this crate emits.
//!
//! The emitter is a pure function of the circuit, so equal circuits produce
//! byte-identical text. Guards need care: a [`FlatGate`] fires when specific
//! classical bits hold specific values, while an OpenQASM `if` compares the
//! whole register against one integer. Each guarded gate is therefore
//! emitted once per register value consistent with its guard, enumerating
//! the unconstrained bits in increasing numeric order. At runtime exactly
//! one of those lines fires, so the expansion preserves behavior, including
//! the number of measurement randomness draws.
//!
//! Register values are read little-endian: classical bit `b` contributes
//! `2^b` to the compared integer.
//!
//! [`read`] parses the emitted dialect back into a [`FlatCircuit`]. A
//! re-read circuit lists every classical bit in each guard (that is what an
//! integer comparison pins down), so it may differ structurally from the
//! circuit that produced the text while behaving identically. Re-emitting
//! it reproduces the bytes.

use std::fmt::Write as _;

use unfab_core::circuit::{FlatCircuit, FlatGate, Gate};
use unfab_core::ir::Angle;

/// A reader error with the 1-based line it occurred on.
#[derive(Clone, Debug, thiserror::Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct QasmError {
    pub message: String,
    pub line: usize,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, QasmError> {
    Err(QasmError { message: message.into(), line })
}

/// Largest number of unconstrained guard bits the emitter will enumerate.
const MAX_FREE_BITS: u32 = 16;

/// Renders the circuit as OpenQASM 2.0.
pub fn emit(c: &FlatCircuit) -> Result<String, QasmError> {
    c.check().map_err(|e| QasmError { message: e.to_string(), line: 0 })?;
    let mut out = String::new();
    out.push_str("OPENQASM 2.0;\n");
    out.push_str("include \"qelib1.inc\";\n");
    if c.num_qubits > 0 {
        writeln!(out, "qreg q[{}];", c.num_qubits).unwrap();
    }
    if c.num_bits > 0 {
        writeln!(out, "creg c[{}];", c.num_bits).unwrap();
    }
    for g in &c.gates {
        let body = gate_text(&g.gate);
        if g.guard.is_empty() {
            writeln!(out, "{body};").unwrap();
        } else {
            for k in guard_values(&g.guard, c.num_bits)? {
                writeln!(out, "if(c=={k}) {body};").unwrap();
            }
        }
    }
    Ok(out)
}

fn gate_text(g: &Gate) -> String {
    match *g {
        Gate::X { q } => format!("x q[{q}]"),
        Gate::H { q } => format!("h q[{q}]"),
        Gate::T { q } => format!("t q[{q}]"),
        Gate::Tdg { q } => format!("tdg q[{q}]"),
        Gate::U1 { q, angle } => format!("u1({angle}) q[{q}]"),
        Gate::Cx { c, t } => format!("cx q[{c}], q[{t}]"),
        Gate::Measure { q, bit } => format!("measure q[{q}] -> c[{bit}]"),
    }
}

/// Register values consistent with the guard, ascending. An internally
/// contradictory guard matches nothing.
fn guard_values(guard: &[(usize, bool)], num_bits: usize) -> Result<Vec<u64>, QasmError> {
    let mut fixed_mask: u64 = 0;
    let mut fixed_val: u64 = 0;
    for &(bit, val) in guard {
        let m = 1u64 << bit;
        if fixed_mask & m != 0 {
            if (fixed_val & m != 0) != val {
                return Ok(Vec::new());
            }
            continue;
        }
        fixed_mask |= m;
        if val {
            fixed_val |= m;
        }
    }
    let free: Vec<usize> = (0..num_bits).filter(|b| fixed_mask & (1 << b) == 0).collect();
    if free.len() as u32 > MAX_FREE_BITS {
        return err(0, format!("guard enumeration over {} free bits is too large", free.len()));
    }
    let mut vals = Vec::with_capacity(1 << free.len());
    for pattern in 0..(1u64 << free.len()) {
        let mut k = fixed_val;
        for (i, &b) in free.iter().enumerate() {
            if pattern & (1 << i) != 0 {
                k |= 1 << b;
            }
        }
        vals.push(k);
    }
    vals.sort_unstable();
    Ok(vals)
}

/// Parses the dialect [`emit`] produces: one optional `qreg`, one optional
/// `creg`, and the gate set x, h, t, tdg, u1, cx, measure, each statement
/// optionally prefixed by `if(c==K)`.
pub fn read(text: &str) -> Result<FlatCircuit, QasmError> {
    let mut c = FlatCircuit::default();
    let mut seen_version = false;
    let mut qreg: Option<String> = None;
    let mut creg: Option<String> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let stripped = match raw.find("//") {
            Some(i) => &raw[..i],
            None => raw,
        };
        for stmt in stripped.split(';') {
            let stmt = stmt.trim();
            if stmt.is_empty() {
                continue;
            }
            if !seen_version {
                if stmt == "OPENQASM 2.0" {
                    seen_version = true;
                    continue;
                }
                return err(line, "expected OPENQASM 2.0 header");
            }
            if stmt.starts_with("include ") {
                continue;
            }
            if let Some(rest) = stmt.strip_prefix("qreg ") {
                if qreg.is_some() {
                    return err(line, "only one qreg is supported");
                }
                let (name, size) = reg_decl(rest, line)?;
                qreg = Some(name);
                c.num_qubits = size;
                continue;
            }
            if let Some(rest) = stmt.strip_prefix("creg ") {
                if creg.is_some() {
                    return err(line, "only one creg is supported");
                }
                let (name, size) = reg_decl(rest, line)?;
                creg = Some(name);
                c.num_bits = size;
                continue;
            }
            let (guard, op) = match stmt.strip_prefix("if(") {
                Some(rest) => {
                    let close = rest
                        .find(')')
                        .ok_or(QasmError { message: "unclosed if(".into(), line })?;
                    let cond = rest[..close].trim();
                    let cname = creg
                        .as_deref()
                        .ok_or(QasmError { message: "if before creg".into(), line })?;
                    let val = cond
                        .strip_prefix(cname)
                        .and_then(|r| r.trim_start().strip_prefix("=="))
                        .map(str::trim)
                        .ok_or(QasmError { message: format!("bad condition {cond}"), line })?;
                    let k: u64 = val
                        .parse()
                        .map_err(|_| QasmError { message: format!("bad integer {val}"), line })?;
                    if c.num_bits < 64 && k >= 1u64 << c.num_bits {
                        return err(line, format!("{k} exceeds the {}-bit creg", c.num_bits));
                    }
                    let guard: Vec<(usize, bool)> =
                        (0..c.num_bits).map(|b| (b, k & (1 << b) != 0)).collect();
                    (guard, rest[close + 1..].trim())
                }
                None => (Vec::new(), stmt),
            };
            let gate = gate_stmt(op, qreg.as_deref(), creg.as_deref(), line)?;
            c.gates.push(FlatGate { gate, guard });
        }
    }
    if !seen_version {
        return err(1, "expected OPENQASM 2.0 header");
    }
    c.check().map_err(|e| QasmError { message: e.to_string(), line: 0 })?;
    Ok(c)
}

/// Parses `name[size]`.
fn reg_decl(s: &str, line: usize) -> Result<(String, usize), QasmError> {
    let open = s.find('[').ok_or(QasmError { message: format!("bad register {s}"), line })?;
    let name = s[..open].trim();
    let close = s.rfind(']').ok_or(QasmError { message: format!("bad register {s}"), line })?;
    let size: usize = s[open + 1..close]
        .trim()
        .parse()
        .map_err(|_| QasmError { message: format!("bad register size in {s}"), line })?;
    if name.is_empty() || size == 0 {
        return err(line, format!("bad register {s}"));
    }
    Ok((name.to_string(), size))
}

/// Parses `name[index]` against the declared register name.
fn index_of(s: &str, reg: Option<&str>, line: usize) -> Result<usize, QasmError> {
    let s = s.trim();
    let reg = reg.ok_or(QasmError { message: "operand before register declaration".into(), line })?;
    let rest = s
        .strip_prefix(reg)
        .ok_or(QasmError { message: format!("operand {s} does not use register {reg}"), line })?;
    let inner = rest
        .trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or(QasmError { message: format!("bad operand {s}"), line })?;
    inner.trim().parse().map_err(|_| QasmError { message: format!("bad index in {s}"), line })
}

fn gate_stmt(
    op: &str,
    qreg: Option<&str>,
    creg: Option<&str>,
    line: usize,
) -> Result<Gate, QasmError> {
    if let Some(rest) = op.strip_prefix("measure ") {
        let arrow = rest
            .find("->")
            .ok_or(QasmError { message: "measure needs ->".into(), line })?;
        let q = index_of(&rest[..arrow], qreg, line)?;
        let bit = index_of(&rest[arrow + 2..], creg, line)?;
        return Ok(Gate::Measure { q, bit });
    }
    if let Some(rest) = op.strip_prefix("cx ") {
        let comma = rest.find(',').ok_or(QasmError { message: "cx needs two operands".into(), line })?;
        let c = index_of(&rest[..comma], qreg, line)?;
        let t = index_of(&rest[comma + 1..], qreg, line)?;
        return Ok(Gate::Cx { c, t });
    }
    if let Some(rest) = op.strip_prefix("u1(") {
        let close = rest.find(')').ok_or(QasmError { message: "unclosed u1(".into(), line })?;
        let angle = parse_angle(rest[..close].trim(), line)?;
        let q = index_of(&rest[close + 1..], qreg, line)?;
        return Ok(Gate::U1 { q, angle });
    }
    for (name, make) in [
        ("x ", Gate::X as fn(usize) -> Gate),
        ("h ", Gate::H as fn(usize) -> Gate),
        ("t ", Gate::T as fn(usize) -> Gate),
        ("tdg ", Gate::Tdg as fn(usize) -> Gate),
    ] {
        if let Some(rest) = op.strip_prefix(name) {
            return Ok(make(index_of(rest, qreg, line)?));
        }
    }
    err(line, format!("unsupported statement {op}"))
}

impl Gate {
    #[allow(non_snake_case)]
    fn X(q: usize) -> Gate {
        Gate::X { q }
    }
}

/// Parses the angle spellings [`Angle`] displays: `0`, `pi`, `-pi`, `pi/4`,
/// `3*pi/4` and so on.
fn parse_angle(s: &str, line: usize) -> Result<Angle, QasmError> {
    if s == "0" {
        return Ok(Angle::new(0, 1));
    }
    let bad = || QasmError { message: format!("bad angle {s}"), line };
    let (num_text, den) = match s.find('/') {
        Some(i) => {
            let den: i64 = s[i + 1..].trim().parse().map_err(|_| bad())?;
            (s[..i].trim(), den)
        }
        None => (s, 1),
    };
    let num: i64 = match num_text.find('*') {
        Some(i) => {
            if num_text[i + 1..].trim() != "pi" {
                return Err(bad());
            }
            num_text[..i].trim().parse().map_err(|_| bad())?
        }
        None => match num_text {
            "pi" => 1,
            "-pi" => -1,
            _ => return Err(bad()),
        },
    };
    if den == 0 {
        return Err(bad());
    }
    Ok(Angle::new(num, den))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use unfab_core::circuit::run;

    fn sample() -> FlatCircuit {
        FlatCircuit {
            num_qubits: 3,
            num_bits: 2,
            gates: vec![
                FlatGate::plain(Gate::H { q: 0 }),
                FlatGate::plain(Gate::Cx { c: 0, t: 1 }),
                FlatGate::plain(Gate::T { q: 1 }),
                FlatGate::plain(Gate::Tdg { q: 2 }),
                FlatGate::plain(Gate::U1 { q: 2, angle: Angle::new(3, 4) }),
                FlatGate::plain(Gate::Measure { q: 0, bit: 0 }),
                FlatGate { gate: Gate::X { q: 2 }, guard: vec![(0, true)] },
                FlatGate::plain(Gate::Measure { q: 1, bit: 1 }),
                FlatGate { gate: Gate::H { q: 2 }, guard: vec![(0, false), (1, true)] },
            ],
        }
    }

    #[test]
    fn emitted_text_is_the_expected_dialect() {
        let text = emit(&sample()).unwrap();
        let expect = "OPENQASM 2.0;\n\
                      include \"qelib1.inc\";\n\
                      qreg q[3];\n\
                      creg c[2];\n\
                      h q[0];\n\
                      cx q[0], q[1];\n\
                      t q[1];\n\
                      tdg q[2];\n\
                      u1(3*pi/4) q[2];\n\
                      measure q[0] -> c[0];\n\
                      if(c==1) x q[2];\n\
                      if(c==3) x q[2];\n\
                      measure q[1] -> c[1];\n\
                      if(c==2) h q[2];\n";
        assert_eq!(text, expect);
    }

    #[test]
    fn reading_back_reproduces_the_bytes() {
        let text = emit(&sample()).unwrap();
        let back = read(&text).unwrap();
        assert_eq!(emit(&back).unwrap(), text);
    }

    #[test]
    fn reread_circuit_behaves_identically() {
        let c = sample();
        let back = read(&emit(&c).unwrap()).unwrap();
        let dim = 1 << c.num_qubits;
        let mut init = vec![Complex64::new(0.0, 0.0); dim];
        init[0] = Complex64::new(1.0, 0.0);
        for seed in 0..32 {
            let a = run(&c, &init, seed).unwrap();
            let b = run(&back, &init, seed).unwrap();
            assert_eq!(a.bits, b.bits, "seed {seed}");
            for (x, y) in a.amps.iter().zip(&b.amps) {
                assert!((x - y).norm() < 1e-12, "seed {seed}");
            }
        }
    }

    #[test]
    fn angles_round_trip_through_their_spellings() {
        for (n, d) in [(0, 1), (1, 1), (-1, 1), (1, 2), (-1, 4), (3, 4), (-3, 8), (7, 8)] {
            let a = Angle::new(n, d);
            assert_eq!(parse_angle(&a.to_string(), 1).unwrap(), a, "{a}");
        }
    }

    #[test]
    fn malformed_input_is_rejected_with_line_numbers() {
        assert!(read("qreg q[2];").is_err());
        let no_reg = "OPENQASM 2.0;\nx q[0];\n";
        assert!(read(no_reg).is_err());
        let bad_gate = "OPENQASM 2.0;\nqreg q[1];\nry(0.5) q[0];\n";
        let e = read(bad_gate).unwrap_err();
        assert_eq!(e.line, 3);
        let oob = "OPENQASM 2.0;\nqreg q[1];\nx q[4];\n";
        assert!(read(oob).is_err());
    }
}
