//! Lowering to flat circuits.
//!
//! Three passes take a verified, forget-free function down to a
//! [`FlatCircuit`]:
//!
//! 1. [`inline_unroll`] monomorphizes: it evaluates all static classical
//!    data, unrolls recursion by deciding classical guards per
//!    specialization, splits every register into per-wire variables, and
//!    dissolves garbage bins by tracking disposed wires symbolically.
//!    Measured bits stay symbolic, since their values only exist at run
//!    time.
//! 2. [`decompose_controls`] rewrites every statement into the target gate
//!    set: x, h, t, t-dagger, u1 and cx. Quantum conditions become
//!    controls; two controls expand through the standard fifteen-gate
//!    Toffoli sequence; longer control rows build an and-chain over fresh
//!    ancillas. Phases under two controls use the five-gate u1 ladder.
//! 3. [`allocate_registers`] maps wires to qubit indices with a linear scan
//!    over a least-index free list. Wires related by select and distribute
//!    share one index, which is what makes branch outputs cost nothing.
//!
//! [`run_flat`] executes a lowered circuit on a labeled input state and
//! reassembles the outputs in the statement-level simulator's labeling, so
//! the two executions can be compared directly.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::circuit::{run, FlatCircuit, FlatGate, Gate};
use crate::derive::materialize;
use crate::ir::{
    Angle, Atom, BinDir, CVal, Effect, FuncName, FunctionDef, IrError, Literal, Mode, OpTarget,
    Operation, Program, Statement, Var, VarKind,
};
use crate::sim::{EntryOutputs, StateVector};

/// Nesting bound for the unroller, independent of fuel: a call chain this
/// deep without returning has no decidable base case.
const MAX_DEPTH: u32 = 256;

/// An inlined, register-free function plus its output labeling.
#[derive(Clone, Debug)]
pub struct FlatFunction {
    /// Flat body over single-wire variables; no user calls, no forgets, no
    /// static classical data left.
    pub def: FunctionDef,
    /// `(label, wire)` pairs in the statement-level simulator's output
    /// order: conserved parameter wires first, then returned wires, with
    /// garbage wires labeled `%name[i]`.
    pub out_labels: Vec<(String, String)>,
}

/// A symbolic value during inlining.
#[derive(Clone, Debug)]
enum IVal {
    /// A quantum register as an ordered list of wire names.
    Wires(Vec<String>),
    /// A classical value known at lowering time.
    Static(CVal),
    /// A classical bit that only exists at run time, named by the flat
    /// variable its measurement produces.
    Bit(String),
    /// A garbage bin: a stack of disposed chunks.
    Bin(Vec<GChunk>),
    /// Produced under a statically false condition.
    Skipped,
}

/// One disposed item; mirrors the simulator's bin contents.
#[derive(Clone, Debug)]
enum GChunk {
    Wires(Vec<String>),
    Nested(Vec<GChunk>),
}

fn flatten_chunks(chunks: &[GChunk], out: &mut Vec<String>) {
    for c in chunks {
        match c {
            GChunk::Wires(ws) => out.extend(ws.iter().cloned()),
            GChunk::Nested(inner) => flatten_chunks(inner, out),
        }
    }
}

struct Frame {
    cenv: BTreeMap<String, CVal>,
    env: BTreeMap<String, IVal>,
    bin_out: Vec<GChunk>,
    bin_in: Vec<GChunk>,
}

struct Inliner<'a> {
    p: &'a mut Program,
    flat: FunctionDef,
    fuel: u64,
    fresh: u64,
}

/// Inlines and unrolls `entry` applied to the given static classical
/// arguments. `fuel` bounds the total number of inlined calls; recursion
/// whose guards cannot be decided from static data is an error.
pub fn inline_unroll(
    p: &mut Program,
    entry: &FuncName,
    args: &[CVal],
    fuel: u64,
) -> Result<FlatFunction, IrError> {
    materialize(p, entry)?;
    let def = p.get(entry).expect("materialized").clone();
    if def.bin.as_ref().map(|(_, d)| *d) == Some(BinDir::In) {
        return Err(IrError::new("bin-consuming functions cannot be lowered as entries"));
    }
    let mut cenv: BTreeMap<String, CVal> = BTreeMap::new();
    let mut ci = args.iter();
    for q in def.classical_params() {
        let v = ci
            .next()
            .ok_or_else(|| IrError::new(format!("missing classical argument {}", q.var)))?;
        cenv.insert(q.var.name.clone(), *v);
    }
    if ci.next().is_some() {
        return Err(IrError::new("too many classical arguments"));
    }

    let mut inliner = Inliner { p, flat: FunctionDef::new(def.name.clone()), fuel, fresh: 0 };

    // Entry parameter wires use the simulator's labels: a width-1
    // parameter `a` is the wire `a`, a wider one is `a[0]`, `a[1]`, ...
    let wires_for = |param: &crate::ir::Param| -> Result<Vec<String>, IrError> {
        let w = param.width_expr().eval(&cenv)?.as_int()?;
        let w =
            usize::try_from(w).map_err(|_| IrError::new(format!("negative width {}", param.var)))?;
        Ok(if w == 1 {
            vec![param.var.name.clone()]
        } else {
            (0..w).map(|i| format!("{}[{i}]", param.var.name)).collect()
        })
    };
    let mut conserved_vals = Vec::new();
    let mut classical_args = Vec::new();
    let mut conserved_labels: Vec<String> = Vec::new();
    for q in &def.conserved_params {
        match q.var.kind {
            VarKind::Classical => classical_args.push(*cenv.get(&q.var.name).expect("bound")),
            VarKind::Quantum => {
                let ws = wires_for(q)?;
                conserved_labels.extend(ws.iter().cloned());
                for w in &ws {
                    inliner
                        .flat
                        .conserved_params
                        .push(crate::ir::Param { var: Var::q(w.clone()), width: None });
                }
                conserved_vals.push(IVal::Wires(ws));
            }
            VarKind::Garbage => return Err(IrError::new("garbage conserved parameter")),
        }
    }
    let mut consumed_vals = Vec::new();
    for q in &def.consumed_params {
        let ws = wires_for(q)?;
        for w in &ws {
            inliner
                .flat
                .consumed_params
                .push(crate::ir::Param { var: Var::q(w.clone()), width: None });
        }
        consumed_vals.push(IVal::Wires(ws));
    }

    let returned =
        inliner.activate(&def.name, &classical_args, &conserved_vals, consumed_vals, &[], 0)?;

    let mut out_labels: Vec<(String, String)> =
        conserved_labels.iter().map(|w| (w.clone(), w.clone())).collect();
    for (var, val) in returned {
        match val {
            IVal::Wires(ws) => {
                for (i, w) in ws.iter().enumerate() {
                    let label =
                        if ws.len() == 1 { var.name.clone() } else { format!("{}[{i}]", var.name) };
                    out_labels.push((label, w.clone()));
                }
            }
            IVal::Bin(chunks) => {
                let mut ws = Vec::new();
                flatten_chunks(&chunks, &mut ws);
                for (i, w) in ws.iter().enumerate() {
                    out_labels.push((format!("%{}[{i}]", var.name), w.clone()));
                }
            }
            // Static classical returns have no circuit representation and
            // measured bits live in the classical register.
            IVal::Static(_) | IVal::Bit(_) => {}
            IVal::Skipped => {
                return Err(IrError::new(format!("returned {var} was never produced")))
            }
        }
    }
    inliner.flat.returned = out_labels.iter().map(|(_, w)| Var::q(w.clone())).collect();
    let flat = inliner.flat;
    Ok(FlatFunction { def: flat, out_labels })
}

impl Inliner<'_> {
    fn fresh_wire(&mut self, hint: &str) -> String {
        let n = self.fresh;
        self.fresh += 1;
        format!("{hint}~{n}")
    }

    fn fresh_bit(&mut self) -> String {
        let n = self.fresh;
        self.fresh += 1;
        format!("m~{n}")
    }

    fn emit(&mut self, mut s: Statement) {
        s.id = self.flat.fresh_stmt_id();
        self.flat.body.push(s);
    }

    fn gate(
        &mut self,
        produced: Vec<Var>,
        op: Operation,
        conserved: Vec<Atom>,
        consumed: Vec<Var>,
        condition: Vec<Literal>,
    ) {
        let effect = op.target.builtin_effect().unwrap_or(Effect::Pure);
        self.emit(Statement {
            id: crate::ir::StmtId(0),
            produced_classical: vec![],
            produced,
            effect,
            op,
            conserved,
            consumed,
            condition,
            pair: None,
        });
    }

    fn take_wires(frame: &Frame, v: &Var) -> Result<Vec<String>, IrError> {
        match frame.env.get(&v.name) {
            Some(IVal::Wires(ws)) => Ok(ws.clone()),
            other => Err(IrError::new(format!("expected a quantum value in {v}, found {other:?}"))),
        }
    }

    /// Inlines one activation, returning its bound return values.
    fn activate(
        &mut self,
        name: &FuncName,
        classical_args: &[CVal],
        conserved: &[IVal],
        consumed: Vec<IVal>,
        cond: &[Literal],
        depth: u32,
    ) -> Result<Vec<(Var, IVal)>, IrError> {
        if depth > MAX_DEPTH {
            return Err(IrError::new(
                "inlining nests too deep; recursion has no decidable base case",
            ));
        }
        materialize(self.p, name)?;
        let def = self.p.get(name).expect("materialized").clone();
        let mut frame = Frame {
            cenv: BTreeMap::new(),
            env: BTreeMap::new(),
            bin_out: Vec::new(),
            bin_in: Vec::new(),
        };
        let mut ci = classical_args.iter();
        let mut qi = conserved.iter();
        for q in &def.conserved_params {
            match q.var.kind {
                VarKind::Classical => {
                    let v = ci.next().ok_or_else(|| {
                        IrError::new(format!("{name}: missing classical argument"))
                    })?;
                    frame.cenv.insert(q.var.name.clone(), *v);
                }
                _ => {
                    let v =
                        qi.next().ok_or_else(|| IrError::new(format!("{name}: missing operand")))?;
                    frame.env.insert(q.var.name.clone(), v.clone());
                }
            }
        }
        let bin_in_var = match &def.bin {
            Some((v, BinDir::In)) => Some(v.clone()),
            _ => None,
        };
        let mut args = consumed.into_iter();
        for q in &def.consumed_params {
            let v = args.next().ok_or_else(|| IrError::new(format!("{name}: missing operand")))?;
            if Some(&q.var) == bin_in_var.as_ref() {
                match v {
                    IVal::Bin(chunks) => frame.bin_in = chunks,
                    other => {
                        return Err(IrError::new(format!(
                            "{name}: bin argument is not garbage: {other:?}"
                        )))
                    }
                }
            } else {
                frame.env.insert(q.var.name.clone(), v);
            }
        }

        for s in &def.body {
            self.step(&mut frame, s, cond, name, depth)?;
        }

        if !frame.bin_in.is_empty() {
            return Err(IrError::new(format!("{name}: bin not fully drawn down")));
        }
        let bin_out_var = match &def.bin {
            Some((v, BinDir::Out)) => Some(v.clone()),
            _ => None,
        };
        let mut out = Vec::new();
        for r in &def.returned {
            let val = if Some(r) == bin_out_var.as_ref() {
                IVal::Bin(core::mem::take(&mut frame.bin_out))
            } else {
                match r.kind {
                    VarKind::Classical => match frame.cenv.get(&r.name) {
                        Some(v) => IVal::Static(*v),
                        None => match frame.env.get(&r.name) {
                            Some(IVal::Bit(b)) => IVal::Bit(b.clone()),
                            _ => {
                                return Err(IrError::new(format!(
                                    "{name}: returned {r} has no value"
                                )))
                            }
                        },
                    },
                    _ => frame
                        .env
                        .get(&r.name)
                        .cloned()
                        .ok_or_else(|| IrError::new(format!("{name}: returned {r} unbound")))?,
                }
            };
            out.push((r.clone(), val));
        }
        Ok(out)
    }

    /// Resolves a statement condition against the frame: static literals
    /// are decided now, quantum and measured-bit literals stay symbolic.
    /// Returns `None` when the statement is statically skipped.
    fn resolve_condition(
        frame: &Frame,
        s: &Statement,
        outer: &[Literal],
        ctx: &FuncName,
    ) -> Result<Option<Vec<Literal>>, IrError> {
        let mut eff = outer.to_vec();
        for l in &s.condition {
            match l.var.kind {
                VarKind::Classical => {
                    if let Some(v) = frame.cenv.get(&l.var.name) {
                        if v.as_bool()? == l.negated {
                            return Ok(None);
                        }
                    } else if let Some(IVal::Bit(b)) = frame.env.get(&l.var.name) {
                        eff.push(Literal { var: Var::c(b.clone()), negated: l.negated });
                    } else {
                        return Err(IrError::new(format!(
                            "{ctx}: condition {} is not decidable at lowering time",
                            l.var
                        )));
                    }
                }
                VarKind::Quantum => {
                    let ws = Self::take_wires(frame, &l.var)?;
                    if ws.len() != 1 {
                        return Err(IrError::new(format!(
                            "{ctx}: condition {} is not a single wire",
                            l.var
                        )));
                    }
                    eff.push(Literal { var: Var::q(ws[0].clone()), negated: l.negated });
                }
                VarKind::Garbage => {
                    return Err(IrError::new(format!("{ctx}: garbage condition {}", l.var)))
                }
            }
        }
        Ok(Some(eff))
    }

    /// Reads a conserved atom as a static classical value if possible.
    fn static_atom(frame: &Frame, a: &Atom) -> Option<CVal> {
        match a {
            Atom::Int(k) => Some(CVal::Int(*k)),
            Atom::Var(v) if v.kind == VarKind::Classical => frame.cenv.get(&v.name).copied(),
            _ => None,
        }
    }

    /// Binds the produced garbage variable of a garbage-mode builtin
    /// (empty: unitary builtins keep nothing extra), or absorbs the
    /// consumed empty bin of its outer adjoint.
    fn bind_empty_garbage(frame: &mut Frame, s: &Statement) -> Result<(), IrError> {
        if s.op.mode.consumes_bin() {
            let v = s.consumed.last().expect("bin operand");
            match frame.env.get(&v.name) {
                Some(IVal::Bin(chunks)) if chunks.is_empty() => Ok(()),
                other => {
                    Err(IrError::new(format!("expected an empty bin in {v}, found {other:?}")))
                }
            }
        } else {
            let v = s.produced.last().expect("garbage output");
            frame.env.insert(v.name.clone(), IVal::Bin(Vec::new()));
            Ok(())
        }
    }

    fn step(
        &mut self,
        frame: &mut Frame,
        s: &Statement,
        outer: &[Literal],
        ctx: &FuncName,
        depth: u32,
    ) -> Result<(), IrError> {
        let Some(eff) = Self::resolve_condition(frame, s, outer, ctx)? else {
            for v in s.produced.iter().chain(s.produced_classical.iter()) {
                frame.env.insert(v.name.clone(), IVal::Skipped);
            }
            return Ok(());
        };
        let m = s.op.mode;
        let inv = m.inner_adjoint ^ (m.garbage && m.outer_adjoint);
        match &s.op.target {
            OpTarget::Classical(e) => {
                let out = &s.produced_classical[0];
                match e.eval(&frame.cenv) {
                    Ok(v) => {
                        frame.cenv.insert(out.name.clone(), v);
                    }
                    Err(_) => {
                        // A bare alias of a measured bit stays symbolic;
                        // anything else must be decidable now.
                        if let crate::ir::CExpr::Var(name) = e {
                            if let Some(IVal::Bit(b)) = frame.env.get(name) {
                                let b = b.clone();
                                frame.env.insert(out.name.clone(), IVal::Bit(b));
                                return Ok(());
                            }
                        }
                        return Err(IrError::new(format!(
                            "{ctx}: classical expression for {out} is not static"
                        )));
                    }
                }
            }
            OpTarget::New { one } => {
                if !inv {
                    let w = self.fresh_wire(&s.produced[0].name);
                    self.gate(
                        vec![Var::q(w.clone())],
                        Operation::plain(OpTarget::New { one: *one }),
                        vec![],
                        vec![],
                        eff,
                    );
                    frame.env.insert(s.produced[0].name.clone(), IVal::Wires(vec![w]));
                } else {
                    let ws = Self::take_wires(frame, &s.consumed[0])?;
                    self.gate(
                        vec![],
                        Operation::with_mode(OpTarget::New { one: *one }, Mode::adjoint()),
                        vec![],
                        ws.into_iter().map(Var::q).collect(),
                        eff,
                    );
                }
                if m.garbage {
                    Self::bind_empty_garbage(frame, s)?;
                }
            }
            OpTarget::X | OpTarget::H => {
                let ws = Self::take_wires(frame, &s.consumed[0])?;
                let mut out = Vec::new();
                for w in &ws {
                    let nw = self.fresh_wire(&s.produced[0].name);
                    self.gate(
                        vec![Var::q(nw.clone())],
                        Operation::plain(s.op.target.clone()),
                        vec![],
                        vec![Var::q(w.clone())],
                        eff.clone(),
                    );
                    out.push(nw);
                }
                frame.env.insert(s.produced[0].name.clone(), IVal::Wires(out));
                if m.garbage {
                    Self::bind_empty_garbage(frame, s)?;
                }
            }
            OpTarget::CX => {
                let ctrl = s.conserved[0]
                    .as_var()
                    .ok_or_else(|| IrError::new("CX control must be a variable"))?;
                let cs = Self::take_wires(frame, ctrl)?;
                let ts = Self::take_wires(frame, &s.consumed[0])?;
                if cs.len() != ts.len() {
                    return Err(IrError::new("CX operand widths differ"));
                }
                let mut out = Vec::new();
                for (c, t) in cs.iter().zip(&ts) {
                    let nw = self.fresh_wire(&s.produced[0].name);
                    self.gate(
                        vec![Var::q(nw.clone())],
                        Operation::plain(OpTarget::CX),
                        vec![Atom::Var(Var::q(c.clone()))],
                        vec![Var::q(t.clone())],
                        eff.clone(),
                    );
                    out.push(nw);
                }
                frame.env.insert(s.produced[0].name.clone(), IVal::Wires(out));
                if m.garbage {
                    Self::bind_empty_garbage(frame, s)?;
                }
            }
            OpTarget::Phase(a) => {
                let angle = if inv { a.negated() } else { *a };
                self.gate(vec![], Operation::plain(OpTarget::Phase(angle)), vec![], vec![], eff);
                if m.garbage {
                    Self::bind_empty_garbage(frame, s)?;
                }
            }
            OpTarget::Dup => {
                let src = s.conserved[0]
                    .as_var()
                    .ok_or_else(|| IrError::new("dup source must be a variable"))?;
                let ss = Self::take_wires(frame, src)?;
                if !inv {
                    let mut out = Vec::new();
                    for w in &ss {
                        let nw = self.fresh_wire(&s.produced[0].name);
                        self.gate(
                            vec![Var::q(nw.clone())],
                            Operation::plain(OpTarget::Dup),
                            vec![Atom::Var(Var::q(w.clone()))],
                            vec![],
                            eff.clone(),
                        );
                        out.push(nw);
                    }
                    frame.env.insert(s.produced[0].name.clone(), IVal::Wires(out));
                } else {
                    let ws = Self::take_wires(frame, &s.consumed[0])?;
                    if ws.len() != ss.len() {
                        return Err(IrError::new("undup operand widths differ"));
                    }
                    for (orig, copy) in ss.iter().zip(&ws) {
                        self.gate(
                            vec![],
                            Operation::with_mode(OpTarget::Dup, Mode::adjoint()),
                            vec![Atom::Var(Var::q(orig.clone()))],
                            vec![Var::q(copy.clone())],
                            eff.clone(),
                        );
                    }
                }
                if m.garbage {
                    Self::bind_empty_garbage(frame, s)?;
                }
            }
            OpTarget::Select => {
                let ctrl = s.conserved[0]
                    .as_var()
                    .ok_or_else(|| IrError::new("select control must be a variable"))?;
                let static_ctrl = Self::static_atom(frame, &s.conserved[0])
                    .map(|v| v.as_bool())
                    .transpose()?;
                if let Some(b) = static_ctrl {
                    if !inv {
                        let picked = &s.consumed[usize::from(b)];
                        let other = &s.consumed[usize::from(!b)];
                        if !matches!(frame.env.get(&other.name), Some(IVal::Skipped) | None) {
                            return Err(IrError::new(format!(
                                "unselected branch {other} still live under classical control"
                            )));
                        }
                        let v = frame
                            .env
                            .get(&picked.name)
                            .cloned()
                            .ok_or_else(|| IrError::new(format!("{picked} unbound")))?;
                        frame.env.insert(s.produced[0].name.clone(), v);
                    } else {
                        let v = frame
                            .env
                            .get(&s.consumed[0].name)
                            .cloned()
                            .ok_or_else(|| IrError::new(format!("{} unbound", s.consumed[0])))?;
                        let (live, dead) = if b {
                            (&s.produced[1], &s.produced[0])
                        } else {
                            (&s.produced[0], &s.produced[1])
                        };
                        frame.env.insert(live.name.clone(), v);
                        frame.env.insert(dead.name.clone(), IVal::Skipped);
                    }
                } else {
                    // Run-time control: branches alias the same qubits, so
                    // the statement survives for the allocator and emits no
                    // gates. The control is a wire or a measured bit.
                    let ctrl_atom = match ctrl.kind {
                        VarKind::Quantum => {
                            let ws = Self::take_wires(frame, ctrl)?;
                            if ws.len() != 1 {
                                return Err(IrError::new("select control must be a single wire"));
                            }
                            Atom::Var(Var::q(ws[0].clone()))
                        }
                        VarKind::Classical => match frame.env.get(&ctrl.name) {
                            Some(IVal::Bit(b)) => Atom::Var(Var::c(b.clone())),
                            _ => {
                                return Err(IrError::new(format!("undefined control {ctrl}")));
                            }
                        },
                        VarKind::Garbage => {
                            return Err(IrError::new("garbage select control"));
                        }
                    };
                    if !inv {
                        let a = Self::take_wires(frame, &s.consumed[0])?;
                        let b = Self::take_wires(frame, &s.consumed[1])?;
                        if a.len() != b.len() {
                            return Err(IrError::new("select operand widths differ"));
                        }
                        let mut out = Vec::new();
                        for (x, y) in a.iter().zip(&b) {
                            let nw = self.fresh_wire(&s.produced[0].name);
                            self.gate(
                                vec![Var::q(nw.clone())],
                                Operation::plain(OpTarget::Select),
                                vec![ctrl_atom.clone()],
                                vec![Var::q(x.clone()), Var::q(y.clone())],
                                vec![],
                            );
                            out.push(nw);
                        }
                        frame.env.insert(s.produced[0].name.clone(), IVal::Wires(out));
                    } else {
                        let ws = Self::take_wires(frame, &s.consumed[0])?;
                        let mut outs = (Vec::new(), Vec::new());
                        for w in &ws {
                            let a = self.fresh_wire(&s.produced[0].name);
                            let b = self.fresh_wire(&s.produced[1].name);
                            self.gate(
                                vec![Var::q(a.clone()), Var::q(b.clone())],
                                Operation::with_mode(OpTarget::Select, Mode::adjoint()),
                                vec![ctrl_atom.clone()],
                                vec![Var::q(w.clone())],
                                vec![],
                            );
                            outs.0.push(a);
                            outs.1.push(b);
                        }
                        frame.env.insert(s.produced[0].name.clone(), IVal::Wires(outs.0));
                        frame.env.insert(s.produced[1].name.clone(), IVal::Wires(outs.1));
                    }
                }
                if m.garbage {
                    Self::bind_empty_garbage(frame, s)?;
                }
            }
            OpTarget::Cat { .. } => {
                if !inv {
                    let mut ws = Vec::new();
                    for v in &s.consumed {
                        ws.extend(Self::take_wires(frame, v)?);
                    }
                    frame.env.insert(s.produced[0].name.clone(), IVal::Wires(ws));
                } else {
                    let ws = Self::take_wires(frame, &s.consumed[0])?;
                    let mut offset = 0usize;
                    for (a, out) in s.conserved.iter().zip(&s.produced) {
                        let w = Self::static_atom(frame, a)
                            .ok_or_else(|| IrError::new("uncat width is not static"))?
                            .as_int()?;
                        let w = usize::try_from(w)
                            .map_err(|_| IrError::new("negative uncat width"))?;
                        if offset + w > ws.len() {
                            return Err(IrError::new("uncat widths exceed the register"));
                        }
                        frame
                            .env
                            .insert(out.name.clone(), IVal::Wires(ws[offset..offset + w].to_vec()));
                        offset += w;
                    }
                    if offset != ws.len() {
                        return Err(IrError::new("uncat widths do not cover the register"));
                    }
                }
                if m.garbage {
                    Self::bind_empty_garbage(frame, s)?;
                }
            }
            OpTarget::Measure => {
                if eff.iter().any(|l| l.var.kind == VarKind::Quantum) {
                    return Err(IrError::new("measurement under a quantum condition"));
                }
                let ws = Self::take_wires(frame, &s.consumed[0])?;
                if ws.len() != 1 {
                    return Err(IrError::new("measure expects a single wire"));
                }
                let bit = self.fresh_bit();
                self.emit(Statement {
                    id: crate::ir::StmtId(0),
                    produced_classical: vec![Var::c(bit.clone())],
                    produced: vec![],
                    effect: Effect::Measure,
                    op: Operation::plain(OpTarget::Measure),
                    conserved: vec![],
                    consumed: vec![Var::q(ws[0].clone())],
                    condition: eff,
                    pair: None,
                });
                frame.env.insert(s.produced_classical[0].name.clone(), IVal::Bit(bit));
            }
            OpTarget::Forget => {
                return Err(IrError::new(
                    "cannot lower a forget statement; synthesize uncomputation first",
                ));
            }
            OpTarget::Dispose => {
                if !inv {
                    // Disposal moves wires unconditionally, like the
                    // simulator: run-time conditions gate gates, not moves.
                    match frame.env.get(&s.consumed[0].name) {
                        Some(IVal::Wires(ws)) => {
                            let ws = ws.clone();
                            frame.bin_out.push(GChunk::Wires(ws));
                        }
                        Some(IVal::Bin(chunks)) => {
                            let chunks = chunks.clone();
                            frame.bin_out.push(GChunk::Nested(chunks));
                        }
                        other => {
                            return Err(IrError::new(format!(
                                "dispose of a non-quantum value: {other:?}"
                            )))
                        }
                    }
                } else {
                    let chunk = frame
                        .bin_in
                        .pop()
                        .ok_or_else(|| IrError::new("undispose from an empty bin"))?;
                    let out = &s.produced[0];
                    let val = match chunk {
                        GChunk::Wires(ws) => IVal::Wires(ws),
                        GChunk::Nested(chunks) => IVal::Bin(chunks),
                    };
                    frame.env.insert(out.name.clone(), val);
                }
            }
            OpTarget::Call(base) => {
                if self.fuel == 0 {
                    return Err(IrError::new("inlining ran out of fuel"));
                }
                self.fuel -= 1;
                let callee = FuncName::with_mode(base.clone(), s.op.mode);
                materialize(self.p, &callee)?;
                let cdef = self.p.get(&callee).expect("materialized").clone();
                let mut classical_args = Vec::new();
                let mut cons = Vec::new();
                for (q, a) in cdef.conserved_params.iter().zip(&s.conserved) {
                    if q.var.kind == VarKind::Classical {
                        let v = Self::static_atom(frame, a).ok_or_else(|| {
                            IrError::new(format!(
                                "{ctx}: classical argument {a} of {callee} is not static"
                            ))
                        })?;
                        classical_args.push(v);
                    } else {
                        let v = a
                            .as_var()
                            .ok_or_else(|| IrError::new("quantum argument must be a variable"))?;
                        cons.push(
                            frame
                                .env
                                .get(&v.name)
                                .cloned()
                                .ok_or_else(|| IrError::new(format!("{v} unbound")))?,
                        );
                    }
                }
                let mut consumed = Vec::new();
                for v in &s.consumed {
                    consumed.push(
                        frame
                            .env
                            .get(&v.name)
                            .cloned()
                            .ok_or_else(|| IrError::new(format!("{v} unbound")))?,
                    );
                }
                let rets =
                    self.activate(&callee, &classical_args, &cons, consumed, &eff, depth + 1)?;
                let mut rc = s.produced_classical.iter();
                let mut rq = s.produced.iter();
                for (_, val) in rets {
                    match val {
                        IVal::Static(v) => {
                            let out = rc
                                .next()
                                .ok_or_else(|| IrError::new("too many classical returns"))?;
                            frame.cenv.insert(out.name.clone(), v);
                        }
                        IVal::Bit(b) => {
                            let out = rc
                                .next()
                                .ok_or_else(|| IrError::new("too many classical returns"))?;
                            frame.env.insert(out.name.clone(), IVal::Bit(b));
                        }
                        val => {
                            let out = rq
                                .next()
                                .ok_or_else(|| IrError::new("too many quantum returns"))?;
                            frame.env.insert(out.name.clone(), val);
                        }
                    }
                }
                if rc.next().is_some() || rq.next().is_some() {
                    return Err(IrError::new(format!("{callee}: too few returns")));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Control decomposition
// ---------------------------------------------------------------------------

/// Rewrites a flat function into the target gate set: x, h, u1 (with t and
/// t-dagger as named quarter turns) and cx. Quantum conditions become gate
/// controls; select and distribute survive as zero-gate aliasing directives
/// for the allocator; measured-bit conditions stay attached for the
/// classical guards of the final circuit.
pub fn decompose_controls(f: &FunctionDef) -> Result<FunctionDef, IrError> {
    let mut d = Decomposer { out: FunctionDef::new(f.name.clone()), fresh: 0 };
    d.out.conserved_params = f.conserved_params.clone();
    d.out.consumed_params = f.consumed_params.clone();
    d.out.returned = f.returned.clone();
    for s in &f.body {
        d.step(s)?;
    }
    Ok(d.out)
}

/// A positive or negated single-wire control.
type Ctrl = (String, bool);

struct Decomposer {
    out: FunctionDef,
    fresh: u64,
}

impl Decomposer {
    fn fresh_anc(&mut self) -> String {
        let n = self.fresh;
        self.fresh += 1;
        format!("anc~{n}")
    }

    fn emit(
        &mut self,
        produced: Vec<Var>,
        op: Operation,
        conserved: Vec<Atom>,
        consumed: Vec<Var>,
        condition: Vec<Literal>,
    ) {
        let effect = op.target.builtin_effect().unwrap_or(Effect::Pure);
        let id = self.out.fresh_stmt_id();
        self.out.body.push(Statement {
            id,
            produced_classical: vec![],
            produced,
            effect,
            op,
            conserved,
            consumed,
            condition,
            pair: None,
        });
    }

    fn g_x(&mut self, t: &str, clits: &[Literal]) {
        self.emit(
            vec![Var::q(t.to_string())],
            Operation::plain(OpTarget::X),
            vec![],
            vec![Var::q(t.to_string())],
            clits.to_vec(),
        );
    }

    fn g_h(&mut self, t: &str, clits: &[Literal]) {
        self.emit(
            vec![Var::q(t.to_string())],
            Operation::plain(OpTarget::H),
            vec![],
            vec![Var::q(t.to_string())],
            clits.to_vec(),
        );
    }

    fn g_cx(&mut self, c: &str, t: &str, clits: &[Literal]) {
        self.emit(
            vec![Var::q(t.to_string())],
            Operation::plain(OpTarget::CX),
            vec![Atom::Var(Var::q(c.to_string()))],
            vec![Var::q(t.to_string())],
            clits.to_vec(),
        );
    }

    /// `u1(angle)` on one wire: a phase statement conditioned on it.
    fn g_u1(&mut self, angle: Angle, t: &str, clits: &[Literal]) {
        if angle.num == 0 {
            return;
        }
        let mut cond = vec![Literal::pos(Var::q(t.to_string()))];
        cond.extend(clits.iter().cloned());
        self.emit(vec![], Operation::plain(OpTarget::Phase(angle)), vec![], vec![], cond);
    }

    fn g_new(&mut self, w: &str) {
        self.emit(
            vec![Var::q(w.to_string())],
            Operation::plain(OpTarget::New { one: false }),
            vec![],
            vec![],
            vec![],
        );
    }

    fn g_unnew(&mut self, w: &str) {
        self.emit(
            vec![],
            Operation::with_mode(OpTarget::New { one: false }, Mode::adjoint()),
            vec![],
            vec![Var::q(w.to_string())],
            vec![],
        );
    }

    /// X on `target` under the given controls. Negated controls are
    /// x-sandwiched; 2 controls expand through the fifteen-gate sequence;
    /// more build an and-chain over fresh ancillas.
    fn controlled_x(&mut self, ctrls: &[Ctrl], target: &str, clits: &[Literal]) {
        let negs: Vec<String> =
            ctrls.iter().filter(|(_, neg)| *neg).map(|(w, _)| w.clone()).collect();
        for w in &negs {
            self.g_x(w, clits);
        }
        let pos: Vec<String> = ctrls.iter().map(|(w, _)| w.clone()).collect();
        match pos.len() {
            0 => self.g_x(target, clits),
            1 => self.g_cx(&pos[0], target, clits),
            2 => self.ccx(&pos[0], &pos[1], target, clits),
            _ => {
                let (anc, used) = self.and_chain(&pos[..pos.len() - 1], clits);
                self.ccx(&anc, &pos[pos.len() - 1], target, clits);
                self.undo_and_chain(&used, clits);
            }
        }
        for w in negs.iter().rev() {
            self.g_x(w, clits);
        }
    }

    /// The standard fifteen-gate Toffoli over h, t, t-dagger and cx.
    fn ccx(&mut self, a: &str, b: &str, t: &str, clits: &[Literal]) {
        let qt = Angle::new(1, 4);
        let qtd = Angle::new(-1, 4);
        self.g_h(t, clits);
        self.g_cx(b, t, clits);
        self.g_u1(qtd, t, clits);
        self.g_cx(a, t, clits);
        self.g_u1(qt, t, clits);
        self.g_cx(b, t, clits);
        self.g_u1(qtd, t, clits);
        self.g_cx(a, t, clits);
        self.g_u1(qt, b, clits);
        self.g_u1(qt, t, clits);
        self.g_h(t, clits);
        self.g_cx(a, b, clits);
        self.g_u1(qt, a, clits);
        self.g_u1(qtd, b, clits);
        self.g_cx(a, b, clits);
    }

    /// Computes the conjunction of `ctrls` (all positive, at least two)
    /// into a fresh ancilla; returns it and the chain steps for undoing.
    fn and_chain(&mut self, ctrls: &[String], clits: &[Literal]) -> (String, Vec<(String, String, String)>) {
        let mut steps: Vec<(String, String, String)> = Vec::new();
        let a0 = self.fresh_anc();
        self.g_new(&a0);
        self.ccx(&ctrls[0], &ctrls[1], &a0, clits);
        steps.push((ctrls[0].clone(), ctrls[1].clone(), a0.clone()));
        let mut acc = a0;
        for c in &ctrls[2..] {
            let a = self.fresh_anc();
            self.g_new(&a);
            self.ccx(c, &acc, &a, clits);
            steps.push((c.clone(), acc.clone(), a.clone()));
            acc = a;
        }
        (acc, steps)
    }

    fn undo_and_chain(&mut self, steps: &[(String, String, String)], clits: &[Literal]) {
        for (a, b, t) in steps.iter().rev() {
            self.ccx(a, b, t, clits);
            self.g_unnew(t);
        }
    }

    /// A phase under the given controls: one control is u1, two use the
    /// five-gate controlled-u1 ladder, more fold the excess into an
    /// and-chain first. No controls means an unobservable global phase.
    fn controlled_phase(&mut self, angle: Angle, ctrls: &[Ctrl], clits: &[Literal]) {
        let negs: Vec<String> =
            ctrls.iter().filter(|(_, neg)| *neg).map(|(w, _)| w.clone()).collect();
        for w in &negs {
            self.g_x(w, clits);
        }
        let pos: Vec<String> = ctrls.iter().map(|(w, _)| w.clone()).collect();
        match pos.len() {
            0 => {}
            1 => self.g_u1(angle, &pos[0], clits),
            2 => self.cu1(angle, &pos[0], &pos[1], clits),
            _ => {
                let (anc, used) = self.and_chain(&pos[..pos.len() - 1], clits);
                self.cu1(angle, &anc, &pos[pos.len() - 1], clits);
                self.undo_and_chain(&used, clits);
            }
        }
        for w in negs.iter().rev() {
            self.g_x(w, clits);
        }
    }

    /// Controlled u1 as u1(θ/2) on both wires around a cx pair.
    fn cu1(&mut self, angle: Angle, c: &str, t: &str, clits: &[Literal]) {
        let half = Angle::new(angle.num, angle.den * 2);
        self.g_u1(half, c, clits);
        self.g_cx(c, t, clits);
        self.g_u1(half.negated(), t, clits);
        self.g_cx(c, t, clits);
        self.g_u1(half, t, clits);
    }

    /// Splits a resolved condition into quantum controls and classical
    /// guard literals.
    fn split_condition(cond: &[Literal]) -> (Vec<Ctrl>, Vec<Literal>) {
        let mut q = Vec::new();
        let mut c = Vec::new();
        for l in cond {
            match l.var.kind {
                VarKind::Quantum => q.push((l.var.name.clone(), l.negated)),
                _ => c.push(l.clone()),
            }
        }
        (q, c)
    }

    fn step(&mut self, s: &Statement) -> Result<(), IrError> {
        let (qc, clits) = Self::split_condition(&s.condition);
        let inv = s.op.mode.inner_adjoint;
        match &s.op.target {
            OpTarget::New { one } => {
                // Allocation is unconditional; only the initializing flip
                // is controlled.
                if !inv {
                    let w = &s.produced[0].name;
                    self.g_new(w);
                    if *one {
                        self.controlled_x(&qc, w, &clits);
                    }
                } else {
                    let w = &s.consumed[0].name;
                    if *one {
                        self.controlled_x(&qc, w, &clits);
                    }
                    self.g_unnew(w);
                }
            }
            OpTarget::X => {
                let t = &s.consumed[0].name;
                self.controlled_x(&qc, t, &clits);
                self.alias(&s.produced[0], t);
            }
            OpTarget::H => {
                if !qc.is_empty() {
                    return Err(IrError::new(
                        "controlled H is outside the target gate set",
                    ));
                }
                let t = &s.consumed[0].name;
                self.g_h(t, &clits);
                self.alias(&s.produced[0], t);
            }
            OpTarget::CX => {
                let c = s.conserved[0].as_var().expect("wire control").name.clone();
                let t = s.consumed[0].name.clone();
                let mut ctrls = qc.clone();
                ctrls.push((c, false));
                self.controlled_x(&ctrls, &t, &clits);
                self.alias(&s.produced[0], &t);
            }
            OpTarget::Phase(a) => {
                self.controlled_phase(*a, &qc, &clits);
            }
            OpTarget::Dup => {
                let src = s.conserved[0].as_var().expect("wire source").name.clone();
                if !inv {
                    let t = &s.produced[0].name;
                    self.g_new(t);
                    let mut ctrls = qc.clone();
                    ctrls.push((src, false));
                    self.controlled_x(&ctrls, t, &clits);
                } else {
                    let t = s.consumed[0].name.clone();
                    let mut ctrls = qc.clone();
                    ctrls.push((src, false));
                    self.controlled_x(&ctrls, &t, &clits);
                    self.g_unnew(&t);
                }
            }
            OpTarget::Select => {
                // Zero gates: operands share qubits. Conditions are moot.
                self.emit(
                    s.produced.clone(),
                    s.op.clone(),
                    s.conserved.clone(),
                    s.consumed.clone(),
                    vec![],
                );
            }
            OpTarget::Measure => {
                if !qc.is_empty() {
                    return Err(IrError::new("measurement under a quantum condition"));
                }
                let id = self.out.fresh_stmt_id();
                self.out.body.push(Statement { id, condition: clits, ..s.clone() });
            }
            other => {
                return Err(IrError::new(format!(
                    "statement {} survived inlining; cannot decompose",
                    other.base_name()
                )))
            }
        }
        Ok(())
    }

    /// Gate expansions write in place; record the producer's new name for
    /// the wire so later statements can keep using it.
    fn alias(&mut self, produced: &Var, wire: &str) {
        if produced.name != wire {
            self.emit(
                vec![produced.clone()],
                Operation::plain(OpTarget::Select),
                vec![],
                vec![Var::q(wire.to_string()), Var::q(wire.to_string())],
                vec![],
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Register allocation
// ---------------------------------------------------------------------------

/// Where everything ended up in the circuit.
#[derive(Clone, Debug, Default)]
pub struct Layout {
    /// Input labels (parameter wires, conserved then consumed) to qubits.
    pub input: Vec<(String, usize)>,
    /// Output labels in simulator order to qubits.
    pub output: Vec<(String, usize)>,
    /// Classical bit index to the measured flat variable it holds.
    pub bits: Vec<String>,
    /// `(qubit, bit)` per measurement, in execution order.
    pub measured: Vec<(usize, usize)>,
    /// Qubits released by the end; they must read zero.
    pub freed: Vec<usize>,
}

/// A lowered entry point.
#[derive(Clone, Debug)]
pub struct Lowered {
    pub circuit: FlatCircuit,
    pub layout: Layout,
}

#[derive(Default)]
struct UnionFind {
    ids: BTreeMap<String, usize>,
    parent: Vec<usize>,
}

impl UnionFind {
    fn id(&mut self, name: &str) -> usize {
        if let Some(&i) = self.ids.get(name) {
            return i;
        }
        let i = self.parent.len();
        self.parent.push(i);
        self.ids.insert(name.to_string(), i);
        i
    }
    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let r = self.find(self.parent[i]);
            self.parent[i] = r;
        }
        self.parent[i]
    }
    fn union(&mut self, a: &str, b: &str) {
        let (x, y) = (self.id(a), self.id(b));
        let (rx, ry) = (self.find(x), self.find(y));
        if rx != ry {
            self.parent[rx] = ry;
        }
    }
    fn class_of(&mut self, name: &str) -> usize {
        let i = self.id(name);
        self.find(i)
    }
}

/// Linear-scan allocation of a decomposed function. Wires joined by select
/// or distribute share an index; releases feed a least-index free list, so
/// the qubit total equals the peak number of live wires.
pub fn allocate_registers(
    f: &FunctionDef,
    out_labels: &[(String, String)],
) -> Result<Lowered, IrError> {
    let mut uf = UnionFind::default();
    for s in &f.body {
        if matches!(s.op.target, OpTarget::Select) {
            for v in s.produced.iter().chain(s.consumed.iter()) {
                uf.union(&v.name, &s.produced[0].name);
            }
        }
    }
    // Complementary branches release a shared wire once each; the index
    // comes free only when the last release has cleaned it.
    let mut releases: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &f.body {
        if matches!(s.op.target, OpTarget::New { .. }) && s.op.mode.inner_adjoint {
            *releases.entry(uf.class_of(&s.consumed[0].name)).or_insert(0) += 1;
        }
    }

    let mut live: BTreeMap<usize, usize> = BTreeMap::new();
    let mut free: BTreeSet<usize> = BTreeSet::new();
    let mut total = 0usize;
    let mut circuit = FlatCircuit::default();
    let mut layout = Layout::default();
    let mut rc_bits: BTreeMap<String, usize> = BTreeMap::new();

    let alloc = |uf: &mut UnionFind,
                     live: &mut BTreeMap<usize, usize>,
                     free: &mut BTreeSet<usize>,
                     total: &mut usize,
                     name: &str|
     -> usize {
        let class = uf.class_of(name);
        if let Some(&q) = live.get(&class) {
            return q;
        }
        let q = match free.iter().next().copied() {
            Some(q) => {
                free.remove(&q);
                q
            }
            None => {
                let q = *total;
                *total += 1;
                q
            }
        };
        live.insert(class, q);
        q
    };
    let index_of = |uf: &mut UnionFind,
                    live: &BTreeMap<usize, usize>,
                    name: &str|
     -> Result<usize, IrError> {
        let class = uf.class_of(name);
        live.get(&class)
            .copied()
            .ok_or_else(|| IrError::new(format!("wire {name} used while not live")))
    };

    for q in f.conserved_params.iter().chain(f.consumed_params.iter()) {
        let idx = alloc(&mut uf, &mut live, &mut free, &mut total, &q.var.name);
        layout.input.push((q.var.name.clone(), idx));
    }

    let guard_of = |rc_bits: &BTreeMap<String, usize>, lits: &[Literal]| -> Result<Vec<(usize, bool)>, IrError> {
        let mut g = Vec::new();
        for l in lits {
            let bit = rc_bits.get(&l.var.name).copied().ok_or_else(|| {
                IrError::new(format!("guard {} does not name a measured bit", l.var))
            })?;
            g.push((bit, !l.negated));
        }
        Ok(g)
    };

    for s in &f.body {
        let clits: Vec<Literal> =
            s.condition.iter().filter(|l| l.var.kind == VarKind::Classical).cloned().collect();
        let quantum_lits: Vec<&Literal> =
            s.condition.iter().filter(|l| l.var.kind == VarKind::Quantum).collect();
        match &s.op.target {
            OpTarget::New { .. } if !s.op.mode.inner_adjoint => {
                alloc(&mut uf, &mut live, &mut free, &mut total, &s.produced[0].name);
            }
            OpTarget::New { .. } => {
                let class = uf.class_of(&s.consumed[0].name);
                if !live.contains_key(&class) {
                    return Err(IrError::new("release of a wire that is not live"));
                }
                let pending = releases.get_mut(&class).expect("counted in the pre-pass");
                *pending -= 1;
                if *pending == 0 {
                    let q = live.remove(&class).expect("checked live");
                    free.insert(q);
                }
            }
            OpTarget::X => {
                let q = index_of(&mut uf, &live, &s.consumed[0].name)?;
                circuit
                    .gates
                    .push(FlatGate { gate: Gate::X { q }, guard: guard_of(&rc_bits, &clits)? });
            }
            OpTarget::H => {
                let q = index_of(&mut uf, &live, &s.consumed[0].name)?;
                circuit
                    .gates
                    .push(FlatGate { gate: Gate::H { q }, guard: guard_of(&rc_bits, &clits)? });
            }
            OpTarget::CX => {
                let c = s.conserved[0].as_var().expect("wire control");
                let cq = index_of(&mut uf, &live, &c.name)?;
                let tq = index_of(&mut uf, &live, &s.consumed[0].name)?;
                circuit.gates.push(FlatGate {
                    gate: Gate::Cx { c: cq, t: tq },
                    guard: guard_of(&rc_bits, &clits)?,
                });
            }
            OpTarget::Phase(a) => {
                // Decomposed phases carry their target as the single
                // positive quantum condition literal.
                let [w] = quantum_lits.as_slice() else {
                    return Err(IrError::new("phase does not name a single target wire"));
                };
                if w.negated {
                    return Err(IrError::new("phase on a negated wire survived decomposition"));
                }
                let q = index_of(&mut uf, &live, &w.var.name)?;
                let gate = match (a.num, a.den) {
                    (1, 4) => Gate::T { q },
                    (-1, 4) => Gate::Tdg { q },
                    _ => Gate::U1 { q, angle: *a },
                };
                circuit.gates.push(FlatGate { gate, guard: guard_of(&rc_bits, &clits)? });
            }
            OpTarget::Measure => {
                let q = index_of(&mut uf, &live, &s.consumed[0].name)?;
                let bit = layout.bits.len();
                layout.bits.push(s.produced_classical[0].name.clone());
                rc_bits.insert(s.produced_classical[0].name.clone(), bit);
                layout.measured.push((q, bit));
                circuit.gates.push(FlatGate {
                    gate: Gate::Measure { q, bit },
                    guard: guard_of(&rc_bits, &clits)?,
                });
            }
            OpTarget::Select => {}
            other => {
                return Err(IrError::new(format!(
                    "statement {} survived decomposition; cannot allocate",
                    other.base_name()
                )))
            }
        }
    }

    for (label, wire) in out_labels {
        let q = index_of(&mut uf, &live, wire)?;
        layout.output.push((label.clone(), q));
    }
    layout.freed = free.into_iter().collect();
    circuit.num_qubits = total;
    circuit.num_bits = layout.bits.len();
    circuit.check()?;
    Ok(Lowered { circuit, layout })
}

/// Runs all three passes on one entry point.
pub fn lower(
    p: &mut Program,
    entry: &FuncName,
    args: &[CVal],
    fuel: u64,
) -> Result<Lowered, IrError> {
    let flat = inline_unroll(p, entry, args, fuel)?;
    let dec = decompose_controls(&flat.def)?;
    allocate_registers(&dec, &flat.out_labels)
}

// ---------------------------------------------------------------------------
// Flat execution with statement-simulator labeling
// ---------------------------------------------------------------------------

/// Executes a lowered circuit on a labeled input state and reassembles an
/// [`EntryOutputs`] in the statement-level simulator's labeling, so the two
/// backends can be compared amplitude for amplitude. Released qubits are
/// checked to read zero and projected away; measured qubits are projected
/// onto their outcomes.
pub fn run_flat(
    lowered: &Lowered,
    input: &StateVector,
    seed: u64,
    tolerance: f64,
) -> Result<EntryOutputs, IrError> {
    let n = lowered.circuit.num_qubits;
    let want: BTreeSet<&String> = lowered.layout.input.iter().map(|(l, _)| l).collect();
    let got: BTreeSet<&String> = input.labels.iter().collect();
    if want != got {
        return Err(IrError::new(format!(
            "input labels {:?} do not match the circuit's {:?}",
            input.labels,
            lowered.layout.input.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>()
        )));
    }

    // Embed: amplitudes ordered by qubit index, ancillas zero.
    let dim = 1usize << n;
    let mut amps = vec![Complex64::new(0.0, 0.0); dim];
    let in_dim = input.amps.len();
    let qubit_of: BTreeMap<&String, usize> =
        lowered.layout.input.iter().map(|(l, q)| (l, *q)).collect();
    for (i, a) in input.amps.iter().enumerate() {
        let mut idx = 0usize;
        for (pos, label) in input.labels.iter().enumerate() {
            let bit = (i >> (input.labels.len() - 1 - pos)) & 1;
            if bit == 1 {
                idx |= 1 << (n - 1 - qubit_of[label]);
            }
        }
        amps[idx] += a;
    }
    debug_assert!(in_dim <= dim);

    let out = run(&lowered.circuit, &amps, seed)?;
    let mut amps = out.amps;

    // Project released and measured qubits away, checking consistency.
    let mut fixed: Vec<(usize, bool)> = Vec::new();
    for &q in &lowered.layout.freed {
        fixed.push((q, false));
    }
    for &(q, bit) in &lowered.layout.measured {
        fixed.push((q, out.bits[bit]));
    }
    fixed.sort();
    fixed.dedup();
    let mut width = n;
    for (k, &(q, value)) in fixed.iter().enumerate() {
        // Earlier projections shift later qubit positions down.
        let pos = q - fixed[..k].iter().filter(|&&(p, _)| p < q).count();
        amps = project(&amps, width, pos, value, tolerance)?;
        width -= 1;
    }

    // Reorder to the output labeling.
    let mut kept: Vec<usize> = (0..n).filter(|&q| !fixed.iter().any(|&(f, _)| f == q)).collect();
    let pos_of = |q: usize, kept: &[usize]| kept.iter().position(|&k| k == q).expect("kept qubit");
    let mut labels = Vec::new();
    let mut perm = Vec::new();
    for (label, q) in &lowered.layout.output {
        labels.push(label.clone());
        perm.push(pos_of(*q, &kept));
    }
    if perm.len() != kept.len() {
        kept.retain(|q| lowered.layout.output.iter().any(|(_, oq)| oq == q));
        return Err(IrError::new(format!(
            "{} live qubits are not covered by the output labeling",
            width - perm.len()
        )));
    }
    let state = permute_amps(&amps, &perm, &labels);

    let classical = lowered
        .layout
        .bits
        .iter()
        .enumerate()
        .map(|(bit, name)| (Var::c(name.clone()), CVal::Bool(out.bits[bit])))
        .collect();
    Ok(EntryOutputs { classical, state })
}

/// Projects qubit `pos` (of `width`) onto `value`, erroring if the
/// discarded half holds more than `tolerance` amplitude.
fn project(
    amps: &[Complex64],
    width: usize,
    pos: usize,
    value: bool,
    tolerance: f64,
) -> Result<Vec<Complex64>, IrError> {
    let mask = 1usize << (width - 1 - pos);
    let mut out = Vec::with_capacity(amps.len() / 2);
    let mut lost = 0.0f64;
    for (i, a) in amps.iter().enumerate() {
        if (i & mask != 0) == value {
            out.push(*a);
        } else {
            lost += a.norm_sqr();
        }
    }
    if libm::sqrt(lost) > tolerance {
        return Err(IrError::new(format!(
            "released qubit holds amplitude {:e}; the circuit leaks",
            libm::sqrt(lost)
        )));
    }
    Ok(out)
}

/// Rebuilds a labeled state with qubit `perm[k]` of the flat order at
/// labeled position `k`.
fn permute_amps(amps: &[Complex64], perm: &[usize], labels: &[String]) -> StateVector {
    let w = perm.len();
    let mut out = vec![Complex64::new(0.0, 0.0); amps.len()];
    for (i, a) in amps.iter().enumerate() {
        let mut j = 0usize;
        for (k, &src) in perm.iter().enumerate() {
            let bit = (i >> (w - 1 - src)) & 1;
            if bit == 1 {
                j |= 1 << (w - 1 - k);
            }
        }
        out[j] = *a;
    }
    StateVector { labels: labels.to_vec(), amps: out }
}
