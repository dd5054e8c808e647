//! Garbage connection and uncomputation erasure.
//!
//! Uncomputation synthesis leaves every compute statement linked to its
//! inverse by a pair tag. [`connect_garbage`] realizes one such link as
//! data flow: the compute half switches to garbage mode and produces a
//! fresh garbage variable that its inverse consumes. Once pairs are
//! connected, [`erase_uncomputation`] removes the uncomputation halves
//! altogether, replacing them with `dispose` and switching every remaining
//! operation to garbage mode. The result is the `^G` variant of the
//! function: same non-garbage outputs, one aggregate bin output, and a
//! body that never rewinds anything.
//!
//! Garbage variables are renumbered in statement order at the end of
//! erasure so the output is stable regardless of which pass introduced
//! each variable.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::ir::{
    BinDir, Effect, FunctionDef, IrError, OpTarget, Operation, PairRole, Statement, StmtId, Var,
    VarKind,
};
use crate::uncomp::{is_forget, select_literal};

fn produces_garbage(s: &Statement) -> bool {
    s.produced.iter().any(|v| v.kind == VarKind::Garbage)
}

fn is_classical_stmt(s: &Statement) -> bool {
    matches!(s.op.target, OpTarget::Classical(_)) || s.op.mode.classical_only
}

fn dispose_statement(f: &mut FunctionDef, operand: Var, condition: Vec<crate::ir::Literal>) -> Statement {
    Statement {
        id: f.fresh_stmt_id(),
        produced_classical: Vec::new(),
        produced: Vec::new(),
        effect: Effect::Pure,
        op: Operation::plain(OpTarget::Dispose),
        conserved: Vec::new(),
        consumed: alloc::vec![operand],
        condition,
        pair: None,
    }
}

/// Turns the compute/uncompute pair `(c_id, u_id)` into a garbage link:
/// the compute half becomes `op^G` producing a fresh garbage variable that
/// the uncompute half, now `op^{G^adj}`, consumes. Returns the variable.
pub fn connect_garbage(
    f: &mut FunctionDef,
    c_id: StmtId,
    u_id: StmtId,
) -> Result<Var, IrError> {
    let cpos = f
        .position_of(c_id)
        .ok_or_else(|| IrError::new(format!("no statement {c_id:?} in {}", f.name)))?;
    let upos = f
        .position_of(u_id)
        .ok_or_else(|| IrError::new(format!("no statement {u_id:?} in {}", f.name)))?;
    let cop = f.body[cpos].op.clone();
    if cop.mode.garbage {
        return Err(IrError::new(format!(
            "{} is already in garbage mode",
            cop.display_name()
        )));
    }
    if f.body[upos].op != cop.adjointed() {
        return Err(IrError::new(format!(
            "cannot connect {} to {}: not an adjoint pair",
            cop.display_name(),
            f.body[upos].op.display_name()
        )));
    }
    let mut used = f.used_names();
    let g = Var { kind: VarKind::Garbage, name: f.fresh_numbered("g", &mut used) };
    f.body[cpos].op = cop.garbaged();
    f.body[upos].op = cop.garbaged().adjointed();
    f.body[cpos].produced.push(g.clone());
    f.body[upos].consumed.push(g.clone());
    Ok(g)
}

/// Connects every tagged compute/uncompute pair left by uncomputation
/// synthesis, in tag order. Pairs whose halves were both cancelled away are
/// gone already; a pair with exactly one surviving half is inconsistent.
pub fn connect_pairs(f: &mut FunctionDef) -> Result<(), IrError> {
    let mut halves: BTreeMap<u64, (Option<StmtId>, Option<StmtId>)> = BTreeMap::new();
    for s in &f.body {
        if let Some((tag, role)) = s.pair {
            let entry = halves.entry(tag.0).or_default();
            match role {
                PairRole::Compute => entry.0 = Some(s.id),
                PairRole::Uncompute => entry.1 = Some(s.id),
            }
        }
    }
    for (tag, pair) in halves {
        match pair {
            (Some(c), Some(u)) => {
                let cpos = f.position_of(c).expect("compute half present");
                if !f.body[cpos].op.mode.garbage {
                    connect_garbage(f, c, u)?;
                }
            }
            (None, None) => {}
            _ => {
                return Err(IrError::new(format!(
                    "pair {tag} in {} lost one half; simplification broke the bracketing",
                    f.name
                )))
            }
        }
    }
    Ok(())
}

/// Switches one statement to garbage mode and immediately disposes the
/// fresh garbage variable (under the statement's own condition). Statements
/// that already produce garbage are left alone.
pub fn propagate_garbage(f: &mut FunctionDef, sid: StmtId) -> Result<(), IrError> {
    let pos = f
        .position_of(sid)
        .ok_or_else(|| IrError::new(format!("no statement {sid:?} in {}", f.name)))?;
    if produces_garbage(&f.body[pos]) {
        return Ok(());
    }
    let s = &f.body[pos];
    if is_classical_stmt(s) || is_forget(s) || matches!(s.op.target, OpTarget::Dispose) {
        return Err(IrError::new(format!(
            "{} has no garbage variant",
            s.op.display_name()
        )));
    }
    let mut used = f.used_names();
    let g = Var { kind: VarKind::Garbage, name: f.fresh_numbered("g", &mut used) };
    let cond = f.body[pos].condition.clone();
    f.body[pos].op = f.body[pos].op.garbaged();
    f.body[pos].produced.push(g.clone());
    let d = dispose_statement(f, g, cond);
    let pos = f.position_of(sid).expect("still present");
    f.body.insert(pos + 1, d);
    Ok(())
}

/// Renames all garbage variables to `%g0, %g1, ...` in order of production
/// so erased functions read the same however their pieces were introduced.
fn renumber_garbage(f: &mut FunctionDef) {
    let mut map: BTreeMap<Var, Var> = BTreeMap::new();
    let mut next = 0usize;
    for s in &f.body {
        for v in &s.produced {
            if v.kind == VarKind::Garbage && !map.contains_key(v) {
                map.insert(
                    v.clone(),
                    Var { kind: VarKind::Garbage, name: format!("g{next}") },
                );
                next += 1;
            }
        }
    }
    let rename = |v: &mut Var| {
        if let Some(n) = map.get(v) {
            *v = n.clone();
        }
    };
    for s in &mut f.body {
        s.produced.iter_mut().for_each(rename);
        s.consumed.iter_mut().for_each(rename);
    }
}

/// Builds `f^G` from a pure, forget-free `f`: every garbage-consuming
/// statement (an uncomputation half) is removed, its non-garbage results
/// re-derived by `dup` from what it would have uncomputed, its operands
/// disposed; every other statement switches to garbage mode with its fresh
/// garbage disposed on the spot. The function gains a single garbage bin
/// output collecting all disposes.
pub fn erase_uncomputation(f: &FunctionDef) -> Result<FunctionDef, IrError> {
    let effect = f.body.iter().map(|s| s.effect).max().unwrap_or(Effect::Pure);
    if effect != Effect::Pure {
        return Err(IrError::new(format!(
            "cannot erase uncomputation of {}: effect {} is not pure",
            f.name,
            effect.letter()
        )));
    }
    if f.body.iter().any(is_forget) {
        return Err(IrError::new(format!(
            "cannot erase uncomputation of {}: forget is still present (synthesize first)",
            f.name
        )));
    }
    if f.name.mode.garbage || f.bin.is_some() {
        return Err(IrError::new(format!(
            "{} is already a garbage-mode function",
            f.name
        )));
    }

    let mut w = f.clone();
    w.name.mode = w.name.mode.garbaged();
    let snapshot: Vec<StmtId> = w.body.iter().map(|s| s.id).collect();
    for sid in snapshot {
        let Some(pos) = w.position_of(sid) else { continue };
        let s = w.body[pos].clone();
        let garbage_outs: Vec<Var> =
            s.produced.iter().filter(|v| v.kind == VarKind::Garbage).cloned().collect();
        if let [g] = garbage_outs.as_slice() {
            let upos = w
                .body
                .iter()
                .position(|t| t.consumed.contains(g))
                .ok_or_else(|| {
                    IrError::new(format!("garbage variable {g} of {} is never consumed", f.name))
                })?;
            let u = w.body[upos].clone();
            if matches!(u.op.target, OpTarget::Dispose) {
                return Err(IrError::new(format!(
                    "garbage variable {g} of {} is already disposed; nothing to erase",
                    f.name
                )));
            }
            if u.produced.len() != s.consumed.len() {
                return Err(IrError::new(format!(
                    "pair around {g} in {} is unbalanced: {} results vs {} operands",
                    f.name,
                    u.produced.len(),
                    s.consumed.len()
                )));
            }
            // Re-derive what the removed uncomputation would have produced.
            for (k, (copy, source)) in u.produced.iter().zip(&s.consumed).enumerate() {
                let mut cond = s.condition.clone();
                if let Some(l) = select_literal(&s, k) {
                    cond.push(l);
                }
                crate::ir::normalize_condition(&mut cond);
                let dup = Statement {
                    id: w.fresh_stmt_id(),
                    produced_classical: Vec::new(),
                    produced: alloc::vec![copy.clone()],
                    effect: Effect::Pure,
                    op: Operation::plain(OpTarget::Dup),
                    conserved: alloc::vec![crate::ir::Atom::Var(source.clone())],
                    consumed: Vec::new(),
                    condition: cond,
                    pair: None,
                };
                let at = w.position_of(sid).expect("present");
                w.body.insert(at, dup);
            }
            for (k, x) in u.consumed.iter().enumerate() {
                if x.kind == VarKind::Garbage {
                    continue;
                }
                let mut cond = u.condition.clone();
                if let Some(l) = select_literal(&u, k) {
                    cond.push(l);
                }
                crate::ir::normalize_condition(&mut cond);
                let d = dispose_statement(&mut w, x.clone(), cond);
                let at = w.position_of(u.id).expect("present");
                w.body.insert(at, d);
            }
            let upos = w.position_of(u.id).expect("present");
            w.body.remove(upos);
            let d = dispose_statement(&mut w, g.clone(), s.condition.clone());
            let at = w.position_of(sid).expect("present");
            w.body.insert(at + 1, d);
        } else if !garbage_outs.is_empty() {
            return Err(IrError::new(format!(
                "statement in {} produces {} garbage variables; expected at most one",
                f.name,
                garbage_outs.len()
            )));
        } else if !matches!(s.op.target, OpTarget::Dispose) && !is_classical_stmt(&s) {
            propagate_garbage(&mut w, sid)?;
        }
    }
    for s in &mut w.body {
        s.pair = None;
    }
    let mut used = w.used_names();
    let bin_name =
        if used.contains("bin") { w.fresh_ticked("bin", &mut used) } else { "bin".into() };
    let bin = Var { kind: VarKind::Garbage, name: bin_name };
    w.returned.push(bin.clone());
    w.bin = Some((bin, BinDir::Out));
    renumber_garbage(&mut w);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Atom, FuncName, Literal, Mode};
    use crate::testfix::{maj_program, names_of};
    use crate::uncomp::{cancel_dup_pairs, synthesize_uncomputation};

    fn simplified_connected_maj() -> (FunctionDef, crate::ir::Program) {
        let p = maj_program();
        let f = p.get(&FuncName::plain("maj")).unwrap();
        let u = synthesize_uncomputation(f, &p).unwrap();
        let mut s = cancel_dup_pairs(&u);
        connect_pairs(&mut s).unwrap();
        (s, p)
    }

    #[test]
    fn connecting_the_surviving_pair_links_cx_through_garbage() {
        let (s, _p) = simplified_connected_maj();
        let names = names_of(&s);
        assert_eq!(
            names,
            ["dup", "CX^G", "dup", "dup", "select", "CX^G^adj", "undup"]
        );
        let g = Var { kind: VarKind::Garbage, name: "g0".into() };
        assert_eq!(s.body[1].produced, alloc::vec![Var::q("x"), g.clone()]);
        assert!(s.body[5].consumed.contains(&g));
    }

    #[test]
    fn connecting_twice_is_an_error() {
        let p = maj_program();
        let f = p.get(&FuncName::plain("maj")).unwrap();
        let u = synthesize_uncomputation(f, &p).unwrap();
        let mut s = cancel_dup_pairs(&u);
        let (c, w) = (s.body[1].id, s.body[5].id);
        connect_garbage(&mut s, c, w).unwrap();
        assert!(connect_garbage(&mut s, c, w).is_err());
    }

    #[test]
    fn erase_produces_the_fourteen_statement_garbage_form() {
        let (s, _p) = simplified_connected_maj();
        let e = erase_uncomputation(&s).unwrap();
        assert_eq!(e.name, FuncName::with_mode("maj", Mode { garbage: true, ..Mode::PLAIN }));
        let names = names_of(&e);
        assert_eq!(
            names,
            [
                "dup^G", "dispose", "dup", "CX^G", "dispose", "dup^G", "dispose", "dup^G",
                "dispose", "select^G", "dispose", "dispose", "undup^G", "dispose"
            ]
        );
        let g = |n: &str| Var { kind: VarKind::Garbage, name: n.into() };
        // t'', %g0 := dup^G[a]; dispose(%g0); t' := dup[t'']
        assert_eq!(e.body[0].produced, alloc::vec![Var::q("t''"), g("g0")]);
        assert_eq!(e.body[1].consumed, alloc::vec![g("g0")]);
        assert_eq!(e.body[2].produced, alloc::vec![Var::q("t'")]);
        assert_eq!(e.body[2].conserved, alloc::vec![Atom::Var(Var::q("t''"))]);
        // x, %g1 := CX^G[b](t''); dispose(%g1)
        assert_eq!(e.body[3].produced, alloc::vec![Var::q("x"), g("g1")]);
        assert_eq!(e.body[4].consumed, alloc::vec![g("g1")]);
        // conditional dup branches keep their conditions on the disposes
        assert_eq!(e.body[5].condition, alloc::vec![Literal::neg(Var::q("x"))]);
        assert_eq!(e.body[6].condition, alloc::vec![Literal::neg(Var::q("x"))]);
        assert_eq!(e.body[7].condition, alloc::vec![Literal::pos(Var::q("x"))]);
        assert_eq!(e.body[8].condition, alloc::vec![Literal::pos(Var::q("x"))]);
        // r, %g4 := select^G[x](r0, r1); dispose(%g4); dispose(x)
        assert_eq!(e.body[9].produced, alloc::vec![Var::q("r"), g("g4")]);
        assert_eq!(e.body[10].consumed, alloc::vec![g("g4")]);
        assert_eq!(e.body[11].consumed, alloc::vec![Var::q("x")]);
        // %g5 := undup^G[a](t'); dispose(%g5)
        assert_eq!(e.body[12].produced, alloc::vec![g("g5")]);
        assert_eq!(e.body[12].consumed, alloc::vec![Var::q("t'")]);
        assert_eq!(e.body[13].consumed, alloc::vec![g("g5")]);
        // Signature: returns r plus the bin.
        assert_eq!(e.returned.first(), Some(&Var::q("r")));
        assert_eq!(e.bin.as_ref().map(|(v, d)| (v.clone(), *d)), Some((g("bin"), BinDir::Out)));
        assert_eq!(e.returned.last(), Some(&g("bin")));
    }

    #[test]
    fn erased_form_simplifies_to_eleven_statements() {
        let (s, _p) = simplified_connected_maj();
        let e = erase_uncomputation(&s).unwrap();
        let c = cancel_dup_pairs(&e);
        assert_eq!(c.body.len(), 11);
        assert_eq!(
            names_of(&c),
            [
                "dup^G", "dispose", "CX^G", "dispose", "dup^G", "dispose", "dup^G", "dispose",
                "select^G", "dispose", "dispose"
            ]
        );
        // The t' dup, its undup and that undup's dispose are gone; x is
        // still disposed at the end.
        assert_eq!(c.body[10].consumed, alloc::vec![Var::q("x")]);
        assert!(!c.body.iter().any(|s| s.op.is_dup() && s.produced.contains(&Var::q("t'"))));
    }

    #[test]
    fn erase_rejects_functions_that_still_forget() {
        let p = maj_program();
        let f = p.get(&FuncName::plain("maj")).unwrap();
        assert!(erase_uncomputation(f).is_err());
    }

    #[test]
    fn propagation_leaves_garbage_producers_alone() {
        let (mut s, _p) = simplified_connected_maj();
        let before = s.body[1].clone();
        propagate_garbage(&mut s, before.id).unwrap();
        assert_eq!(s.body[1], before);
    }
}
