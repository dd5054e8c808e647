//! Uncomputation synthesis: replaces `forget` with explicit inverses.
//!
//! A single backward pass over each function. On reaching `forget(x)` the
//! pass undoes x's producer by inserting its inverse right after the forget
//! site, recursively making the producer's own inputs available first. Two
//! lifetime repairs keep the rewrite well-scoped:
//!
//! * values the inverse re-materializes are retired with `undup` against
//!   the original, whose lifetime is extended by rerouting its original
//!   consumer through a fresh `dup`;
//! * sibling outputs of an undone statement that are still needed later are
//!   duplicated before the inverse consumes them.
//!
//! Inserted statements copy the condition of the statement they mirror,
//! plus the branch literal when they touch a positional operand of a
//! `select` or `distribute`. Compute statements and their inverses are
//! linked with pair tags so garbage connection need not rediscover them.
//!
//! [`cancel_dup_pairs`] removes the redundant copies this leaves behind:
//! exact dup/undup pairs over the same source, and dup-chain remnants whose
//! garbage-mode undup is immediately disposed.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ir::{
    normalize_condition, Atom, Effect, FunctionDef, IrError, Literal, Mode, OpTarget, Operation,
    PairRole, Program, Statement, StmtId, Var, VarKind,
};

/// Bookkeeping carried through one function's synthesis pass.
#[derive(Clone, Debug, Default)]
pub struct SynthState {
    /// Variables in scope immediately after the cursor statement, in the
    /// original program.
    pub alive: BTreeSet<Var>,
    /// Statements whose inverse has already been inserted.
    pub undone: BTreeSet<StmtId>,
    /// Producer outputs that were dead at their undo anchor; their original
    /// consumer must be rerouted through a dup when the walk reaches it.
    pub extended: BTreeSet<Var>,
    /// (compute statement, inserted inverse statement) links.
    pub pair_tags: Vec<(StmtId, StmtId)>,
}

struct Synth {
    f: FunctionDef,
    st: SynthState,
    /// Producer statement of each variable in the original body.
    producers: BTreeMap<Var, StmtId>,
    used: BTreeSet<String>,
    #[cfg(debug_assertions)]
    orig_returned: Vec<Var>,
}

fn branch_literal(s: &Statement, k: usize) -> Option<Literal> {
    if k >= 2 {
        return None;
    }
    let ctrl = s.conserved.first()?.as_var()?;
    Some(Literal { var: ctrl.clone(), negated: k == 0 })
}

/// Literal a positional input of a `select` carries.
pub(crate) fn select_literal(s: &Statement, k: usize) -> Option<Literal> {
    if s.op.is_select() {
        branch_literal(s, k)
    } else {
        None
    }
}

/// Literal a positional output of a `distribute` carries.
fn distribute_literal(s: &Statement, k: usize) -> Option<Literal> {
    if s.op.is_distribute() {
        branch_literal(s, k)
    } else {
        None
    }
}

pub(crate) fn is_forget(s: &Statement) -> bool {
    matches!(s.op.target, OpTarget::Forget) && s.op.mode.is_plain()
}

impl Synth {
    fn pos(&self, id: StmtId) -> usize {
        self.f.position_of(id).expect("statement id present in body")
    }

    fn insert_after(&mut self, anchor: StmtId, s: Statement) {
        let at = self.pos(anchor) + 1;
        self.f.body.insert(at, s);
    }

    fn insert_before(&mut self, anchor: StmtId, s: Statement) {
        let at = self.pos(anchor);
        self.f.body.insert(at, s);
    }

    fn fresh_ticked(&mut self, base: &Var) -> Var {
        let name = self.f.fresh_ticked(&base.name, &mut self.used);
        Var { kind: base.kind, name }
    }

    fn dup_statement(
        &mut self,
        produced: Var,
        source: Var,
        mut condition: Vec<Literal>,
        extra: Option<Literal>,
    ) -> Statement {
        if let Some(l) = extra {
            condition.push(l);
        }
        normalize_condition(&mut condition);
        Statement {
            id: self.f.fresh_stmt_id(),
            produced_classical: Vec::new(),
            produced: alloc::vec![produced],
            effect: Effect::Pure,
            op: Operation::plain(OpTarget::Dup),
            conserved: alloc::vec![Atom::Var(source)],
            consumed: Vec::new(),
            condition,
            pair: None,
        }
    }

    fn undup_statement(
        &mut self,
        original: Var,
        copy: Var,
        mut condition: Vec<Literal>,
        extra: Option<Literal>,
    ) -> Statement {
        if let Some(l) = extra {
            condition.push(l);
        }
        normalize_condition(&mut condition);
        Statement {
            id: self.f.fresh_stmt_id(),
            produced_classical: Vec::new(),
            produced: Vec::new(),
            effect: Effect::Pure,
            op: Operation::with_mode(OpTarget::Dup, Mode { inner_adjoint: true, ..Mode::PLAIN }),
            conserved: alloc::vec![Atom::Var(original)],
            consumed: alloc::vec![copy],
            condition,
            pair: None,
        }
    }

    /// Make sure `x` stays reachable at the anchor and is retired by the
    /// inverse of its producer.
    fn ensure_uncomputed(&mut self, anchor: StmtId, x: &Var) -> Result<(), IrError> {
        let is_param = self
            .f
            .conserved_params
            .iter()
            .chain(&self.f.consumed_params)
            .any(|p| &p.var == x);
        if is_param {
            return Err(IrError::new(format!(
                "internal: cannot uncompute parameter {x} of {}; input was not well-forgotten",
                self.f.name
            )));
        }
        let Some(&c_id) = self.producers.get(x) else {
            return Err(IrError::new(format!(
                "internal: no producer for {x} in {}",
                self.f.name
            )));
        };
        let c_pos = self.pos(c_id);
        if self.f.body[c_pos].effect != Effect::Pure {
            return Err(IrError::new(format!(
                "internal: producer of {x} in {} has a quantum effect; input was not well-forgotten",
                self.f.name
            )));
        }
        if self.st.undone.contains(&c_id) {
            return Ok(());
        }
        self.st.undone.insert(c_id);
        self.undo_statement(anchor, c_id)
    }

    /// Insert the inverse of statement `C` directly after the anchor.
    fn undo_statement(&mut self, anchor: StmtId, c_id: StmtId) -> Result<(), IrError> {
        let c = self.f.body[self.pos(c_id)].clone();
        // All inputs of C must be alive or uncomputed after the anchor.
        let mut needed: Vec<Var> = Vec::new();
        for a in &c.conserved {
            if let Atom::Var(v) = a {
                if v.kind == VarKind::Quantum && !self.st.alive.contains(v) {
                    needed.push(v.clone());
                }
            }
        }
        needed.extend(c.consumed.iter().cloned());
        for v in needed {
            self.ensure_uncomputed(anchor, &v)?;
        }

        // The inverse consumes C's outputs and re-materializes its inputs
        // under fresh names.
        let remade: Vec<Var> = c.consumed.iter().map(|x| self.fresh_ticked(x)).collect();
        let classical_out: Vec<Var> =
            c.produced_classical.iter().map(|v| self.fresh_ticked(v)).collect();
        let tag = self.f.fresh_pair_tag();
        let u = Statement {
            id: self.f.fresh_stmt_id(),
            produced_classical: classical_out,
            produced: remade.clone(),
            effect: Effect::Pure,
            op: c.op.adjointed(),
            conserved: c.conserved.clone(),
            consumed: c.produced.clone(),
            condition: c.condition.clone(),
            pair: Some((tag, PairRole::Uncompute)),
        };
        let u_id = u.id;
        {
            let cp = self.pos(c_id);
            self.f.body[cp].pair = Some((tag, PairRole::Compute));
        }
        self.insert_after(anchor, u);
        self.st.pair_tags.push((c_id, u_id));

        // Retire each re-materialized value against the original, whose
        // lifetime the extended set will stretch this far.
        for (k, (x, x_new)) in c.consumed.iter().zip(&remade).enumerate() {
            let extra = select_literal(&c, k);
            let undup =
                self.undup_statement(x.clone(), x_new.clone(), c.condition.clone(), extra);
            self.insert_after(u_id, undup);
        }

        // Outputs of C still needed later are duplicated before the inverse
        // consumes them; everything after the inverse uses the duplicate.
        for (k, y) in c.produced.iter().enumerate() {
            if !self.st.alive.contains(y) {
                continue;
            }
            let y_new = self.fresh_ticked(y);
            let extra = distribute_literal(&c, k);
            let dup = self.dup_statement(y_new.clone(), y.clone(), c.condition.clone(), extra);
            self.insert_before(u_id, dup);
            let from = self.pos(u_id) + 1;
            for s in &mut self.f.body[from..] {
                s.subst_read(y, &y_new);
            }
            for r in &mut self.f.returned {
                if r == y {
                    *r = y_new.clone();
                }
            }
        }

        for y in &c.produced {
            if !self.st.alive.contains(y) {
                self.st.extended.insert(y.clone());
            }
        }
        Ok(())
    }

    /// Independent recomputation of the alive set from the original suffix:
    /// conserved params and returns, plus suffix consumptions (forgets
    /// aside), minus suffix productions. Order-free because SSA keeps each
    /// statement's produced and consumed sets disjoint.
    #[cfg(debug_assertions)]
    fn check_alive_invariant(&self, original: &[Statement], cursor: usize) {
        let mut expect: BTreeSet<Var> = self
            .f
            .conserved_params
            .iter()
            .map(|p| p.var.clone())
            .filter(|v| v.kind != VarKind::Classical)
            .collect();
        for r in &self.orig_returned {
            if r.kind != VarKind::Classical {
                expect.insert(r.clone());
            }
        }
        for s in &original[cursor + 1..] {
            if !is_forget(s) {
                for v in &s.consumed {
                    expect.insert(v.clone());
                }
            }
        }
        for s in &original[cursor + 1..] {
            for v in &s.produced {
                expect.remove(v);
            }
        }
        debug_assert_eq!(self.st.alive, expect, "alive-set invariant at cursor {cursor}");
    }
}

/// Replaces every `forget` in `f` with explicit uncomputation, returning the
/// rewritten function and the final pass state.
pub fn synthesize_with_state(
    f: &FunctionDef,
    _program: &Program,
) -> Result<(FunctionDef, SynthState), IrError> {
    let mut producers = BTreeMap::new();
    for s in &f.body {
        for v in s.written_vars() {
            producers.insert(v, s.id);
        }
    }
    let mut alive: BTreeSet<Var> = f
        .conserved_params
        .iter()
        .map(|p| p.var.clone())
        .filter(|v| v.kind != VarKind::Classical)
        .collect();
    for v in &f.returned {
        if v.kind != VarKind::Classical {
            alive.insert(v.clone());
        }
    }
    let used = f.used_names();
    let mut engine = Synth {
        f: f.clone(),
        st: SynthState { alive, ..SynthState::default() },
        producers,
        used,
        #[cfg(debug_assertions)]
        orig_returned: f.returned.clone(),
    };
    let original: Vec<Statement> = f.body.clone();
    for (cursor, s) in original.iter().enumerate().rev() {
        #[cfg(debug_assertions)]
        engine.check_alive_invariant(&original, cursor);
        if is_forget(s) {
            let x = s.consumed[0].clone();
            engine.ensure_uncomputed(s.id, &x)?;
            let at = engine.pos(s.id);
            engine.f.body.remove(at);
            continue;
        }
        // Reroute consumers of extended-lifetime variables through a dup.
        let consumed_original = s.consumed.clone();
        for (k, x) in consumed_original.iter().enumerate() {
            if !engine.st.extended.contains(x) {
                continue;
            }
            let x_new = engine.fresh_ticked(x);
            let extra = select_literal(s, k);
            let dup = engine.dup_statement(x_new.clone(), x.clone(), s.condition.clone(), extra);
            engine.insert_before(s.id, dup);
            let sp = engine.pos(s.id);
            for slot in &mut engine.f.body[sp].consumed {
                if slot == x {
                    *slot = x_new.clone();
                }
            }
        }
        for v in &s.produced {
            engine.st.alive.remove(v);
        }
        for v in consumed_original {
            engine.st.alive.insert(v);
        }
    }
    Ok((engine.f, engine.st))
}

/// Replaces every `forget` in `f` with explicit uncomputation.
pub fn synthesize_uncomputation(f: &FunctionDef, program: &Program) -> Result<FunctionDef, IrError> {
    synthesize_with_state(f, program).map(|(f, _)| f)
}

/// Runs uncomputation synthesis over every function in the program, in
/// place. Function names and signatures are unchanged.
pub fn synthesize_program(program: &mut Program) -> Result<(), IrError> {
    let names: Vec<_> = program.names();
    for name in names {
        let f = program.get(&name).expect("listed function exists").clone();
        let rewritten = synthesize_uncomputation(&f, program)?;
        program.replace_function(rewritten)?;
    }
    Ok(())
}

fn is_plain_dup(s: &Statement) -> bool {
    matches!(s.op.target, OpTarget::Dup)
        && s.op.mode.is_plain()
        && s.produced.len() == 1
        && s.conserved.len() == 1
        && s.consumed.is_empty()
}

fn is_plain_undup(s: &Statement) -> bool {
    matches!(s.op.target, OpTarget::Dup)
        && s.op.mode == Mode { inner_adjoint: true, ..Mode::PLAIN }
        && s.produced.is_empty()
        && s.conserved.len() == 1
        && s.consumed.len() == 1
}

fn is_garbage_undup(s: &Statement) -> bool {
    matches!(s.op.target, OpTarget::Dup)
        && s.op.mode.inner_adjoint
        && s.op.mode.garbage
        && !s.op.mode.outer_adjoint
        && s.produced.len() == 1
        && s.produced[0].kind == VarKind::Garbage
        && s.conserved.len() == 1
        && s.consumed.len() == 1
}

fn conserved_var(s: &Statement) -> Option<&Var> {
    s.conserved.first().and_then(|a| a.as_var())
}

/// Follows dup producers back to the earliest source a value is copied from.
fn dup_chain_source(f: &FunctionDef, v: &Var) -> Var {
    let mut cur = v.clone();
    loop {
        let producer = f.body.iter().find(|s| s.produced.contains(&cur));
        match producer {
            Some(s)
                if matches!(s.op.target, OpTarget::Dup)
                    && !s.op.mode.inner_adjoint
                    && s.produced.first() == Some(&cur) =>
            {
                match conserved_var(s) {
                    Some(src) => cur = src.clone(),
                    None => return cur,
                }
            }
            _ => return cur,
        }
    }
}

fn var_read_by(s: &Statement, v: &Var) -> bool {
    s.read_vars().contains(v)
}

fn cancel_once(f: &mut FunctionDef) -> bool {
    // Exact pair: v := dup[s] ... undup[s](v), equal conditions; v's uses in
    // between are reads only (SSA grants this), and s must stay in scope.
    for i in 0..f.body.len() {
        if !is_plain_dup(&f.body[i]) {
            continue;
        }
        let v = f.body[i].produced[0].clone();
        let s_var = conserved_var(&f.body[i]).cloned();
        let Some(s_var) = s_var else { continue };
        let cond = f.body[i].condition.clone();
        for j in i + 1..f.body.len() {
            let b = &f.body[j];
            if !is_plain_undup(b) || b.consumed[0] != v {
                continue;
            }
            if conserved_var(b) != Some(&s_var) || b.condition != cond {
                break;
            }
            if f.body[i + 1..j].iter().any(|m| m.consumed.contains(&s_var)) {
                break;
            }
            f.body.remove(j);
            f.body.remove(i);
            for s in &mut f.body {
                s.subst_read(&v, &s_var);
            }
            return true;
        }
    }
    // Dup-chain remnant: v := dup[s1] ... g := undup^G[s2](v); dispose(g),
    // where s1 and s2 copy the same source and v is otherwise unused.
    for i in 0..f.body.len() {
        if !is_plain_dup(&f.body[i]) {
            continue;
        }
        let v = f.body[i].produced[0].clone();
        let Some(s1) = conserved_var(&f.body[i]).cloned() else { continue };
        for j in i + 1..f.body.len() {
            let b = &f.body[j];
            if !is_garbage_undup(b) || b.consumed[0] != v {
                continue;
            }
            let Some(s2) = conserved_var(b).cloned() else { break };
            if dup_chain_source(f, &s1) != dup_chain_source(f, &s2) {
                break;
            }
            if b.condition != f.body[i].condition {
                break;
            }
            if f.body[i + 1..j].iter().any(|m| var_read_by(m, &v)) {
                break;
            }
            let g = b.produced[0].clone();
            let Some(k) = f.body.iter().position(|d| {
                matches!(d.op.target, OpTarget::Dispose)
                    && d.op.mode.is_plain()
                    && d.consumed.first() == Some(&g)
            }) else {
                break;
            };
            let mut dead = alloc::vec![i, j, k];
            dead.sort_unstable();
            dead.reverse();
            for d in dead {
                f.body.remove(d);
            }
            return true;
        }
    }
    false
}

/// Removes redundant dup/undup pairs until a fixpoint.
pub fn cancel_dup_pairs(f: &FunctionDef) -> FunctionDef {
    let mut w = f.clone();
    while cancel_once(&mut w) {}
    w
}

/// Cancels dup pairs in every function, in place.
pub fn cancel_program(program: &mut Program) {
    let names: Vec<_> = program.names();
    for name in names {
        let f = program.get(&name).expect("listed function exists");
        let simplified = cancel_dup_pairs(f);
        program
            .replace_function(simplified)
            .expect("same name and signature");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{make_statement, FuncName, Param};

    use crate::testfix::{maj_program, names_of};

    #[test]
    fn maj_synthesis_matches_the_worked_shape() {
        let p = maj_program();
        let f = p.get(&FuncName::plain("maj")).unwrap();
        let (u, st) = synthesize_with_state(f, &p).unwrap();
        assert_eq!(u.body.len(), 9);
        assert_eq!(
            names_of(&u),
            ["dup", "dup", "CX", "dup", "dup", "select", "CX^adj", "undup", "undup"]
        );
        // t := dup[a]; t'' := dup[t]; x := CX[b](t'')
        assert_eq!(u.body[0].produced, alloc::vec![Var::q("t")]);
        assert_eq!(u.body[1].produced, alloc::vec![Var::q("t''")]);
        assert_eq!(u.body[2].consumed, alloc::vec![Var::q("t''")]);
        // t' := CX^adj[b](x); undup[t](t'); undup[a](t)
        assert_eq!(u.body[6].produced, alloc::vec![Var::q("t'")]);
        assert_eq!(u.body[6].consumed, alloc::vec![Var::q("x")]);
        assert_eq!(u.body[7].conserved, alloc::vec![Atom::Var(Var::q("t"))]);
        assert_eq!(u.body[7].consumed, alloc::vec![Var::q("t'")]);
        assert_eq!(u.body[8].conserved, alloc::vec![Atom::Var(Var::q("a"))]);
        assert_eq!(u.body[8].consumed, alloc::vec![Var::q("t")]);
        // Pair links: CX with its inverse, dup with its undup.
        assert_eq!(st.pair_tags.len(), 2);
        assert!(u.body.iter().all(|s| !matches!(s.op.target, OpTarget::Forget)));
        assert!(crate::ir::structural_check(&u, &p).is_ok());
    }

    #[test]
    fn maj_simplifies_to_seven_statements() {
        let p = maj_program();
        let f = p.get(&FuncName::plain("maj")).unwrap();
        let u = synthesize_uncomputation(f, &p).unwrap();
        let s = cancel_dup_pairs(&u);
        assert_eq!(s.body.len(), 7);
        assert_eq!(
            names_of(&s),
            ["dup", "CX", "dup", "dup", "select", "CX^adj", "undup"]
        );
        // The t chain collapsed onto a.
        assert_eq!(s.body[0].produced, alloc::vec![Var::q("t''")]);
        assert_eq!(s.body[0].conserved, alloc::vec![Atom::Var(Var::q("a"))]);
        assert_eq!(s.body[6].conserved, alloc::vec![Atom::Var(Var::q("a"))]);
        assert_eq!(s.body[6].consumed, alloc::vec![Var::q("t'")]);
        assert!(crate::ir::structural_check(&s, &p).is_ok());
    }

    #[test]
    fn function_without_forget_is_unchanged() {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("epr"));
        f.consumed_params.push(Param::quantum("a"));
        f.consumed_params.push(Param::quantum("b"));
        let s0 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("a'")],
            Effect::Quantum,
            Operation::plain(OpTarget::H),
            alloc::vec![],
            alloc::vec![Var::q("a")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s1 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("b'")],
            Effect::Pure,
            Operation::plain(OpTarget::CX),
            alloc::vec![Atom::Var(Var::q("a'"))],
            alloc::vec![Var::q("b")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s0, s1];
        f.returned = alloc::vec![Var::q("a'"), Var::q("b'")];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("epr")).unwrap();
        let u = synthesize_uncomputation(f, &p).unwrap();
        assert_eq!(u.body.len(), f.body.len());
        assert_eq!(names_of(&u), names_of(f));
    }

    #[test]
    fn shared_producer_is_undone_once() {
        // u, v := h[a]; forget(u); forget(v)  -- one inverse call expected.
        let mut p = Program::new();
        let mut h = FunctionDef::new(FuncName::plain("h2"));
        h.conserved_params.push(Param::quantum("a"));
        let h0 = make_statement(
            h.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("u")],
            Effect::Pure,
            Operation::plain(OpTarget::Dup),
            alloc::vec![Atom::Var(Var::q("a"))],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let h1 = make_statement(
            h.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("v")],
            Effect::Pure,
            Operation::plain(OpTarget::Dup),
            alloc::vec![Atom::Var(Var::q("a"))],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        h.body = alloc::vec![h0, h1];
        h.returned = alloc::vec![Var::q("u"), Var::q("v")];
        p.add_function(h).unwrap();

        let mut f = FunctionDef::new(FuncName::plain("w"));
        f.conserved_params.push(Param::quantum("a"));
        let s0 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("u"), Var::q("v")],
            Effect::Pure,
            Operation::call("h2", Mode::PLAIN),
            alloc::vec![Atom::Var(Var::q("a"))],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s1 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![],
            Effect::Pure,
            Operation::plain(OpTarget::Forget),
            alloc::vec![],
            alloc::vec![Var::q("u")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s2 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![],
            Effect::Pure,
            Operation::plain(OpTarget::Forget),
            alloc::vec![],
            alloc::vec![Var::q("v")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s0, s1, s2];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("w")).unwrap();
        let u = synthesize_uncomputation(f, &p).unwrap();
        let inverses = u
            .body
            .iter()
            .filter(|s| s.op.display_name() == "h2^adj")
            .count();
        assert_eq!(inverses, 1);
        assert_eq!(u.body.len(), 2);
        assert!(crate::ir::structural_check(&u, &p).is_ok());
    }

    #[test]
    fn sibling_output_still_needed_gets_duplicated() {
        // y0, y1 := h[a]; forget(y0); > y1  -- y1 must be dup'ed before the
        // inverse of h consumes it.
        let mut p = Program::new();
        let mut h = FunctionDef::new(FuncName::plain("h2"));
        h.conserved_params.push(Param::quantum("a"));
        let h0 = make_statement(
            h.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("u")],
            Effect::Pure,
            Operation::plain(OpTarget::Dup),
            alloc::vec![Atom::Var(Var::q("a"))],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let h1 = make_statement(
            h.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("v")],
            Effect::Pure,
            Operation::plain(OpTarget::Dup),
            alloc::vec![Atom::Var(Var::q("a"))],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        h.body = alloc::vec![h0, h1];
        h.returned = alloc::vec![Var::q("u"), Var::q("v")];
        p.add_function(h).unwrap();

        let mut f = FunctionDef::new(FuncName::plain("w"));
        f.conserved_params.push(Param::quantum("a"));
        let s0 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("y0"), Var::q("y1")],
            Effect::Pure,
            Operation::call("h2", Mode::PLAIN),
            alloc::vec![Atom::Var(Var::q("a"))],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s1 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![],
            Effect::Pure,
            Operation::plain(OpTarget::Forget),
            alloc::vec![],
            alloc::vec![Var::q("y0")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s0, s1];
        f.returned = alloc::vec![Var::q("y1")];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("w")).unwrap();
        let u = synthesize_uncomputation(f, &p).unwrap();
        assert_eq!(names_of(&u), ["h2", "dup", "h2^adj"]);
        // The duplicate is returned; the original feeds the inverse.
        assert_eq!(u.returned, alloc::vec![Var::q("y1'")]);
        assert_eq!(u.body[2].consumed, alloc::vec![Var::q("y0"), Var::q("y1")]);
        assert!(crate::ir::structural_check(&u, &p).is_ok());
    }

    #[test]
    fn conditional_compute_keeps_its_condition_on_the_inverse() {
        // v := dup[b] if $c; forget(v) if $c  (classical condition).
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("g"));
        f.conserved_params.push(Param::quantum("b"));
        f.conserved_params.push(Param::classical("$c"));
        let cond = alloc::vec![Literal::pos(Var::c("$c"))];
        let s0 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("v")],
            Effect::Pure,
            Operation::plain(OpTarget::Dup),
            alloc::vec![Atom::Var(Var::q("b"))],
            alloc::vec![],
            cond.clone(),
            &p,
        )
        .unwrap();
        let s1 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![],
            Effect::Pure,
            Operation::plain(OpTarget::Forget),
            alloc::vec![],
            alloc::vec![Var::q("v")],
            cond.clone(),
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s0, s1];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("g")).unwrap();
        let u = synthesize_uncomputation(f, &p).unwrap();
        assert_eq!(names_of(&u), ["dup", "undup"]);
        assert_eq!(u.body[1].condition, cond);
    }

    #[test]
    fn dup_cancellation_reaches_a_fixpoint_on_chains() {
        // v := dup[a]; w := dup[v]; undup[v](w); undup[a](v) collapses fully.
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("idish"));
        f.conserved_params.push(Param::quantum("a"));
        let s0 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("v")],
            Effect::Pure,
            Operation::plain(OpTarget::Dup),
            alloc::vec![Atom::Var(Var::q("a"))],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s1 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("w")],
            Effect::Pure,
            Operation::plain(OpTarget::Dup),
            alloc::vec![Atom::Var(Var::q("v"))],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s2 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![],
            Effect::Pure,
            Operation::with_mode(OpTarget::Dup, Mode { inner_adjoint: true, ..Mode::PLAIN }),
            alloc::vec![Atom::Var(Var::q("v"))],
            alloc::vec![Var::q("w")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s3 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![],
            Effect::Pure,
            Operation::with_mode(OpTarget::Dup, Mode { inner_adjoint: true, ..Mode::PLAIN }),
            alloc::vec![Atom::Var(Var::q("a"))],
            alloc::vec![Var::q("v")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s0, s1, s2, s3];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("idish")).unwrap();
        let s = cancel_dup_pairs(f);
        assert!(s.body.is_empty(), "{:?}", names_of(&s));
    }
}
