//! Standard cleanup passes: constant propagation, classical common
//! subexpression elimination and dead code elimination.
//!
//! Quantum statements are left alone by CSE: every quantum result is
//! consumed exactly once, so merging two `dup[a]` statements would break
//! consumption balance. The only quantum rewrites performed here are the
//! ones that preserve balance by construction: resolving `select` and
//! `distribute` over statically known classical controls, and removing
//! dup/undup and new/unnew pairs that cancel out.
//!
//! [`simplify`] runs the three passes to a fixpoint (bounded, with a
//! diagnostic if the bound is hit, which would indicate a pass that keeps
//! oscillating).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ir::{
    Atom, CExpr, CVal, FuncName, FunctionDef, IrError, Literal, Mode, OpTarget, Program,
    Statement, Var, VarKind,
};
use crate::uncomp::cancel_dup_pairs;

fn is_classical_stmt(s: &Statement) -> bool {
    matches!(s.op.target, OpTarget::Classical(_)) || s.op.mode.classical_only
}

fn apply_renames(s: &mut Statement, renames: &[(Var, Var)]) {
    for (from, to) in renames {
        s.subst_read(from, to);
    }
}

fn rename_returned(returned: &mut [Var], renames: &[(Var, Var)]) {
    for (from, to) in renames {
        for r in returned.iter_mut() {
            if r == from {
                *r = to.clone();
            }
        }
    }
}

/// Resolves a classical atom to a boolean, when its value is known.
fn known_bool(atom: &Atom, known: &BTreeMap<String, CVal>) -> Option<bool> {
    match atom {
        Atom::Var(v) if v.kind == VarKind::Classical => {
            known.get(&v.name).and_then(|c| c.as_bool().ok())
        }
        _ => None,
    }
}

/// Folds classical expressions with known operands, resolves statement
/// conditions over known classical literals (dropping satisfied literals,
/// deleting statically false statements), and short-circuits `select` and
/// `distribute` over known classical controls by renaming their results.
pub fn constant_propagate(f: &FunctionDef) -> FunctionDef {
    let mut out = f.clone();
    let mut known: BTreeMap<String, CVal> = BTreeMap::new();
    let mut env: BTreeMap<String, CExpr> = BTreeMap::new();
    let mut renames: Vec<(Var, Var)> = Vec::new();
    let mut body: Vec<Statement> = Vec::new();
    'stmts: for s in &out.body {
        let mut s = s.clone();
        apply_renames(&mut s, &renames);
        if let OpTarget::Classical(e) = &s.op.target {
            let e2 = e.subst(&env);
            let e2 = match e2.eval(&BTreeMap::new()) {
                Ok(v) => {
                    let name = s.produced_classical[0].name.clone();
                    known.insert(name.clone(), v);
                    env.insert(name, CExpr::from_val(v));
                    CExpr::from_val(v)
                }
                Err(_) => e2,
            };
            s.op.target = OpTarget::Classical(e2);
        }
        let mut statically_false = false;
        s.condition.retain(|l| {
            if l.var.kind == VarKind::Classical {
                if let Some(b) = known.get(&l.var.name).and_then(|c| c.as_bool().ok()) {
                    if b != l.negated {
                        return false;
                    }
                    statically_false = true;
                }
            }
            true
        });
        if statically_false {
            continue 'stmts;
        }
        let m = s.op.mode;
        if !m.garbage && !m.outer_adjoint && !m.classical_only && s.condition.is_empty() {
            // `is_select` and `is_distribute` split on the inner adjoint bit.
            if s.op.is_select() {
                if let Some(b) = known_bool(&s.conserved[0], &known) {
                    let picked = s.consumed[usize::from(b)].clone();
                    renames.push((s.produced[0].clone(), picked));
                    continue 'stmts;
                }
            }
            if s.op.is_distribute() {
                if let Some(b) = known_bool(&s.conserved[0], &known) {
                    let source = s.consumed[0].clone();
                    renames.push((s.produced[usize::from(b)].clone(), source));
                    continue 'stmts;
                }
            }
        }
        body.push(s);
    }
    rename_returned(&mut out.returned, &renames);
    out.body = body;
    out
}

/// Merges classical statements that compute the same thing under the same
/// condition: expression statements with equal expressions, and
/// classical-part calls with equal callee and arguments. Quantum statements
/// are never merged.
pub fn common_subexpr_eliminate(f: &FunctionDef) -> FunctionDef {
    let mut out = f.clone();
    let mut seen_exprs: BTreeMap<(CExpr, Vec<Literal>), Var> = BTreeMap::new();
    let mut seen_calls: BTreeMap<(String, Vec<Atom>, Vec<Literal>), Vec<Var>> = BTreeMap::new();
    let mut renames: Vec<(Var, Var)> = Vec::new();
    let mut body: Vec<Statement> = Vec::new();
    for s in &out.body {
        let mut s = s.clone();
        apply_renames(&mut s, &renames);
        match &s.op.target {
            OpTarget::Classical(e) => {
                let key = (e.clone(), s.condition.clone());
                if let Some(prev) = seen_exprs.get(&key) {
                    renames.push((s.produced_classical[0].clone(), prev.clone()));
                    continue;
                }
                seen_exprs.insert(key, s.produced_classical[0].clone());
            }
            OpTarget::Call(base) if s.op.mode.classical_only => {
                let key = (base.clone(), s.conserved.clone(), s.condition.clone());
                if let Some(prev) = seen_calls.get(&key) {
                    for (from, to) in s.produced_classical.iter().zip(prev) {
                        renames.push((from.clone(), to.clone()));
                    }
                    continue;
                }
                seen_calls.insert(key, s.produced_classical.clone());
            }
            _ => {}
        }
        body.push(s);
    }
    rename_returned(&mut out.returned, &renames);
    out.body = body;
    out
}

/// The classical variables a function reads anywhere: expressions,
/// conditions, conserved argument positions and the return list.
fn read_set(f: &FunctionDef) -> BTreeSet<Var> {
    let mut read: BTreeSet<Var> = BTreeSet::new();
    for s in &f.body {
        for a in &s.conserved {
            if let Atom::Var(v) = a {
                read.insert(v.clone());
            }
        }
        for v in &s.consumed {
            read.insert(v.clone());
        }
        for l in &s.condition {
            read.insert(l.var.clone());
        }
        if let OpTarget::Classical(e) = &s.op.target {
            let mut names = BTreeSet::new();
            e.free_vars(&mut names);
            read.extend(names.into_iter().map(Var::c));
        }
    }
    read.extend(f.returned.iter().cloned());
    read
}

/// Removes classical statements whose outputs are never read, and
/// new/unnew pairs with no intervening use, then collapses dup chains.
/// Iterates to a fixpoint.
pub fn dead_code_eliminate(f: &FunctionDef) -> FunctionDef {
    let mut cur = f.clone();
    loop {
        let mut changed = false;
        let read = read_set(&cur);
        let before = cur.body.len();
        cur.body.retain(|s| {
            !(is_classical_stmt(s) && s.produced_classical.iter().all(|v| !read.contains(v)))
        });
        changed |= cur.body.len() != before;

        // t := new_b ... unnew_b(t) with nothing touching t in between.
        'pairs: for i in 0..cur.body.len() {
            let s = &cur.body[i];
            let OpTarget::New { one } = s.op.target else { continue };
            if s.op.mode != Mode::PLAIN {
                continue;
            }
            let t = s.produced[0].clone();
            for j in i + 1..cur.body.len() {
                let u = &cur.body[j];
                if u.read_vars().contains(&t) || u.written_vars().contains(&t) {
                    let matching = matches!(u.op.target, OpTarget::New { one: o } if o == one)
                        && u.op.mode == Mode::adjoint()
                        && u.consumed == [t.clone()]
                        && u.condition == s.condition;
                    if matching {
                        cur.body.remove(j);
                        cur.body.remove(i);
                        changed = true;
                        break 'pairs;
                    }
                    break;
                }
            }
        }

        let collapsed = cancel_dup_pairs(&cur);
        if collapsed != cur {
            cur = collapsed;
            changed = true;
        }
        if !changed {
            return cur;
        }
    }
}

/// Runs constant propagation, CSE and DCE to a fixpoint. The bound exists
/// to turn a non-converging pass combination into a diagnostic instead of
/// an endless loop.
pub fn simplify(f: &FunctionDef) -> Result<FunctionDef, IrError> {
    let mut cur = f.clone();
    for _ in 0..20 {
        let next = dead_code_eliminate(&common_subexpr_eliminate(&constant_propagate(&cur)));
        if next == cur {
            return Ok(next);
        }
        cur = next;
    }
    Err(IrError::new(format!(
        "simplification of {} did not settle within 20 rounds",
        f.name
    )))
}

/// Simplifies every function of a program in place.
pub fn simplify_program(p: &mut Program) -> Result<(), IrError> {
    let names: Vec<FuncName> = p.names();
    for n in names {
        let f = p.get(&n).expect("listed name").clone();
        let s = simplify(&f)?;
        p.replace_function(s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{make_statement, CBinOp, Effect, FuncName, Operation, Param, Program};

    fn classical_stmt(f: &mut FunctionDef, p: &Program, out: &str, e: CExpr) -> Statement {
        make_statement(
            f.fresh_stmt_id(),
            alloc::vec![Var::c(out)],
            alloc::vec![],
            Effect::Pure,
            Operation::plain(OpTarget::Classical(e)),
            alloc::vec![],
            alloc::vec![],
            alloc::vec![],
            p,
        )
        .unwrap()
    }

    #[test]
    fn arithmetic_with_literal_operands_folds() {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("k"));
        let e = CExpr::bin(
            CBinOp::Sub,
            CExpr::bin(CBinOp::Sub, CExpr::Int(5), CExpr::Int(1)),
            CExpr::Int(2),
        );
        let s = classical_stmt(&mut f, &p, "j", e);
        f.body = alloc::vec![s];
        f.returned = alloc::vec![Var::c("j")];
        p.add_function(f).unwrap();
        let folded = constant_propagate(p.get(&FuncName::plain("k")).unwrap());
        assert_eq!(
            folded.body[0].op.target,
            OpTarget::Classical(CExpr::Int(2))
        );
    }

    /// f(u) := { $z := 1 == 1; w0,w1 := distribute[$z](u); w1' := X(w1) if $z;
    ///           r := select[$z](w0, w1') } > r
    fn branchy_program() -> Program {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("f"));
        f.consumed_params.push(Param::quantum("u"));
        let s0 = classical_stmt(
            &mut f,
            &p,
            "z",
            CExpr::bin(CBinOp::Eq, CExpr::Int(1), CExpr::Int(1)),
        );
        let s1 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("w0"), Var::q("w1")],
            Effect::Pure,
            Operation::with_mode(OpTarget::Select, Mode::adjoint()),
            alloc::vec![Atom::Var(Var::c("z"))],
            alloc::vec![Var::q("u")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s2 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("w1'")],
            Effect::Quantum,
            Operation::plain(OpTarget::X),
            alloc::vec![],
            alloc::vec![Var::q("w1")],
            alloc::vec![Literal::pos(Var::c("z"))],
            &p,
        )
        .unwrap();
        let s3 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("r")],
            Effect::Pure,
            Operation::plain(OpTarget::Select),
            alloc::vec![Atom::Var(Var::c("z"))],
            alloc::vec![Var::q("w0"), Var::q("w1'")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s0, s1, s2, s3];
        f.returned = alloc::vec![Var::q("r")];
        p.add_function(f).unwrap();
        p
    }

    #[test]
    fn known_classical_branches_collapse_to_the_taken_path() {
        let p = branchy_program();
        let s = simplify(p.get(&FuncName::plain("f")).unwrap()).unwrap();
        assert_eq!(s.body.len(), 1, "{:#?}", s.body);
        assert_eq!(s.body[0].op.target, OpTarget::X);
        assert_eq!(s.body[0].consumed, alloc::vec![Var::q("u")]);
        assert!(s.body[0].condition.is_empty());
        assert_eq!(s.returned, alloc::vec![Var::q("w1'")]);
    }

    #[test]
    fn identical_classical_expressions_merge() {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("g"));
        f.conserved_params.push(Param::classical("n"));
        let e = CExpr::bin(CBinOp::Sub, CExpr::var("n"), CExpr::Int(1));
        let s0 = classical_stmt(&mut f, &p, "a", e.clone());
        let s1 = classical_stmt(&mut f, &p, "b", e);
        f.body = alloc::vec![s0, s1];
        f.returned = alloc::vec![Var::c("a"), Var::c("b")];
        p.add_function(f).unwrap();
        let out = common_subexpr_eliminate(p.get(&FuncName::plain("g")).unwrap());
        assert_eq!(out.body.len(), 1);
        assert_eq!(out.returned, alloc::vec![Var::c("a"), Var::c("a")]);
    }

    #[test]
    fn unread_classical_results_and_new_unnew_pairs_disappear() {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("h"));
        f.conserved_params.push(Param::quantum("a"));
        let s0 = classical_stmt(&mut f, &p, "dead", CExpr::Int(3));
        let s1 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("t")],
            Effect::Pure,
            Operation::plain(OpTarget::New { one: false }),
            alloc::vec![],
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
            Operation::with_mode(OpTarget::New { one: false }, Mode::adjoint()),
            alloc::vec![],
            alloc::vec![Var::q("t")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s0, s1, s2];
        p.add_function(f).unwrap();
        let out = dead_code_eliminate(p.get(&FuncName::plain("h")).unwrap());
        assert!(out.body.is_empty(), "{:#?}", out.body);
    }

    #[test]
    fn simplification_is_idempotent() {
        let p = branchy_program();
        let once = simplify(p.get(&FuncName::plain("f")).unwrap()).unwrap();
        let twice = simplify(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn simplification_preserves_meaning_and_verdicts() {
        use crate::sim::{equiv_up_to_phase, simulate, SimConfig, StateVector};
        use crate::uncomp::synthesize_uncomputation;
        use crate::verify::verify_function;

        let mut p = crate::testfix::maj_program();
        let name = FuncName::plain("maj");
        let mut synth = synthesize_uncomputation(p.get(&name).unwrap(), &p).unwrap();
        synth.name = FuncName::plain("maj_u");
        let slim = simplify(&synth).unwrap();
        assert!(slim.body.len() < synth.body.len());
        assert!(verify_function(&slim, &p).is_empty());

        p.add_function(synth.clone()).unwrap();
        let mut q = crate::testfix::maj_program();
        q.add_function(slim.clone()).unwrap();
        let cfg = SimConfig::default();
        for seed in 0..4u64 {
            let input = StateVector::random(
                alloc::vec!["a".into(), "b".into(), "c".into()],
                seed,
            );
            let lhs = simulate(&p, &synth.name, &[], &input, cfg).unwrap();
            let rhs = simulate(&q, &slim.name, &[], &input, cfg).unwrap();
            assert!(equiv_up_to_phase(&lhs.state, &rhs.state, cfg.tolerance));
        }
    }
}
