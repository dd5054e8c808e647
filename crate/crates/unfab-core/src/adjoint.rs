//! Adjoint synthesis: reverses measure-free functions.
//!
//! The adjoint swaps the roles of consumed quantum parameters and produced
//! quantum results while conserving everything conserved. Classical
//! computation is not reversible and still has to run forwards, so the
//! synthesized body starts with a classical prefix (every statement with a
//! classical output, stripped to its classical parts) followed by the
//! adjoints of the quantum statements in reverse order.
//!
//! [`synthesize_classical`] is the classical prefix as a standalone
//! function variant, used when only a call's classical outputs are needed.
//!
//! Both passes keep original variable names, which makes the adjoint an
//! exact structural involution when classical statements precede quantum
//! ones (the corpus convention).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ir::{
    Atom, BinDir, Effect, FunctionDef, IrError, Mode, OpTarget, Operation, PairRole, Param,
    Program, Statement, Var, VarKind,
};

fn body_effect(f: &FunctionDef) -> Effect {
    f.body.iter().map(|s| s.effect).max().unwrap_or(Effect::Pure)
}

fn has_forget(f: &FunctionDef) -> bool {
    f.body
        .iter()
        .any(|s| matches!(s.op.target, OpTarget::Forget))
}

fn is_classical_stmt(s: &Statement) -> bool {
    matches!(s.op.target, OpTarget::Classical(_)) || s.op.mode.classical_only
}

/// The classical residue of a statement: classical outputs from classical
/// conserved inputs, quantum parts dropped.
fn make_classical(s: &Statement, next_id: &mut dyn FnMut() -> crate::ir::StmtId) -> Statement {
    let conserved: Vec<Atom> = s
        .conserved
        .iter()
        .filter(|a| match a {
            Atom::Var(v) => v.kind == VarKind::Classical,
            Atom::Int(_) => true,
        })
        .cloned()
        .collect();
    let op = match &s.op.target {
        OpTarget::Classical(e) => Operation::with_mode(OpTarget::Classical(e.clone()), s.op.mode),
        t => Operation::with_mode(t.clone(), Mode::classical_only()),
    };
    Statement {
        id: next_id(),
        produced_classical: s.produced_classical.clone(),
        produced: Vec::new(),
        effect: Effect::Pure,
        op,
        conserved,
        consumed: Vec::new(),
        condition: s.condition.clone(),
        pair: None,
    }
}

/// The adjoint of one statement: consumed and produced swap, the operation
/// flips, classical outputs get fresh unused names (the prefix already
/// defined the originals).
fn make_adjoint(
    s: &Statement,
    f: &FunctionDef,
    used: &mut BTreeSet<String>,
    next_id: &mut dyn FnMut() -> crate::ir::StmtId,
) -> Statement {
    let produced_classical: Vec<Var> = s
        .produced_classical
        .iter()
        .map(|v| Var { kind: VarKind::Classical, name: f.fresh_ticked(&v.name, used) })
        .collect();
    Statement {
        id: next_id(),
        produced_classical,
        produced: s.consumed.clone(),
        effect: s.effect,
        op: s.op.adjointed(),
        conserved: s.conserved.clone(),
        consumed: s.produced.clone(),
        condition: s.condition.clone(),
        pair: s.pair.map(|(tag, role)| {
            let flipped = match role {
                PairRole::Compute => PairRole::Uncompute,
                PairRole::Uncompute => PairRole::Compute,
            };
            (tag, flipped)
        }),
    }
}

/// Builds `f^O`: only the classical computation of `f`, keyed by the
/// classical-only mode. Conserves the classical parameters and returns the
/// classical outputs.
pub fn synthesize_classical(f: &FunctionDef, _program: &Program) -> Result<FunctionDef, IrError> {
    if body_effect(f) == Effect::Measure {
        return Err(IrError::new(format!(
            "cannot take the classical part of {}: it measures",
            f.name
        )));
    }
    let mut name = f.name.clone();
    name.mode = Mode::classical_only();
    let mut out = FunctionDef::new(name);
    out.conserved_params = f.classical_params().into_iter().cloned().collect();
    out.returned = f
        .returned
        .iter()
        .filter(|v| v.kind == VarKind::Classical)
        .cloned()
        .collect();
    let mut body = Vec::new();
    for s in &f.body {
        if s.produced_classical.is_empty() {
            continue;
        }
        let mut next = || out.fresh_stmt_id();
        body.push(make_classical(s, &mut next));
    }
    out.body = body;
    Ok(out)
}

/// Builds `f†` for measure-free, forget-free `f`: a classical prefix in
/// program order, then the adjoints of all quantum statements in reverse.
pub fn synthesize_adjoint(f: &FunctionDef, _program: &Program) -> Result<FunctionDef, IrError> {
    if body_effect(f) == Effect::Measure {
        return Err(IrError::new(format!(
            "cannot take the adjoint of {}: it measures",
            f.name
        )));
    }
    if has_forget(f) {
        return Err(IrError::new(format!(
            "cannot take the adjoint of {}: it still contains forget (synthesize uncomputation first)",
            f.name
        )));
    }
    let mut name = f.name.clone();
    name.mode = name.mode.adjointed();
    let mut out = FunctionDef::new(name);
    out.conserved_params = f.conserved_params.clone();
    out.consumed_params = f
        .returned
        .iter()
        .filter(|v| v.kind != VarKind::Classical)
        .map(|v| Param { var: v.clone(), width: None })
        .collect();
    let mut returned: Vec<Var> = f
        .returned
        .iter()
        .filter(|v| v.kind == VarKind::Classical)
        .cloned()
        .collect();
    returned.extend(f.consumed_params.iter().map(|p| p.var.clone()));
    out.returned = returned;
    out.bin = f.bin.clone().map(|(v, dir)| {
        let flipped = match dir {
            BinDir::Out => BinDir::In,
            BinDir::In => BinDir::Out,
        };
        (v, flipped)
    });

    let mut used = f.used_names();
    let mut body = Vec::new();
    for s in &f.body {
        if s.produced_classical.is_empty() {
            continue;
        }
        let mut next = || out.fresh_stmt_id();
        body.push(make_classical(s, &mut next));
    }
    for s in f.body.iter().rev() {
        if is_classical_stmt(s) {
            continue;
        }
        let mut next = || out.fresh_stmt_id();
        body.push(make_adjoint(s, f, &mut used, &mut next));
    }
    out.body = body;
    Ok(out)
}

/// Structural equality modulo statement ids, pair tag numbers and parameter
/// width annotations: same signature variables, same statements in the same
/// order. Widths are entry-point layout metadata that return positions do
/// not carry, so a signature swap cannot round-trip them.
pub fn same_shape(a: &FunctionDef, b: &FunctionDef) -> bool {
    let params_eq = |xs: &[Param], ys: &[Param]| {
        xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| x.var == y.var)
    };
    let stmt_eq = |x: &Statement, y: &Statement| {
        x.produced_classical == y.produced_classical
            && x.produced == y.produced
            && x.effect == y.effect
            && x.op == y.op
            && x.conserved == y.conserved
            && x.consumed == y.consumed
            && x.condition == y.condition
    };
    a.name == b.name
        && params_eq(&a.conserved_params, &b.conserved_params)
        && params_eq(&a.consumed_params, &b.consumed_params)
        && a.returned == b.returned
        && a.bin == b.bin
        && a.body.len() == b.body.len()
        && a.body.iter().zip(&b.body).all(|(x, y)| stmt_eq(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{make_statement, CBinOp, CExpr, FuncName, Literal};

    /// j := n-1-i; x,y,z := uncat_3[i,1,j](a); a' := cat_2[i,j](x,z) > a',y
    fn extract_program() -> Program {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("extract"));
        f.conserved_params.push(Param::classical("$n"));
        f.conserved_params.push(Param::classical("$i"));
        let mut a_param = Param::quantum("a");
        a_param.width = Some(CExpr::var("$n"));
        f.consumed_params.push(a_param);
        let expr = CExpr::bin(
            CBinOp::Sub,
            CExpr::bin(CBinOp::Sub, CExpr::var("$n"), CExpr::Int(1)),
            CExpr::var("$i"),
        );
        let s0 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![Var::c("$j")],
            alloc::vec![],
            Effect::Pure,
            Operation::plain(OpTarget::Classical(expr)),
            alloc::vec![],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s1 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("x"), Var::q("y"), Var::q("z")],
            Effect::Pure,
            Operation::with_mode(OpTarget::Cat { n: 3 }, Mode { inner_adjoint: true, ..Mode::PLAIN }),
            alloc::vec![
                Atom::Var(Var::c("$i")),
                Atom::Int(1),
                Atom::Var(Var::c("$j")),
            ],
            alloc::vec![Var::q("a")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s2 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![Var::q("a'")],
            Effect::Pure,
            Operation::plain(OpTarget::Cat { n: 2 }),
            alloc::vec![Atom::Var(Var::c("$i")), Atom::Var(Var::c("$j"))],
            alloc::vec![Var::q("x"), Var::q("z")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s0, s1, s2];
        f.returned = alloc::vec![Var::q("a'"), Var::q("y")];
        p.add_function(f).unwrap();
        p
    }

    #[test]
    fn extract_adjoint_runs_classical_first_then_reversed_quantum() {
        let p = extract_program();
        let f = p.get(&FuncName::plain("extract")).unwrap();
        let adj = synthesize_adjoint(f, &p).unwrap();
        assert_eq!(adj.name.mode, Mode { inner_adjoint: true, ..Mode::PLAIN });
        let names: Vec<String> = adj.body.iter().map(|s| s.op.display_name()).collect();
        // classical j, then uncat_2 (adjoint of cat_2), then cat_3.
        assert_eq!(names.len(), 3);
        assert_eq!(names[1], "uncat_2");
        assert_eq!(names[2], "cat_3");
        assert_eq!(adj.body[1].consumed, alloc::vec![Var::q("a'")]);
        assert_eq!(adj.body[1].produced, alloc::vec![Var::q("x"), Var::q("z")]);
        assert_eq!(adj.body[2].produced, alloc::vec![Var::q("a")]);
        // Signature swap: consumes a' and y, returns a.
        assert_eq!(
            adj.consumed_params.iter().map(|p| p.var.clone()).collect::<Vec<_>>(),
            alloc::vec![Var::q("a'"), Var::q("y")]
        );
        assert_eq!(adj.returned, alloc::vec![Var::q("a")]);
    }

    #[test]
    fn adjoint_is_a_structural_involution() {
        let p = extract_program();
        let f = p.get(&FuncName::plain("extract")).unwrap();
        let adj = synthesize_adjoint(f, &p).unwrap();
        let back = synthesize_adjoint(&adj, &p).unwrap();
        assert!(same_shape(&back, f), "\n{back:#?}\nvs\n{f:#?}");
    }

    #[test]
    fn classical_part_keeps_only_classical_statements() {
        let p = extract_program();
        let f = p.get(&FuncName::plain("extract")).unwrap();
        let o = synthesize_classical(f, &p).unwrap();
        assert_eq!(o.body.len(), 1);
        assert_eq!(o.body[0].produced_classical, alloc::vec![Var::c("$j")]);
        assert!(o.body[0].produced.is_empty());
        assert_eq!(o.name.mode, Mode::classical_only());
        assert!(o.returned.is_empty());
    }

    #[test]
    fn measuring_functions_have_no_adjoint() {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("m"));
        f.consumed_params.push(Param::quantum("a"));
        let s = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![Var::c("$r")],
            alloc::vec![],
            Effect::Measure,
            Operation::plain(OpTarget::Measure),
            alloc::vec![],
            alloc::vec![Var::q("a")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s];
        f.returned = alloc::vec![Var::c("$r")];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("m")).unwrap();
        assert!(synthesize_adjoint(f, &p).is_err());
        assert!(synthesize_classical(f, &p).is_err());
    }

    #[test]
    fn adjoint_of_a_conditional_phase_negates_the_angle() {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("tgate"));
        f.conserved_params.push(Param::quantum("a"));
        let s = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![],
            Effect::Quantum,
            Operation::plain(OpTarget::Phase(crate::ir::Angle::new(1, 4))),
            alloc::vec![],
            alloc::vec![],
            alloc::vec![Literal::pos(Var::q("a"))],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("tgate")).unwrap();
        let adj = synthesize_adjoint(f, &p).unwrap();
        assert_eq!(adj.body[0].op.display_name(), "phase_-pi/4");
        assert_eq!(adj.body[0].condition, f.body[0].condition);
        let back = synthesize_adjoint(&adj, &p).unwrap();
        assert!(same_shape(&back, f));
    }
}
