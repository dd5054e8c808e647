//! Shared test fixtures: small hand-built programs used across pass tests.

use alloc::string::String;
use alloc::vec::Vec;

use crate::ir::{
    make_statement, Atom, Effect, FuncName, FunctionDef, Literal, OpTarget, Operation, Param,
    Program, Var,
};

/// Majority vote with a forgotten scratch bit:
/// t := dup[a]; x := CX[b](t); r0 := dup[b] if !x; r1 := dup[c] if x;
/// r := select[x](r0, r1); forget(x) > r
pub(crate) fn maj_program() -> Program {
    let mut p = Program::new();
    let mut f = FunctionDef::new(FuncName::plain("maj"));
    for n in ["a", "b", "c"] {
        f.conserved_params.push(Param::quantum(n));
    }
    let mk = |f: &mut FunctionDef,
              p: &Program,
              out: &[&str],
              op: Operation,
              cons: &[&str],
              used: &[&str],
              cond: &[(&str, bool)]| {
        make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            out.iter().map(|n| Var::q(*n)).collect(),
            Effect::Pure,
            op,
            cons.iter().map(|n| Atom::Var(Var::q(*n))).collect(),
            used.iter().map(|n| Var::q(*n)).collect(),
            cond.iter()
                .map(|(n, neg)| Literal { var: Var::q(*n), negated: *neg })
                .collect(),
            p,
        )
        .unwrap()
    };
    let s0 = mk(&mut f, &p, &["t"], Operation::plain(OpTarget::Dup), &["a"], &[], &[]);
    let s1 = mk(&mut f, &p, &["x"], Operation::plain(OpTarget::CX), &["b"], &["t"], &[]);
    let s2 = mk(&mut f, &p, &["r0"], Operation::plain(OpTarget::Dup), &["b"], &[], &[("x", true)]);
    let s3 = mk(&mut f, &p, &["r1"], Operation::plain(OpTarget::Dup), &["c"], &[], &[("x", false)]);
    let s4 = mk(&mut f, &p, &["r"], Operation::plain(OpTarget::Select), &["x"], &["r0", "r1"], &[]);
    let s5 = mk(&mut f, &p, &[], Operation::plain(OpTarget::Forget), &[], &["x"], &[]);
    f.body = alloc::vec![s0, s1, s2, s3, s4, s5];
    f.returned = alloc::vec![Var::q("r")];
    p.add_function(f).unwrap();
    p
}

pub(crate) fn names_of(f: &FunctionDef) -> Vec<String> {
    f.body.iter().map(|s| s.op.display_name()).collect()
}
