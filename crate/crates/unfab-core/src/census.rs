//! Dynamic call counting over the classical control skeleton.
//!
//! The census runs a program the way the simulator would, but only tracks
//! classical values: quantum state is never touched, so arbitrarily wide
//! functions can be counted. Every executed user call is tallied under its
//! full variant name, so `f`, `f^adj` and `f^G` count separately. A
//! condition that cannot be decided classically (a quantum control, or a
//! classical value the walk does not know) counts as executing, which makes
//! the census an upper bound for such programs and exact for programs whose
//! classical control is fully decidable.
//!
//! Adjoint variants without a stored definition are counted by mirroring:
//! the walk reads the base definition and adjoints each call it meets,
//! because the adjoint body executes exactly the inverses of the forward
//! body's calls, one for one, and a `forget` costs one either way. Counting
//! through materialized uncomputation instead would charge a declarative
//! source program for synthesis it never asked to run.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::derive::materialize;
use crate::ir::{
    Atom, CVal, FuncName, FunctionDef, IrError, OpTarget, Program, VarKind,
};

/// Executed-call tallies from one entry-point run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Census {
    /// Executions per callee, keyed by the full variant name.
    pub calls: BTreeMap<FuncName, u64>,
    /// Executed `forget` statements.
    pub forgets: u64,
}

impl Census {
    /// Total user-call executions across all callees.
    pub fn total_calls(&self) -> u64 {
        self.calls.values().sum()
    }

    /// Call total with each executed `forget` weighted as one call. This is
    /// the baseline the doubling bound is stated against: replacing a
    /// `forget` costs at least the one inverse call it turns into.
    pub fn weight(&self) -> u64 {
        self.total_calls() + self.forgets
    }

    /// Executions of one callee.
    pub fn of(&self, name: &FuncName) -> u64 {
        self.calls.get(name).copied().unwrap_or(0)
    }
}

/// Counts the user calls executed by running `entry` with the given
/// classical arguments. Garbage and classical-only variants are
/// materialized on demand, same as the simulator does; bare adjoint
/// variants are counted by mirroring the base body. The walk is bounded at
/// ten million calls so unbounded recursion becomes an error instead of a
/// hang.
pub fn call_census(
    p: &mut Program,
    entry: &FuncName,
    args: &[CVal],
) -> Result<Census, IrError> {
    let mut census = Census::default();
    let mut fuel: u64 = 10_000_000;
    walk(p, entry, args.iter().copied().map(Some).collect(), &mut census, &mut fuel, 0)?;
    Ok(census)
}

/// Nesting bound; a call chain this deep has no decidable base case.
const MAX_DEPTH: u32 = 256;

/// Finds the body to count for `name`. Stored definitions win; garbage and
/// classical-only variants must be materialized because their call
/// structure genuinely differs from the base; a bare adjoint variant is
/// counted off the base definition with the mirror flag set.
fn resolve(p: &mut Program, name: &FuncName) -> Result<(FunctionDef, bool), IrError> {
    if p.contains(name) {
        return Ok((p.get(name).expect("present").clone(), false));
    }
    let plain = FuncName::plain(name.base.clone());
    if !name.mode.garbage && !name.mode.classical_only && p.contains(&plain) {
        let parity = name.mode.inner_adjoint != name.mode.outer_adjoint;
        return Ok((p.get(&plain).expect("present").clone(), parity));
    }
    materialize(p, name)?;
    Ok((p.get(name).expect("materialized").clone(), false))
}

/// Runs one activation. `args` lines up with the function's classical
/// parameters; `None` marks a value the caller did not know. Returns the
/// classical return values, in return-list order. When the resolved body is
/// a mirror stand-in for an adjoint variant, classical outputs follow the
/// forward body; conserved classical data is unaffected by adjointing, so
/// recursion arguments still line up.
fn walk(
    p: &mut Program,
    name: &FuncName,
    args: Vec<Option<CVal>>,
    census: &mut Census,
    fuel: &mut u64,
    depth: u32,
) -> Result<Vec<Option<CVal>>, IrError> {
    if depth > MAX_DEPTH {
        return Err(IrError::new(
            "call census ran out of fuel; recursion nests too deep to settle",
        ));
    }
    let (f, mirror) = resolve(p, name)?;
    let mut env: BTreeMap<String, CVal> = BTreeMap::new();
    let params: Vec<String> =
        f.classical_params().map(|q| q.var.name.clone()).collect();
    if params.len() != args.len() {
        return Err(IrError::new(format!(
            "{name} takes {} classical arguments, got {}",
            params.len(),
            args.len()
        )));
    }
    for (q, a) in params.into_iter().zip(args) {
        if let Some(v) = a {
            env.insert(q, v);
        }
    }

    'stmts: for s in &f.body {
        for l in &s.condition {
            if l.var.kind == VarKind::Classical {
                if let Some(v) = env.get(&l.var.name) {
                    if v.as_bool()? == l.negated {
                        continue 'stmts;
                    }
                }
            }
        }
        match &s.op.target {
            OpTarget::Classical(e) => {
                if let Ok(v) = e.eval(&env) {
                    env.insert(s.produced_classical[0].name.clone(), v);
                }
            }
            OpTarget::Forget => census.forgets += 1,
            OpTarget::Call(base) => {
                if *fuel == 0 {
                    return Err(IrError::new(
                        "call census ran out of fuel; recursion does not settle",
                    ));
                }
                *fuel -= 1;
                let mode = if mirror && !s.op.mode.classical_only {
                    s.op.mode.adjointed()
                } else {
                    s.op.mode
                };
                let callee = FuncName::with_mode(base.clone(), mode);
                *census.calls.entry(callee.clone()).or_insert(0) += 1;
                let (sig, _) = resolve(p, &callee)?;
                let mut inner_args = Vec::new();
                for (param, atom) in sig.conserved_params.iter().zip(&s.conserved) {
                    if param.var.kind != VarKind::Classical {
                        continue;
                    }
                    inner_args.push(match atom {
                        Atom::Int(k) => Some(CVal::Int(*k)),
                        Atom::Var(v) => env.get(&v.name).copied(),
                    });
                }
                let ret = walk(p, &callee, inner_args, census, fuel, depth + 1)?;
                for (out, v) in s.produced_classical.iter().zip(ret) {
                    if let Some(v) = v {
                        env.insert(out.name.clone(), v);
                    }
                }
            }
            _ => {}
        }
    }

    Ok(f
        .returned
        .iter()
        .filter(|v| v.kind == VarKind::Classical)
        .map(|v| env.get(&v.name).copied())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{
        make_statement, CBinOp, CExpr, Effect, Literal, Mode, Operation, Param, Statement, Var,
    };

    /// count[$n] := { $z := $n == 0; $m := $n - 1;
    ///                count[$m] if !$z; count[$m] if !$z; leaf[] if !$z }
    ///
    /// Two recursive calls per level, so the census of `leaf` is 2^n - 1.
    fn doubling_program() -> Program {
        let mut p = Program::new();
        let leaf = FunctionDef::new(FuncName::plain("leaf"));
        p.add_function(leaf).unwrap();

        let mut f = FunctionDef::new(FuncName::plain("count"));
        f.conserved_params.push(Param::classical("n"));
        // Register the shell first so the recursive call resolves.
        p.add_function(f.clone()).unwrap();
        let s0 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![Var::c("z")],
            alloc::vec![],
            Effect::Pure,
            Operation::plain(OpTarget::Classical(CExpr::bin(
                CBinOp::Eq,
                CExpr::var("n"),
                CExpr::Int(0),
            ))),
            alloc::vec![],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let s1 = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![Var::c("m")],
            alloc::vec![],
            Effect::Pure,
            Operation::plain(OpTarget::Classical(CExpr::bin(
                CBinOp::Sub,
                CExpr::var("n"),
                CExpr::Int(1),
            ))),
            alloc::vec![],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        let call = |f: &mut FunctionDef, p: &Program, base: &str, args: Vec<Atom>| -> Statement {
            make_statement(
                f.fresh_stmt_id(),
                alloc::vec![],
                alloc::vec![],
                Effect::Pure,
                Operation::with_mode(OpTarget::Call(base.into()), Mode::PLAIN),
                args,
                alloc::vec![],
                alloc::vec![Literal::neg(Var::c("z"))],
                p,
            )
            .unwrap()
        };
        let rec = alloc::vec![Atom::Var(Var::c("m"))];
        let s2 = call(&mut f, &p, "count", rec.clone());
        let s3 = call(&mut f, &p, "count", rec);
        let s4 = call(&mut f, &p, "leaf", alloc::vec![]);
        f.body = alloc::vec![s0, s1, s2, s3, s4];
        p.replace_function(f).unwrap();
        p
    }

    #[test]
    fn recursion_fans_out_exponentially() {
        let mut p = doubling_program();
        for n in 0..7i64 {
            let c = call_census(&mut p, &FuncName::plain("count"), &[CVal::Int(n)]).unwrap();
            assert_eq!(c.of(&FuncName::plain("leaf")), (1 << n) - 1, "n = {n}");
        }
    }

    #[test]
    fn forgets_carry_unit_weight() {
        let mut p = crate::testfix::maj_program();
        let c = call_census(&mut p, &FuncName::plain("maj"), &[]).unwrap();
        assert_eq!(c.total_calls(), 0);
        assert_eq!(c.forgets, 1);
        assert_eq!(c.weight(), 1);
    }

    #[test]
    fn adjoint_calls_are_counted_off_the_base_body() {
        // wrap calls maj^adj; maj has one forget. The mirror counts the
        // forget as one unit instead of synthesizing uncomputation for it,
        // and leaves no materialized variant behind.
        let mut p = crate::testfix::maj_program();
        let maj = p.get(&FuncName::plain("maj")).unwrap().clone();
        let mut f = FunctionDef::new(FuncName::plain("wrap"));
        f.conserved_params = maj.conserved_params.clone();
        f.consumed_params = alloc::vec![Param::quantum("x")];
        p.add_function(f.clone()).unwrap();
        let args: Vec<Atom> =
            maj.conserved_params.iter().map(|q| Atom::Var(q.var.clone())).collect();
        let s = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![],
            Effect::Pure,
            Operation::with_mode(OpTarget::Call("maj".into()), Mode::adjoint()),
            args,
            alloc::vec![Var::q("x")],
            alloc::vec![],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s];
        p.replace_function(f).unwrap();
        let c = call_census(&mut p, &FuncName::plain("wrap"), &[]).unwrap();
        let adj = FuncName::with_mode("maj", Mode::adjoint());
        assert_eq!(c.of(&adj), 1);
        assert_eq!(c.forgets, 1);
        assert_eq!(c.weight(), 2);
        assert!(!p.contains(&adj), "the mirror must not materialize");
    }

    #[test]
    fn unbounded_recursion_is_reported() {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("loop"));
        p.add_function(f.clone()).unwrap();
        let s = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            alloc::vec![],
            Effect::Pure,
            Operation::with_mode(OpTarget::Call("loop".into()), Mode::PLAIN),
            alloc::vec![],
            alloc::vec![],
            alloc::vec![],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s];
        p.replace_function(f).unwrap();
        let err = call_census(&mut p, &FuncName::plain("loop"), &[]).unwrap_err();
        assert!(err.to_string().contains("fuel"));
    }
}
