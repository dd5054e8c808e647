//! Program verification: condition consistency and forgettability.
//!
//! Three checks build on each other:
//!
//! * [`check_conditions`] validates the branch discipline. Every quantum or
//!   garbage value must be consumed under exactly the condition it was
//!   produced under; `select`/`distribute` absorb their control into the
//!   branch operands (input `k` of a select exists only when the control
//!   equals `k`, and dually for distribute outputs). Conserved uses and
//!   condition reads only need the weaker subset direction. Effects are
//!   validated exactly, measurement and classical production are rejected
//!   under quantum conditions.
//! * [`forgettable_at`] decides whether a variable could be reconstructed
//!   from values alive at a given body position, by walking producer
//!   statements backwards: the producer must be pure, its conserved and
//!   condition operands must be alive or themselves recoverable, its other
//!   outputs must be alive or recoverable, and whatever it consumed must be
//!   recursively recoverable (undoing the producer re-materializes it).
//!   Success yields a [`ForgettableWitness`] naming the statement chain.
//! * [`check_well_forgotten`] applies that to every `forget` statement.
//!
//! All diagnostics are data ([`Diagnostic`]), also printable as
//! line-oriented `key=value` records for machine consumption.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::ir::{
    effect_of, normalize_condition, structural_check, Atom, Effect, FuncName, FunctionDef,
    Literal, Mode, OpTarget, Program, Statement, StmtId, Var, VarKind,
};

/// Machine-readable diagnostic categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DiagCode {
    /// Structural violation (scope, single assignment, consumption, arity).
    Structural,
    /// A value's production and consumption conditions disagree.
    ConditionMismatch,
    /// A statement's condition contains a literal and its negation.
    ContradictoryCondition,
    /// A conserved or condition operand may not exist in some branch.
    UnavailableInBranch,
    /// A statement's declared effect differs from its operation's effect.
    EffectMismatch,
    /// Measurement under a quantum condition.
    MeasureUnderQuantumCondition,
    /// Classical output under a quantum condition.
    ClassicalUnderQuantumCondition,
    /// `forget` under a quantum condition.
    ForgetUnderQuantumCondition,
    /// `dispose` of a quantum value under a quantum condition.
    DisposeUnderQuantumCondition,
    /// A forgotten variable has no witness.
    NotForgettable,
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagCode::Structural => "Structural",
            DiagCode::ConditionMismatch => "ConditionMismatch",
            DiagCode::ContradictoryCondition => "ContradictoryCondition",
            DiagCode::UnavailableInBranch => "UnavailableInBranch",
            DiagCode::EffectMismatch => "EffectMismatch",
            DiagCode::MeasureUnderQuantumCondition => "MeasureUnderQuantumCondition",
            DiagCode::ClassicalUnderQuantumCondition => "ClassicalUnderQuantumCondition",
            DiagCode::ForgetUnderQuantumCondition => "ForgetUnderQuantumCondition",
            DiagCode::DisposeUnderQuantumCondition => "DisposeUnderQuantumCondition",
            DiagCode::NotForgettable => "NotForgettable",
        };
        f.write_str(s)
    }
}

/// One verification finding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub code: DiagCode,
    pub func: FuncName,
    pub stmt: Option<StmtId>,
    pub var: Option<Var>,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: DiagCode, func: &FuncName, message: impl Into<String>) -> Self {
        Diagnostic { code, func: func.clone(), stmt: None, var: None, message: message.into() }
    }
    pub fn at(mut self, stmt: StmtId) -> Self {
        self.stmt = Some(stmt);
        self
    }
    pub fn on(mut self, var: Var) -> Self {
        self.var = Some(var);
        self
    }

    /// Line-oriented `key=value` record.
    pub fn record(&self) -> String {
        let mut s = format!("code={} func={}", self.code, self.func);
        if let Some(id) = self.stmt {
            s.push_str(&format!(" stmt={}", id.0));
        }
        if let Some(v) = &self.var {
            s.push_str(&format!(" var={v}"));
        }
        s.push_str(&format!(" msg=\"{}\"", self.message));
        s
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.record())
    }
}

fn cond_string(cond: &[Literal]) -> String {
    if cond.is_empty() {
        return "always".to_string();
    }
    let parts: Vec<String> = cond.iter().map(|l| l.to_string()).collect();
    parts.join(" & ")
}

fn has_quantum_literal(s: &Statement) -> bool {
    s.condition.iter().any(|l| l.var.kind == VarKind::Quantum)
}

fn contradictory(cond: &[Literal]) -> bool {
    cond.iter().any(|l| cond.contains(&l.negate()))
}

/// The effect an operation actually has, resolving calls through the
/// program's effect fixpoint.
fn op_effect(s: &Statement, effects: &BTreeMap<FuncName, Effect>) -> Effect {
    match &s.op.target {
        OpTarget::Call(base) => {
            let m = s.op.mode;
            if m.classical_only || m.garbage {
                return Effect::Pure;
            }
            let inner = FuncName::with_mode(
                base.clone(),
                Mode { inner_adjoint: m.inner_adjoint, ..Mode::PLAIN },
            );
            effects
                .get(&inner)
                .or_else(|| effects.get(&FuncName::plain(base.clone())))
                .copied()
                .unwrap_or(Effect::Pure)
        }
        t => t.builtin_effect().unwrap_or(Effect::Pure),
    }
}

/// Production condition for each quantum/garbage variable: the producer's
/// condition, with distribute outputs refined by their branch literal.
fn prod_conds(f: &FunctionDef) -> BTreeMap<Var, Vec<Literal>> {
    let mut map = BTreeMap::new();
    for p in f.conserved_params.iter().chain(&f.consumed_params) {
        if p.var.kind != VarKind::Classical {
            map.insert(p.var.clone(), Vec::new());
        }
    }
    for s in &f.body {
        let ctrl = s.conserved.first().and_then(|a| a.as_var()).cloned();
        for (k, v) in s.produced.iter().enumerate() {
            let mut cond = s.condition.clone();
            if s.op.is_distribute() && k < 2 && v.kind != VarKind::Garbage {
                if let Some(c) = &ctrl {
                    cond.push(Literal { var: c.clone(), negated: k == 0 });
                }
            }
            normalize_condition(&mut cond);
            map.insert(v.clone(), cond);
        }
    }
    map
}

/// Consumption condition for each consumed variable, with select inputs
/// refined by their branch literal. Returned variables consume at `always`.
fn cons_conds(f: &FunctionDef) -> BTreeMap<Var, (Option<StmtId>, Vec<Literal>)> {
    let mut map = BTreeMap::new();
    for s in &f.body {
        let ctrl = s.conserved.first().and_then(|a| a.as_var()).cloned();
        for (k, v) in s.consumed.iter().enumerate() {
            let mut cond = s.condition.clone();
            if s.op.is_select() && k < 2 {
                if let Some(c) = &ctrl {
                    cond.push(Literal { var: c.clone(), negated: k == 0 });
                }
            }
            normalize_condition(&mut cond);
            map.insert(v.clone(), (Some(s.id), cond));
        }
    }
    for v in &f.returned {
        if v.kind != VarKind::Classical {
            map.insert(v.clone(), (None, Vec::new()));
        }
    }
    map
}

/// Condition-discipline and effect checks for one function.
pub fn check_conditions(f: &FunctionDef, program: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let effects = effect_of(program);
    let prods = prod_conds(f);
    let conss = cons_conds(f);

    for s in &f.body {
        if contradictory(&s.condition) {
            diags.push(
                Diagnostic::new(
                    DiagCode::ContradictoryCondition,
                    &f.name,
                    format!("condition `{}` is unsatisfiable", cond_string(&s.condition)),
                )
                .at(s.id),
            );
        }
        let actual = op_effect(s, &effects);
        if s.effect != actual {
            diags.push(
                Diagnostic::new(
                    DiagCode::EffectMismatch,
                    &f.name,
                    format!(
                        "declared effect `{}` but {} has effect `{}`",
                        s.effect.letter(),
                        s.op.display_name(),
                        actual.letter()
                    ),
                )
                .at(s.id),
            );
        }
        if has_quantum_literal(s) {
            if actual == Effect::Measure {
                diags.push(
                    Diagnostic::new(
                        DiagCode::MeasureUnderQuantumCondition,
                        &f.name,
                        "measurement cannot run under a quantum condition",
                    )
                    .at(s.id),
                );
            }
            if !s.produced_classical.is_empty() {
                diags.push(
                    Diagnostic::new(
                        DiagCode::ClassicalUnderQuantumCondition,
                        &f.name,
                        "classical outputs cannot depend on a quantum condition",
                    )
                    .at(s.id),
                );
            }
            if matches!(s.op.target, OpTarget::Forget) {
                diags.push(
                    Diagnostic::new(
                        DiagCode::ForgetUnderQuantumCondition,
                        &f.name,
                        "forget cannot run under a quantum condition",
                    )
                    .at(s.id),
                );
            }
            if matches!(s.op.target, OpTarget::Dispose)
                && !s.op.mode.inner_adjoint
                && s.consumed.first().map(|v| v.kind) == Some(VarKind::Quantum)
            {
                diags.push(
                    Diagnostic::new(
                        DiagCode::DisposeUnderQuantumCondition,
                        &f.name,
                        "quantum values cannot be disposed under a quantum condition",
                    )
                    .at(s.id),
                );
            }
        }
        // Conserved operands and condition variables only need to exist in
        // every branch the statement runs in (subset direction).
        let mut weak_uses: Vec<Var> = Vec::new();
        for a in &s.conserved {
            if let Atom::Var(v) = a {
                if v.kind != VarKind::Classical {
                    weak_uses.push(v.clone());
                }
            }
        }
        for l in &s.condition {
            if l.var.kind == VarKind::Quantum {
                weak_uses.push(l.var.clone());
            }
        }
        for v in weak_uses {
            let Some(pc) = prods.get(&v) else { continue }; // structural error elsewhere
            if !pc.iter().all(|l| s.condition.contains(l)) {
                diags.push(
                    Diagnostic::new(
                        DiagCode::UnavailableInBranch,
                        &f.name,
                        format!(
                            "{v} exists only when `{}` but is used when `{}`",
                            cond_string(pc),
                            cond_string(&s.condition)
                        ),
                    )
                    .at(s.id)
                    .on(v.clone()),
                );
            }
        }
    }

    // Consumption balance: produced and consumed conditions must agree.
    for (v, pc) in &prods {
        let Some((stmt, cc)) = conss.get(v) else { continue }; // leak: structural
        if pc != cc {
            let mut d = Diagnostic::new(
                DiagCode::ConditionMismatch,
                &f.name,
                format!(
                    "{v} is produced when `{}` but consumed when `{}`",
                    cond_string(pc),
                    cond_string(cc)
                ),
            )
            .on(v.clone());
            if let Some(id) = stmt {
                d = d.at(*id);
            }
            diags.push(d);
        }
    }
    diags
}

/// Why a variable could be reconstructed: the chain of pure producers that
/// reaches values alive at the forget site.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForgettableWitness {
    pub var: Var,
    /// The statement producing the variable.
    pub producer: StmtId,
    /// Alive variables the chain anchors on.
    pub dependencies: Vec<Var>,
    /// All producer statements involved, in discovery order.
    pub chain: Vec<StmtId>,
}

struct ForgetAnalysis<'a> {
    f: &'a FunctionDef,
    effects: BTreeMap<FuncName, Effect>,
    producers: BTreeMap<Var, usize>,
    alive: BTreeSet<Var>,
    visiting: BTreeSet<Var>,
    done: BTreeMap<Var, Result<(), Diagnostic>>,
    deps: BTreeSet<Var>,
    chain: Vec<StmtId>,
}

impl<'a> ForgetAnalysis<'a> {
    fn new(f: &'a FunctionDef, program: &'a Program, at: usize) -> Self {
        let mut producers = BTreeMap::new();
        for (i, s) in f.body.iter().enumerate() {
            for v in s.written_vars() {
                producers.insert(v, i);
            }
        }
        // Alive at `at`: params and prior productions, minus prior
        // consumptions.
        let mut alive: BTreeSet<Var> = f
            .conserved_params
            .iter()
            .chain(&f.consumed_params)
            .map(|p| p.var.clone())
            .collect();
        for s in f.body.iter().take(at) {
            for v in s.written_vars() {
                alive.insert(v);
            }
            for v in &s.consumed {
                alive.remove(v);
            }
        }
        ForgetAnalysis {
            f,
            effects: effect_of(program),
            producers,
            alive,
            visiting: BTreeSet::new(),
            done: BTreeMap::new(),
            deps: BTreeSet::new(),
            chain: Vec::new(),
        }
    }

    fn fail(&self, var: &Var, message: String) -> Diagnostic {
        Diagnostic::new(DiagCode::NotForgettable, &self.f.name, message).on(var.clone())
    }

    fn recoverable(&mut self, var: &Var) -> Result<(), Diagnostic> {
        if let Some(r) = self.done.get(var) {
            return r.clone();
        }
        if !self.visiting.insert(var.clone()) {
            return Err(self.fail(var, format!("{var} participates in a dependency cycle")));
        }
        let result = self.recoverable_inner(var);
        self.visiting.remove(var);
        self.done.insert(var.clone(), result.clone());
        result
    }

    fn recoverable_inner(&mut self, var: &Var) -> Result<(), Diagnostic> {
        let Some(&pi) = self.producers.get(var) else {
            return Err(self.fail(
                var,
                format!("{var} has no producer statement (it enters as a parameter)"),
            ));
        };
        let s = &self.f.body[pi];
        let eff = op_effect(s, &self.effects);
        if eff != Effect::Pure {
            return Err(self.fail(
                var,
                format!(
                    "{var} is produced by `{}` with effect `{}`; only pure values can be reconstructed",
                    s.op.display_name(),
                    eff.letter()
                ),
            ));
        }
        self.chain.push(s.id);
        // Conserved operands and condition variables must be available.
        let mut needed: Vec<Var> = Vec::new();
        for a in &s.conserved {
            if let Atom::Var(v) = a {
                if v.kind == VarKind::Quantum {
                    needed.push(v.clone());
                }
            }
        }
        for l in &s.condition {
            if l.var.kind == VarKind::Quantum {
                needed.push(l.var.clone());
            }
        }
        // Sibling outputs feed the inverse too.
        for y in &s.produced {
            if y != var {
                needed.push(y.clone());
            }
        }
        for d in needed {
            if self.alive.contains(&d) {
                self.deps.insert(d);
            } else {
                self.recoverable(&d).map_err(|e| {
                    self.fail(
                        var,
                        format!("{var} needs {d}, which is dead and not recoverable: {}", e.message),
                    )
                })?;
            }
        }
        // Undoing the producer re-materializes what it consumed; those
        // values must vanish in turn.
        for c in &s.consumed {
            self.recoverable(c).map_err(|e| {
                self.fail(
                    var,
                    format!(
                        "undoing {var} re-materializes {c}, which is not recoverable: {}",
                        e.message
                    ),
                )
            })?;
        }
        Ok(())
    }
}

/// Decides whether `var` could be forgotten just before body position `at`,
/// returning a witness chain on success.
pub fn forgettable_at(
    f: &FunctionDef,
    program: &Program,
    var: &Var,
    at: usize,
) -> Result<ForgettableWitness, Diagnostic> {
    let mut a = ForgetAnalysis::new(f, program, at);
    let Some(&pi) = a.producers.get(var) else {
        return Err(a.fail(var, format!("{var} has no producer statement (it enters as a parameter)")));
    };
    a.recoverable(var)?;
    Ok(ForgettableWitness {
        var: var.clone(),
        producer: f.body[pi].id,
        dependencies: a.deps.into_iter().collect(),
        chain: a.chain,
    })
}

/// Checks every `forget` statement in the function.
pub fn check_well_forgotten(f: &FunctionDef, program: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for (i, s) in f.body.iter().enumerate() {
        if !matches!(s.op.target, OpTarget::Forget) {
            continue;
        }
        let var = &s.consumed[0];
        if var.kind == VarKind::Garbage {
            // Garbage is recoverable by construction (its producer pair).
            continue;
        }
        if let Err(d) = forgettable_at(f, program, var, i) {
            diags.push(d.at(s.id));
        }
    }
    diags
}

/// Full verification of one function: structure, conditions, forgets.
pub fn verify_function(f: &FunctionDef, program: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    if let Err(e) = structural_check(f, program) {
        diags.push(Diagnostic::new(DiagCode::Structural, &f.name, e.message));
        // Deeper checks assume structure; stop here for this function.
        return diags;
    }
    diags.extend(check_conditions(f, program));
    diags.extend(check_well_forgotten(f, program));
    diags
}

/// Verifies every function in the program.
pub fn verify_program(program: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for f in program.functions() {
        diags.extend(verify_function(f, program));
    }
    diags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{make_statement, Operation};

    fn stmt(
        f: &mut FunctionDef,
        p: &Program,
        out: &[&str],
        effect: Effect,
        op: Operation,
        cons: &[&str],
        used: &[&str],
        cond: &[(&str, bool)],
    ) -> Statement {
        let produced: Vec<Var> = out.iter().map(|n| Var::q(*n)).collect();
        let conserved: Vec<Atom> = cons.iter().map(|n| Atom::Var(Var::q(*n))).collect();
        let consumed: Vec<Var> = used.iter().map(|n| Var::q(*n)).collect();
        let condition: Vec<Literal> = cond
            .iter()
            .map(|(n, neg)| Literal { var: Var::q(*n), negated: *neg })
            .collect();
        make_statement(
            f.fresh_stmt_id(),
            alloc::vec![],
            produced,
            effect,
            op,
            conserved,
            consumed,
            condition,
            p,
        )
        .unwrap()
    }

    /// maj[a,b,c] with a forgettable scratch variable.
    fn maj_program() -> Program {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("maj"));
        for n in ["a", "b", "c"] {
            f.conserved_params.push(crate::ir::Param::quantum(n));
        }
        let s = [
            stmt(&mut f, &p, &["t"], Effect::Pure, Operation::plain(OpTarget::Dup), &["a"], &[], &[]),
            stmt(&mut f, &p, &["x"], Effect::Pure, Operation::plain(OpTarget::CX), &["b"], &["t"], &[]),
            stmt(&mut f, &p, &["r0"], Effect::Pure, Operation::plain(OpTarget::Dup), &["b"], &[], &[("x", true)]),
            stmt(&mut f, &p, &["r1"], Effect::Pure, Operation::plain(OpTarget::Dup), &["c"], &[], &[("x", false)]),
            stmt(&mut f, &p, &["r"], Effect::Pure, Operation::plain(OpTarget::Select), &["x"], &["r0", "r1"], &[]),
            stmt(&mut f, &p, &[], Effect::Pure, Operation::plain(OpTarget::Forget), &[], &["x"], &[]),
        ];
        f.body = s.into_iter().collect();
        f.returned = alloc::vec![Var::q("r")];
        p.add_function(f).unwrap();
        p
    }

    #[test]
    fn maj_verifies_cleanly() {
        let p = maj_program();
        let f = p.get(&FuncName::plain("maj")).unwrap();
        let diags = verify_function(f, &p);
        assert!(diags.is_empty(), "{diags:?}");
    }

    #[test]
    fn maj_forget_witness_chains_through_dup() {
        let p = maj_program();
        let f = p.get(&FuncName::plain("maj")).unwrap();
        let w = forgettable_at(f, &p, &Var::q("x"), 5).unwrap();
        assert_eq!(w.producer, StmtId(1));
        assert_eq!(w.chain, alloc::vec![StmtId(1), StmtId(0)]);
        assert!(w.dependencies.contains(&Var::q("a")));
        assert!(w.dependencies.contains(&Var::q("b")));
    }

    #[test]
    fn quantum_producer_blocks_forget() {
        // a :=p new_0; a' :=q H(a); :=p forget(a')
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("bad"));
        let s1 = stmt(&mut f, &p, &["a"], Effect::Pure, Operation::plain(OpTarget::New { one: false }), &[], &[], &[]);
        let s2 = stmt(&mut f, &p, &["a'"], Effect::Quantum, Operation::plain(OpTarget::H), &[], &["a"], &[]);
        let s3 = stmt(&mut f, &p, &[], Effect::Pure, Operation::plain(OpTarget::Forget), &[], &["a'"], &[]);
        f.body = alloc::vec![s1, s2, s3];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("bad")).unwrap();
        let diags = verify_function(f, &p);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, DiagCode::NotForgettable);
        assert!(diags[0].message.contains("effect `q`"), "{}", diags[0].message);
    }

    #[test]
    fn parameter_without_producer_blocks_forget() {
        // hard(x): y :=p f_inj[x]; :=p forget(x); > y  where f_inj is a call.
        let mut p = Program::new();
        let mut inj = FunctionDef::new(FuncName::plain("f_inj"));
        inj.conserved_params.push(crate::ir::Param::quantum("x"));
        let i1 = stmt(&mut inj, &p, &["y0"], Effect::Pure, Operation::plain(OpTarget::New { one: false }), &[], &[], &[]);
        let i2 = stmt(&mut inj, &p, &["y"], Effect::Pure, Operation::plain(OpTarget::CX), &["x"], &["y0"], &[]);
        inj.body = alloc::vec![i1, i2];
        inj.returned = alloc::vec![Var::q("y")];
        p.add_function(inj).unwrap();
        let mut f = FunctionDef::new(FuncName::plain("hard"));
        f.consumed_params.push(crate::ir::Param::quantum("x"));
        let s1 = stmt(&mut f, &p, &["y"], Effect::Pure, Operation::call("f_inj", Mode::PLAIN), &["x"], &[], &[]);
        let s2 = stmt(&mut f, &p, &[], Effect::Pure, Operation::plain(OpTarget::Forget), &[], &["x"], &[]);
        f.body = alloc::vec![s1, s2];
        f.returned = alloc::vec![Var::q("y")];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("hard")).unwrap();
        let diags = verify_function(f, &p);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, DiagCode::NotForgettable);
        assert!(diags[0].message.contains("parameter"), "{}", diags[0].message);
    }

    #[test]
    fn condition_mismatch_is_flagged() {
        // v produced under !x but consumed unconditionally.
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("m"));
        f.conserved_params.push(crate::ir::Param::quantum("b"));
        f.conserved_params.push(crate::ir::Param::quantum("x"));
        let s1 = stmt(&mut f, &p, &["v"], Effect::Pure, Operation::plain(OpTarget::Dup), &["b"], &[], &[("x", true)]);
        let s2 = stmt(&mut f, &p, &["w"], Effect::Pure, Operation::plain(OpTarget::X), &[], &["v"], &[]);
        f.body = alloc::vec![s1, s2];
        f.returned = alloc::vec![Var::q("w")];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("m")).unwrap();
        let diags = check_conditions(f, &p);
        assert!(diags.iter().any(|d| d.code == DiagCode::ConditionMismatch), "{diags:?}");
    }

    #[test]
    fn select_absorbs_its_control() {
        let p = maj_program();
        let f = p.get(&FuncName::plain("maj")).unwrap();
        // r0 is produced under !x and consumed by select input 0: balanced.
        assert!(check_conditions(f, &p).is_empty());
    }

    #[test]
    fn measurement_under_quantum_condition_is_rejected() {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("m"));
        f.conserved_params.push(crate::ir::Param::quantum("c"));
        f.consumed_params.push(crate::ir::Param::quantum("a"));
        let s = make_statement(
            f.fresh_stmt_id(),
            alloc::vec![Var::c("r")],
            alloc::vec![],
            Effect::Measure,
            Operation::plain(OpTarget::Measure),
            alloc::vec![],
            alloc::vec![Var::q("a")],
            alloc::vec![Literal::pos(Var::q("c"))],
            &p,
        )
        .unwrap();
        f.body = alloc::vec![s];
        f.returned = alloc::vec![Var::c("r")];
        p.add_function(f).unwrap();
        let f = p.get(&FuncName::plain("m")).unwrap();
        let diags = verify_function(f, &p);
        assert!(diags
            .iter()
            .any(|d| d.code == DiagCode::MeasureUnderQuantumCondition));
        assert!(diags
            .iter()
            .any(|d| d.code == DiagCode::ClassicalUnderQuantumCondition));
    }

    #[test]
    fn diagnostics_format_as_records() {
        let d = Diagnostic::new(
            DiagCode::NotForgettable,
            &FuncName::plain("bad"),
            "a' is produced by `H`",
        )
        .at(StmtId(2))
        .on(Var::q("a'"));
        assert_eq!(
            d.record(),
            "code=NotForgettable func=bad stmt=2 var=a' msg=\"a' is produced by `H`\""
        );
    }
}
