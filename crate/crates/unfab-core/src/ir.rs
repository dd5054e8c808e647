//! IR data model: variables, operations, statements, functions, programs.
//!
//! Invariants maintained by construction (see [`make_statement`] and
//! [`structural_check`]):
//!
//! * single assignment: a variable is produced by at most one statement;
//! * single consumption: a consumed variable is used up exactly once;
//! * conserved arguments are in scope and never consumed by the function;
//! * condition lists are sorted and duplicate-free;
//! * statement effects match the effect of their operation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

/// Effect level of a statement or function, ordered by strength.
///
/// `Pure` statements are classically explainable and invertible, `Quantum`
/// statements manipulate phases or superpositions, `Measure` destroys
/// superposition. Uncomputation is only synthesizable through `Pure`
/// producers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Effect {
    Pure,
    Quantum,
    Measure,
}

impl Effect {
    pub fn letter(self) -> char {
        match self {
            Effect::Pure => 'p',
            Effect::Quantum => 'q',
            Effect::Measure => 'm',
        }
    }
}

/// Kind of a variable. The text format marks classical variables with `$`
/// and garbage variables with `%`; quantum variables are bare identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    Quantum,
    Classical,
    Garbage,
}

/// A variable reference. Identity is (kind, name); widths are declared on
/// function parameters and inferred elsewhere.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub kind: VarKind,
    pub name: String,
}

impl Var {
    pub fn q(name: impl Into<String>) -> Self {
        Var { kind: VarKind::Quantum, name: name.into() }
    }
    pub fn c(name: impl Into<String>) -> Self {
        Var { kind: VarKind::Classical, name: name.into() }
    }
    pub fn g(name: impl Into<String>) -> Self {
        Var { kind: VarKind::Garbage, name: name.into() }
    }
    pub fn sigil(&self) -> &'static str {
        match self.kind {
            VarKind::Quantum => "",
            VarKind::Classical => "$",
            VarKind::Garbage => "%",
        }
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.sigil(), self.name)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.sigil(), self.name)
    }
}

/// A classical runtime value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CVal {
    Int(i64),
    Bool(bool),
}

impl CVal {
    pub fn as_int(self) -> Result<i64, IrError> {
        match self {
            CVal::Int(v) => Ok(v),
            CVal::Bool(_) => Err(IrError::new("expected integer, found bool")),
        }
    }
    pub fn as_bool(self) -> Result<bool, IrError> {
        match self {
            CVal::Bool(v) => Ok(v),
            CVal::Int(_) => Err(IrError::new("expected bool, found integer")),
        }
    }
}

impl fmt::Display for CVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CVal::Int(v) => write!(f, "{v}"),
            CVal::Bool(true) => write!(f, "true"),
            CVal::Bool(false) => write!(f, "false"),
        }
    }
}

/// Binary operators available in classical expressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CBinOp {
    Add,
    Sub,
    Mul,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CBinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CBinOp::Add => "+",
            CBinOp::Sub => "-",
            CBinOp::Mul => "*",
            CBinOp::Eq => "==",
            CBinOp::Ne => "!=",
            CBinOp::Lt => "<",
            CBinOp::Le => "<=",
            CBinOp::Gt => ">",
            CBinOp::Ge => ">=",
        }
    }
    pub fn is_comparison(self) -> bool {
        !matches!(self, CBinOp::Add | CBinOp::Sub | CBinOp::Mul)
    }
}

/// A pure classical expression over classical variables and literals.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CExpr {
    Int(i64),
    Bool(bool),
    Var(String),
    Bin(CBinOp, alloc::boxed::Box<CExpr>, alloc::boxed::Box<CExpr>),
}

impl CExpr {
    pub fn var(name: impl Into<String>) -> Self {
        CExpr::Var(name.into())
    }
    pub fn bin(op: CBinOp, a: CExpr, b: CExpr) -> Self {
        CExpr::Bin(op, alloc::boxed::Box::new(a), alloc::boxed::Box::new(b))
    }

    /// Collects the names of classical variables read by the expression.
    pub fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            CExpr::Int(_) | CExpr::Bool(_) => {}
            CExpr::Var(n) => {
                out.insert(n.clone());
            }
            CExpr::Bin(_, a, b) => {
                a.free_vars(out);
                b.free_vars(out);
            }
        }
    }

    /// Evaluates under an environment of classical values.
    pub fn eval(&self, env: &BTreeMap<String, CVal>) -> Result<CVal, IrError> {
        match self {
            CExpr::Int(v) => Ok(CVal::Int(*v)),
            CExpr::Bool(v) => Ok(CVal::Bool(*v)),
            CExpr::Var(n) => env
                .get(n)
                .copied()
                .ok_or_else(|| IrError::new(format!("classical variable ${n} is undefined"))),
            CExpr::Bin(op, a, b) => {
                let a = a.eval(env)?;
                let b = b.eval(env)?;
                match op {
                    CBinOp::Add => Ok(CVal::Int(
                        a.as_int()?.checked_add(b.as_int()?).ok_or_else(overflow)?,
                    )),
                    CBinOp::Sub => Ok(CVal::Int(
                        a.as_int()?.checked_sub(b.as_int()?).ok_or_else(overflow)?,
                    )),
                    CBinOp::Mul => Ok(CVal::Int(
                        a.as_int()?.checked_mul(b.as_int()?).ok_or_else(overflow)?,
                    )),
                    CBinOp::Eq => Ok(CVal::Bool(a == b)),
                    CBinOp::Ne => Ok(CVal::Bool(a != b)),
                    CBinOp::Lt => Ok(CVal::Bool(a.as_int()? < b.as_int()?)),
                    CBinOp::Le => Ok(CVal::Bool(a.as_int()? <= b.as_int()?)),
                    CBinOp::Gt => Ok(CVal::Bool(a.as_int()? > b.as_int()?)),
                    CBinOp::Ge => Ok(CVal::Bool(a.as_int()? >= b.as_int()?)),
                }
            }
        }
    }

    /// True if the expression contains no variables.
    pub fn is_const(&self) -> bool {
        match self {
            CExpr::Int(_) | CExpr::Bool(_) => true,
            CExpr::Var(_) => false,
            CExpr::Bin(_, a, b) => a.is_const() && b.is_const(),
        }
    }

    pub fn from_val(v: CVal) -> CExpr {
        match v {
            CVal::Int(i) => CExpr::Int(i),
            CVal::Bool(b) => CExpr::Bool(b),
        }
    }

    /// Substitutes classical variables by expressions.
    pub fn subst(&self, map: &BTreeMap<String, CExpr>) -> CExpr {
        match self {
            CExpr::Int(_) | CExpr::Bool(_) => self.clone(),
            CExpr::Var(n) => map.get(n).cloned().unwrap_or_else(|| self.clone()),
            CExpr::Bin(op, a, b) => CExpr::bin(*op, a.subst(map), b.subst(map)),
        }
    }
}

fn overflow() -> IrError {
    IrError::new("integer overflow in classical expression")
}

/// An atom usable in a conserved-argument position: a variable (quantum or
/// classical) or a classical integer literal.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Var(Var),
    Int(i64),
}

impl Atom {
    pub fn as_var(&self) -> Option<&Var> {
        match self {
            Atom::Var(v) => Some(v),
            Atom::Int(_) => None,
        }
    }
    pub fn to_cexpr(&self) -> Option<CExpr> {
        match self {
            Atom::Var(v) if v.kind == VarKind::Classical => Some(CExpr::var(v.name.clone())),
            Atom::Var(_) => None,
            Atom::Int(i) => Some(CExpr::Int(*i)),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Var(v) => write!(f, "{v}"),
            Atom::Int(i) => write!(f, "{i}"),
        }
    }
}

/// A possibly negated condition variable. The variable is either a width-1
/// quantum wire or a classical boolean.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub var: Var,
    pub negated: bool,
}

impl Literal {
    pub fn pos(var: Var) -> Self {
        Literal { var, negated: false }
    }
    pub fn neg(var: Var) -> Self {
        Literal { var, negated: true }
    }
    pub fn negate(&self) -> Self {
        Literal { var: self.var.clone(), negated: !self.negated }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "!{}", self.var)
        } else {
            write!(f, "{}", self.var)
        }
    }
}

/// A phase angle expressed as the rational multiple `num/den` of pi, kept in
/// lowest terms with a positive denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Angle {
    pub num: i64,
    pub den: i64,
}

impl Angle {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "angle denominator must be nonzero");
        let (mut n, mut d) = if den < 0 { (-num, -den) } else { (num, den) };
        let g = gcd(n.unsigned_abs(), d.unsigned_abs());
        if g > 1 {
            n /= g as i64;
            d /= g as i64;
        }
        Angle { num: n, den: d }
    }
    pub fn pi() -> Self {
        Angle { num: 1, den: 1 }
    }
    pub fn negated(self) -> Self {
        Angle::new(-self.num, self.den)
    }
    /// Value in radians.
    pub fn radians(self) -> f64 {
        core::f64::consts::PI * self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

impl fmt::Display for Angle {
    /// Canonical spelling used by both the IR text format and QASM output:
    /// `pi`, `-pi`, `pi/2`, `-pi/4`, `3*pi/4`, `0`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.num, self.den) {
            (0, _) => write!(f, "0"),
            (1, 1) => write!(f, "pi"),
            (-1, 1) => write!(f, "-pi"),
            (1, d) => write!(f, "pi/{d}"),
            (-1, d) => write!(f, "-pi/{d}"),
            (n, 1) => write!(f, "{n}*pi"),
            (n, d) => write!(f, "{n}*pi/{d}"),
        }
    }
}

/// What an operation does, before mode decoration.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpTarget {
    /// Allocates a fresh wire initialized to `|0>` or `|1>`; the adjoint
    /// releases a wire after asserting it is back in that state.
    New { one: bool },
    /// Bit flip on one consumed wire.
    X,
    /// Hadamard on one consumed wire.
    H,
    /// Controlled bit flip: conserved control, consumed target.
    CX,
    /// Global phase `e^{i*angle}`; applied under its condition literals this
    /// is the usual way to express Z-basis phase gates.
    Phase(Angle),
    /// Destructive measurement of one wire into a classical bit.
    Measure,
    /// Declarative discard: the verifier must prove the value is recoverable
    /// from live data, and uncomputation synthesis replaces the statement
    /// with an actual inverse circuit.
    Forget,
    /// Moves a value into the enclosing garbage-mode function's bin; the
    /// adjoint draws it back out.
    Dispose,
    /// Copies a conserved wire bundle onto a fresh one in the computational
    /// basis; the adjoint merges an equal copy back.
    Dup,
    /// Two-way multiplexer: conserved control, consumes both branch values,
    /// produces the selected one. The adjoint routes one value into two
    /// branch-dependent slots.
    Select,
    /// Concatenates `n` consumed bundles whose widths are the conserved
    /// classical atoms; the adjoint splits.
    Cat { n: usize },
    /// A pure classical computation producing one classical value.
    Classical(CExpr),
    /// A call to a user-defined function by base name.
    Call(String),
}

impl OpTarget {
    pub fn is_builtin(&self) -> bool {
        !matches!(self, OpTarget::Call(_))
    }

    /// Base effect of a builtin target (calls are resolved via the program).
    pub fn builtin_effect(&self) -> Option<Effect> {
        Some(match self {
            OpTarget::H | OpTarget::Phase(_) => Effect::Quantum,
            OpTarget::Measure => Effect::Measure,
            OpTarget::Call(_) => return None,
            _ => Effect::Pure,
        })
    }

    /// The spelled name used by the text format (modes are printed
    /// separately, except that inner adjoints of some builtins have
    /// dedicated names handled by the printer).
    pub fn base_name(&self) -> String {
        match self {
            OpTarget::New { one: false } => "new_0".to_string(),
            OpTarget::New { one: true } => "new_1".to_string(),
            OpTarget::X => "X".to_string(),
            OpTarget::H => "H".to_string(),
            OpTarget::CX => "CX".to_string(),
            OpTarget::Phase(a) => format!("phase_{a}"),
            OpTarget::Measure => "measure".to_string(),
            OpTarget::Forget => "forget".to_string(),
            OpTarget::Dispose => "dispose".to_string(),
            OpTarget::Dup => "dup".to_string(),
            OpTarget::Select => "select".to_string(),
            OpTarget::Cat { n } => format!("cat_{n}"),
            OpTarget::Classical(_) => "<classical>".to_string(),
            OpTarget::Call(name) => name.clone(),
        }
    }
}

/// Mode decoration of an operation or function name.
///
/// `outer_adjoint` is only meaningful together with `garbage`: `f^G^adj`
/// (the adjoint of the garbage variant, which consumes a bin) is a
/// different function from `f^adj^G` (the garbage variant of the adjoint,
/// which produces one). `classical_only` excludes every other flag.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode {
    pub inner_adjoint: bool,
    pub garbage: bool,
    pub outer_adjoint: bool,
    pub classical_only: bool,
}

impl Mode {
    pub const PLAIN: Mode = Mode {
        inner_adjoint: false,
        garbage: false,
        outer_adjoint: false,
        classical_only: false,
    };

    pub fn adjoint() -> Mode {
        Mode { inner_adjoint: true, ..Mode::PLAIN }
    }
    pub fn garbage() -> Mode {
        Mode { garbage: true, ..Mode::PLAIN }
    }
    pub fn classical_only() -> Mode {
        Mode { classical_only: true, ..Mode::PLAIN }
    }

    pub fn is_plain(self) -> bool {
        self == Mode::PLAIN
    }

    /// Whether this mode names a bin-producing variant (`^G` without a
    /// trailing adjoint).
    pub fn produces_bin(self) -> bool {
        self.garbage && !self.outer_adjoint
    }

    /// Whether this mode names a bin-consuming variant (`^G^adj`).
    pub fn consumes_bin(self) -> bool {
        self.garbage && self.outer_adjoint
    }

    /// The mode of the adjoint: flips the outer level when a garbage bin is
    /// involved, the inner level otherwise.
    pub fn adjointed(self) -> Mode {
        assert!(!self.classical_only, "classical-only variants have no adjoint");
        if self.garbage {
            Mode { outer_adjoint: !self.outer_adjoint, ..self }
        } else {
            Mode { inner_adjoint: !self.inner_adjoint, ..self }
        }
    }

    /// The mode of the garbage variant. Taking the garbage variant of an
    /// already garbage-decorated mode is idempotent on `^G` and undefined on
    /// `^G^adj` (erasure never needs it).
    pub fn garbaged(self) -> Mode {
        assert!(!self.classical_only, "classical-only variants have no garbage variant");
        assert!(!self.consumes_bin(), "bin-consuming variants cannot be garbage-decorated");
        Mode { garbage: true, ..self }
    }

    pub fn validate(self) -> Result<(), IrError> {
        if self.classical_only && (self.inner_adjoint || self.garbage || self.outer_adjoint) {
            return Err(IrError::new("classical-only mode excludes adjoint and garbage flags"));
        }
        if self.outer_adjoint && !self.garbage {
            return Err(IrError::new("outer adjoint flag requires garbage flag"));
        }
        Ok(())
    }

    /// Canonical suffix string: `^adj`, then `^G`, then `^adj`, or `^O`.
    pub fn suffix(self) -> String {
        if self.classical_only {
            return "^O".to_string();
        }
        let mut s = String::new();
        if self.inner_adjoint {
            s.push_str("^adj");
        }
        if self.garbage {
            s.push_str("^G");
        }
        if self.outer_adjoint {
            s.push_str("^adj");
        }
        s
    }
}

impl fmt::Debug for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mode({:?})", self.suffix())
    }
}

/// Fully qualified function name: base name plus mode decoration. Derived
/// variants are stored in the program under their decorated name.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FuncName {
    pub base: String,
    pub mode: Mode,
}

impl FuncName {
    pub fn plain(base: impl Into<String>) -> Self {
        FuncName { base: base.into(), mode: Mode::PLAIN }
    }
    pub fn with_mode(base: impl Into<String>, mode: Mode) -> Self {
        FuncName { base: base.into(), mode }
    }
}

impl fmt::Display for FuncName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.base, self.mode.suffix())
    }
}

impl fmt::Debug for FuncName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// An operation: a target decorated with a mode.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Operation {
    pub target: OpTarget,
    pub mode: Mode,
}

impl Operation {
    pub fn plain(target: OpTarget) -> Self {
        Operation { target, mode: Mode::PLAIN }
    }
    pub fn with_mode(target: OpTarget, mode: Mode) -> Self {
        Operation { target, mode }
    }
    pub fn call(name: impl Into<String>, mode: Mode) -> Self {
        Operation { target: OpTarget::Call(name.into()), mode }
    }

    /// The garbage-mode variant of this operation.
    pub fn garbaged(&self) -> Operation {
        Operation { target: self.target.clone(), mode: self.mode.garbaged() }
    }

    /// The operation implementing the inverse. Phase inverts its angle
    /// instead of carrying an adjoint flag; everything else flips the inner
    /// flag (or the outer one when a garbage bin is involved).
    pub fn adjointed(&self) -> Operation {
        if !self.mode.garbage {
            if let OpTarget::Phase(a) = &self.target {
                return Operation { target: OpTarget::Phase(a.negated()), mode: self.mode };
            }
        }
        Operation { target: self.target.clone(), mode: self.mode.adjointed() }
    }

    /// Canonical spelled name: inner adjoints of structural builtins use
    /// their dedicated alias (`undup`, `distribute`, `unnew_0`, `uncat_n`,
    /// `undispose`), others spell `^adj` explicitly, then `^G`, then the
    /// outer `^adj`.
    pub fn display_name(&self) -> String {
        if self.mode.classical_only {
            return format!("{}^O", self.target.base_name());
        }
        let alias = if self.mode.inner_adjoint {
            match &self.target {
                OpTarget::New { one: false } => Some("unnew_0".to_string()),
                OpTarget::New { one: true } => Some("unnew_1".to_string()),
                OpTarget::Dup => Some("undup".to_string()),
                OpTarget::Select => Some("distribute".to_string()),
                OpTarget::Cat { n } => Some(format!("uncat_{n}")),
                OpTarget::Dispose => Some("undispose".to_string()),
                _ => None,
            }
        } else {
            None
        };
        let mut s = match alias {
            Some(a) => a,
            None => {
                let mut b = self.target.base_name();
                if self.mode.inner_adjoint {
                    b.push_str("^adj");
                }
                b
            }
        };
        if self.mode.garbage {
            s.push_str("^G");
        }
        if self.mode.outer_adjoint {
            s.push_str("^adj");
        }
        s
    }

    /// True for `select` without inner adjoint (the two-into-one direction).
    pub fn is_select(&self) -> bool {
        matches!(self.target, OpTarget::Select) && !self.mode.inner_adjoint
    }
    /// True for `distribute` (`select^adj`, the one-into-two direction).
    pub fn is_distribute(&self) -> bool {
        matches!(self.target, OpTarget::Select) && self.mode.inner_adjoint
    }
    /// True for `dup` without inner adjoint.
    pub fn is_dup(&self) -> bool {
        matches!(self.target, OpTarget::Dup) && !self.mode.inner_adjoint
    }
    /// True for `undup` (`dup^adj`).
    pub fn is_undup(&self) -> bool {
        matches!(self.target, OpTarget::Dup) && self.mode.inner_adjoint
    }
}

/// Stable per-function statement identity, preserved by passes that reorder
/// or interleave statements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StmtId(pub u64);

/// Tag linking a compute statement with the uncompute statement synthesized
/// for it. Survives later passes as metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairTag(pub u64);

/// Role of a statement within a compute/uncompute pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PairRole {
    Compute,
    Uncompute,
}

/// One SSA statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Statement {
    pub id: StmtId,
    /// Classical outputs (`$` variables).
    pub produced_classical: Vec<Var>,
    /// Quantum and garbage outputs.
    pub produced: Vec<Var>,
    pub effect: Effect,
    pub op: Operation,
    /// Conserved arguments: quantum variables, classical variables, or
    /// integer literals, read but returned unchanged.
    pub conserved: Vec<Atom>,
    /// Consumed arguments: quantum or garbage variables, used up here.
    pub consumed: Vec<Var>,
    /// Conjunction of condition literals; empty means unconditional.
    /// Kept sorted and duplicate-free.
    pub condition: Vec<Literal>,
    /// Compute/uncompute pairing metadata.
    pub pair: Option<(PairTag, PairRole)>,
}

impl Statement {
    /// All variables read by the statement (conserved + consumed + condition
    /// + classical expression operands), without the produced ones.
    pub fn read_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for a in &self.conserved {
            if let Atom::Var(v) = a {
                out.push(v.clone());
            }
        }
        out.extend(self.consumed.iter().cloned());
        for l in &self.condition {
            out.push(l.var.clone());
        }
        if let OpTarget::Classical(e) = &self.op.target {
            let mut names = BTreeSet::new();
            e.free_vars(&mut names);
            for n in names {
                out.push(Var::c(n));
            }
        }
        out
    }

    /// All variables written by the statement.
    pub fn written_vars(&self) -> Vec<Var> {
        let mut out = self.produced_classical.clone();
        out.extend(self.produced.iter().cloned());
        out
    }

    /// Replaces reads of `from` by `to` in conserved, consumed, condition,
    /// and classical-expression positions. Produced variables are untouched.
    pub fn subst_read(&mut self, from: &Var, to: &Var) {
        for a in &mut self.conserved {
            if let Atom::Var(v) = a {
                if v == from {
                    *v = to.clone();
                }
            }
        }
        for v in &mut self.consumed {
            if v == from {
                *v = to.clone();
            }
        }
        for l in &mut self.condition {
            if &l.var == from {
                l.var = to.clone();
            }
        }
        if from.kind == VarKind::Classical {
            if let OpTarget::Classical(e) = &mut self.op.target {
                let mut map = BTreeMap::new();
                map.insert(from.name.clone(), CExpr::var(to.name.clone()));
                *e = e.subst(&map);
            }
        }
        normalize_condition(&mut self.condition);
    }
}

/// Sorts and deduplicates a condition literal list in place.
pub fn normalize_condition(cond: &mut Vec<Literal>) {
    cond.sort();
    cond.dedup();
}

/// Whether two condition lists are syntactically equivalent (both are kept
/// normalized, so this is plain equality).
pub fn same_condition(a: &[Literal], b: &[Literal]) -> bool {
    a == b
}

/// Direction of a garbage-mode function's bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinDir {
    /// The function produces a bin (plain `^G` variants).
    Out,
    /// The function consumes a bin (`^G^adj` variants).
    In,
}

/// A function parameter with an optional width expression. Classical
/// parameters never carry a width; quantum parameters default to width 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Param {
    pub var: Var,
    pub width: Option<CExpr>,
}

impl Param {
    pub fn quantum(name: impl Into<String>) -> Self {
        Param { var: Var::q(name), width: None }
    }
    pub fn classical(name: impl Into<String>) -> Self {
        Param { var: Var::c(name), width: None }
    }
    pub fn width_expr(&self) -> CExpr {
        self.width.clone().unwrap_or(CExpr::Int(1))
    }
}

/// A function definition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: FuncName,
    /// Conserved parameters in declaration order; classical and quantum may
    /// be mixed, as in `extract[$n, $i](a)`.
    pub conserved_params: Vec<Param>,
    /// Consumed parameters (quantum; plus the bin variable for `^G^adj`).
    pub consumed_params: Vec<Param>,
    pub body: Vec<Statement>,
    /// Returned variables in declaration order; classical and quantum may be
    /// mixed. For `^G` functions this includes the bin variable.
    pub returned: Vec<Var>,
    /// The garbage bin variable and its direction, for garbage variants.
    pub bin: Option<(Var, BinDir)>,
    next_stmt: u64,
    next_pair: u64,
}

impl FunctionDef {
    pub fn new(name: FuncName) -> Self {
        FunctionDef {
            name,
            conserved_params: Vec::new(),
            consumed_params: Vec::new(),
            body: Vec::new(),
            returned: Vec::new(),
            bin: None,
            next_stmt: 0,
            next_pair: 0,
        }
    }

    pub fn fresh_stmt_id(&mut self) -> StmtId {
        let id = StmtId(self.next_stmt);
        self.next_stmt += 1;
        id
    }

    pub fn fresh_pair_tag(&mut self) -> PairTag {
        let tag = PairTag(self.next_pair);
        self.next_pair += 1;
        tag
    }

    /// All variable names currently used anywhere in the function.
    pub fn used_names(&self) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        for p in self.conserved_params.iter().chain(&self.consumed_params) {
            names.insert(p.var.name.clone());
        }
        if let Some((b, _)) = &self.bin {
            names.insert(b.name.clone());
        }
        for s in &self.body {
            for v in s.written_vars() {
                names.insert(v.name);
            }
            for v in s.read_vars() {
                names.insert(v.name);
            }
        }
        for v in &self.returned {
            names.insert(v.name.clone());
        }
        names
    }

    /// A fresh variable name derived from `base` by appending ticks.
    pub fn fresh_ticked(&self, base: &str, used: &mut BTreeSet<String>) -> String {
        let mut name = format!("{base}'");
        while used.contains(&name) {
            name.push('\'');
        }
        used.insert(name.clone());
        name
    }

    /// A fresh variable name `prefix0`, `prefix1`, ...
    pub fn fresh_numbered(&self, prefix: &str, used: &mut BTreeSet<String>) -> String {
        let mut i = 0u64;
        loop {
            let name = format!("{prefix}{i}");
            if !used.contains(&name) {
                used.insert(name.clone());
                return name;
            }
            i += 1;
        }
    }

    /// Classical conserved parameters, in order.
    pub fn classical_params(&self) -> impl Iterator<Item = &Param> {
        self.conserved_params.iter().filter(|p| p.var.kind == VarKind::Classical)
    }

    /// Quantum conserved parameters, in order.
    pub fn quantum_conserved_params(&self) -> impl Iterator<Item = &Param> {
        self.conserved_params.iter().filter(|p| p.var.kind == VarKind::Quantum)
    }

    /// Returned classical variables, in order.
    pub fn returned_classical(&self) -> impl Iterator<Item = &Var> {
        self.returned.iter().filter(|v| v.kind == VarKind::Classical)
    }

    /// Returned quantum variables (excluding the bin), in order.
    pub fn returned_quantum(&self) -> impl Iterator<Item = &Var> {
        self.returned.iter().filter(|v| v.kind == VarKind::Quantum)
    }

    /// Position of a statement by id.
    pub fn position_of(&self, id: StmtId) -> Option<usize> {
        self.body.iter().position(|s| s.id == id)
    }
}

/// A whole program: an ordered collection of functions indexed by qualified
/// name. Iteration order is definition order, which keeps printing and
/// derived-variant placement deterministic.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    funcs: Vec<FunctionDef>,
    index: BTreeMap<FuncName, usize>,
}

impl Program {
    pub fn new() -> Self {
        Program::default()
    }

    pub fn add_function(&mut self, f: FunctionDef) -> Result<(), IrError> {
        if self.index.contains_key(&f.name) {
            return Err(IrError::new(format!("duplicate function definition: {}", f.name)));
        }
        self.index.insert(f.name.clone(), self.funcs.len());
        self.funcs.push(f);
        Ok(())
    }

    pub fn get(&self, name: &FuncName) -> Option<&FunctionDef> {
        self.index.get(name).map(|&i| &self.funcs[i])
    }

    pub fn get_mut(&mut self, name: &FuncName) -> Option<&mut FunctionDef> {
        self.index.get(name).copied().map(move |i| &mut self.funcs[i])
    }

    pub fn contains(&self, name: &FuncName) -> bool {
        self.index.contains_key(name)
    }

    pub fn functions(&self) -> impl Iterator<Item = &FunctionDef> {
        self.funcs.iter()
    }

    pub fn functions_mut(&mut self) -> impl Iterator<Item = &mut FunctionDef> {
        self.funcs.iter_mut()
    }

    pub fn names(&self) -> Vec<FuncName> {
        self.funcs.iter().map(|f| f.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    /// Replaces a function body wholesale, keeping its position.
    pub fn replace_function(&mut self, f: FunctionDef) -> Result<(), IrError> {
        match self.index.get(&f.name) {
            Some(&i) => {
                self.funcs[i] = f;
                Ok(())
            }
            None => Err(IrError::new(format!("no such function: {}", f.name))),
        }
    }
}

/// Error type for IR construction and validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrError {
    pub message: String,
}

impl IrError {
    pub fn new(message: impl Into<String>) -> Self {
        IrError { message: message.into() }
    }
}

impl fmt::Display for IrError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl core::error::Error for IrError {}

/// Expected operand shape of an operation, used for arity checking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    pub classical_out: usize,
    pub quantum_out: usize,
    pub garbage_out: usize,
    pub conserved: usize,
    pub consumed_quantum: usize,
    pub garbage_in: usize,
    pub effect: Effect,
}

/// Computes the operand shape of an operation. For calls this consults the
/// callee's *plain or stored* definition and applies the mode transform, so
/// derived variants need not exist yet.
pub fn signature_of(op: &Operation, program: &Program) -> Result<Signature, IrError> {
    op.mode.validate()?;
    if let OpTarget::Call(base) = &op.target {
        return call_signature(base, op.mode, program);
    }
    builtin_signature(op)
}

fn builtin_signature(op: &Operation) -> Result<Signature, IrError> {
    use OpTarget::*;
    let m = op.mode;
    if m.classical_only {
        return Err(IrError::new("builtins have no classical-only variant"));
    }
    // Shape of the plain builtin: (classical_out, quantum_out, conserved,
    // consumed). `quantum_out`/`consumed` swap under the inner adjoint.
    let (c_out, q_out, cons, q_in, effect) = match &op.target {
        New { .. } => (0, 1, 0, 0, Effect::Pure),
        X | H => (0, 1, 0, 1, if matches!(op.target, H) { Effect::Quantum } else { Effect::Pure }),
        CX => (0, 1, 1, 1, Effect::Pure),
        Phase(_) => (0, 0, 0, 0, Effect::Quantum),
        Measure => (1, 0, 0, 1, Effect::Measure),
        Forget => (0, 0, 0, 1, Effect::Pure),
        Dispose => (0, 0, 0, 1, Effect::Pure),
        Dup => (0, 1, 1, 0, Effect::Pure),
        Select => (0, 1, 1, 2, Effect::Pure),
        Cat { n } => (0, 1, *n, *n, Effect::Pure),
        Classical(_) => (1, 0, 0, 0, Effect::Pure),
        Call(_) => unreachable!(),
    };
    if m.inner_adjoint {
        match &op.target {
            Measure | Forget | Classical(_) => {
                return Err(IrError::new(format!(
                    "{} has no adjoint",
                    op.target.base_name()
                )))
            }
            _ => {}
        }
    }
    if m.garbage && effect != Effect::Pure {
        return Err(IrError::new(format!(
            "{} is not pure and has no garbage variant",
            op.target.base_name()
        )));
    }
    if m.garbage && matches!(op.target, Forget | Dispose | New { .. } if !m.inner_adjoint) {
        // new_v^G and forget^G/dispose^G never arise; new_v^adj^G does (an
        // uncomputed allocation whose assertion is deferred to the bin).
        if !matches!(op.target, New { .. }) {
            return Err(IrError::new(format!(
                "{} has no garbage variant",
                op.target.base_name()
            )));
        }
    }
    // Inner adjoint swaps produced and consumed quantum operands.
    let (q_out, q_in) = if m.inner_adjoint { (q_in, q_out) } else { (q_out, q_in) };
    let c_out = if m.inner_adjoint { 0 } else { c_out };
    // Garbage decoration adds one garbage operand; the outer adjoint flips
    // everything including that operand.
    let (mut sig_q_out, mut sig_q_in) = (q_out, q_in);
    let (mut g_out, mut g_in) = (0, 0);
    if m.garbage {
        g_out = 1;
    }
    if m.outer_adjoint {
        core::mem::swap(&mut sig_q_out, &mut sig_q_in);
        core::mem::swap(&mut g_out, &mut g_in);
    }
    Ok(Signature {
        classical_out: if m.outer_adjoint { 0 } else { c_out },
        quantum_out: sig_q_out,
        garbage_out: g_out,
        conserved: cons,
        consumed_quantum: sig_q_in,
        garbage_in: g_in,
        effect,
    })
}

fn call_signature(base: &str, mode: Mode, program: &Program) -> Result<Signature, IrError> {
    // Prefer an explicitly stored definition of the decorated variant.
    let decorated = FuncName::with_mode(base, mode);
    if let Some(f) = program.get(&decorated) {
        return Ok(def_signature(f, program));
    }
    // Otherwise derive the shape from the plain definition.
    let plain = program
        .get(&FuncName::plain(base))
        .ok_or_else(|| IrError::new(format!("call to undefined function {base}")))?;
    let mut sig = def_signature(plain, program);
    if mode.classical_only {
        return Ok(Signature {
            classical_out: sig.classical_out,
            quantum_out: 0,
            garbage_out: 0,
            conserved: plain.classical_params().count(),
            consumed_quantum: 0,
            garbage_in: 0,
            effect: Effect::Pure,
        });
    }
    if mode.inner_adjoint {
        core::mem::swap(&mut sig.quantum_out, &mut sig.consumed_quantum);
    }
    if mode.garbage {
        sig.garbage_out = 1;
        sig.effect = Effect::Pure;
    }
    if mode.outer_adjoint {
        core::mem::swap(&mut sig.quantum_out, &mut sig.consumed_quantum);
        core::mem::swap(&mut sig.garbage_out, &mut sig.garbage_in);
    }
    Ok(sig)
}

/// Operand shape of a function as seen by callers.
pub fn def_signature(f: &FunctionDef, _program: &Program) -> Signature {
    let garbage_out = f.returned.iter().filter(|v| v.kind == VarKind::Garbage).count();
    let garbage_in =
        f.consumed_params.iter().filter(|p| p.var.kind == VarKind::Garbage).count();
    Signature {
        classical_out: f.returned_classical().count(),
        quantum_out: f.returned_quantum().count(),
        garbage_out,
        conserved: f.conserved_params.len(),
        consumed_quantum: f.consumed_params.len() - garbage_in,
        garbage_in,
        effect: Effect::Pure, // refined by effect_of
    }
}

/// Builds a statement after checking operand arity and kinds against the
/// operation's signature. The effect is taken from the caller and checked
/// against the operation where it is statically known.
#[allow(clippy::too_many_arguments)]
pub fn make_statement(
    id: StmtId,
    produced_classical: Vec<Var>,
    produced: Vec<Var>,
    effect: Effect,
    op: Operation,
    conserved: Vec<Atom>,
    consumed: Vec<Var>,
    mut condition: Vec<Literal>,
    program: &Program,
) -> Result<Statement, IrError> {
    let sig = signature_of(&op, program)?;
    let name = op.target.base_name();
    let q_produced = produced.iter().filter(|v| v.kind == VarKind::Quantum).count();
    let g_produced = produced.iter().filter(|v| v.kind == VarKind::Garbage).count();
    let q_consumed = consumed.iter().filter(|v| v.kind == VarKind::Quantum).count();
    let g_consumed = consumed.iter().filter(|v| v.kind == VarKind::Garbage).count();
    if produced.iter().any(|v| v.kind == VarKind::Classical) {
        return Err(IrError::new("classical outputs belong in the classical output list"));
    }
    if produced_classical.iter().any(|v| v.kind != VarKind::Classical) {
        return Err(IrError::new("classical output list holds non-classical variable"));
    }
    if produced_classical.len() != sig.classical_out {
        return Err(IrError::new(format!(
            "{name}: expected {} classical outputs, found {}",
            sig.classical_out,
            produced_classical.len()
        )));
    }
    if q_produced != sig.quantum_out || g_produced != sig.garbage_out {
        return Err(IrError::new(format!(
            "{name}: expected {} quantum + {} garbage outputs, found {} + {}",
            sig.quantum_out, sig.garbage_out, q_produced, g_produced
        )));
    }
    if conserved.len() != sig.conserved {
        return Err(IrError::new(format!(
            "{name}: expected {} conserved arguments, found {}",
            sig.conserved,
            conserved.len()
        )));
    }
    if q_consumed != sig.consumed_quantum || g_consumed != sig.garbage_in {
        return Err(IrError::new(format!(
            "{name}: expected {} quantum + {} garbage consumed arguments, found {} + {}",
            sig.consumed_quantum, sig.garbage_in, q_consumed, g_consumed
        )));
    }
    // Forget and dispose accept a quantum or a garbage operand; everything
    // else takes garbage operands only in the dedicated bin position (last).
    match op.target {
        OpTarget::Forget => {
            if consumed.len() != 1 {
                return Err(IrError::new("forget consumes exactly one variable"));
            }
        }
        _ => {
            for (i, v) in consumed.iter().enumerate() {
                if v.kind == VarKind::Garbage && i + 1 != consumed.len() && g_consumed == 1 {
                    return Err(IrError::new(format!(
                        "{name}: garbage operand must come last"
                    )));
                }
                let _ = i;
            }
        }
    }
    if effect < sig.effect {
        return Err(IrError::new(format!(
            "{name}: declared effect {} is weaker than the operation's effect {}",
            effect.letter(),
            sig.effect.letter()
        )));
    }
    normalize_condition(&mut condition);
    for l in &condition {
        match l.var.kind {
            VarKind::Quantum | VarKind::Classical => {}
            VarKind::Garbage => {
                return Err(IrError::new("garbage variables cannot appear in conditions"))
            }
        }
    }
    Ok(Statement {
        id,
        produced_classical,
        produced,
        effect,
        op,
        conserved,
        consumed,
        condition,
        pair: None,
    })
}

/// Structural well-formedness of one function within a program: single
/// assignment, single consumption, scope of conserved arguments and
/// condition literals, absence of leaks at function exit, and operand
/// arity against each operation's signature.
pub fn structural_check(f: &FunctionDef, program: &Program) -> Result<(), IrError> {
    let err = |m: String| Err(IrError::new(format!("{}: {m}", f.name)));
    let mut defined: BTreeSet<Var> = BTreeSet::new();
    let mut conserved_here: BTreeSet<Var> = BTreeSet::new();
    let mut consumed: BTreeSet<Var> = BTreeSet::new();
    for p in &f.conserved_params {
        if p.var.kind == VarKind::Garbage {
            return err("garbage variables cannot be conserved parameters".into());
        }
        if !defined.insert(p.var.clone()) {
            return err(format!("duplicate parameter {}", p.var));
        }
        conserved_here.insert(p.var.clone());
    }
    for p in &f.consumed_params {
        if p.var.kind == VarKind::Classical {
            return err("classical parameters must be conserved".into());
        }
        if !defined.insert(p.var.clone()) {
            return err(format!("duplicate parameter {}", p.var));
        }
    }
    match (&f.bin, f.name.mode.produces_bin(), f.name.mode.consumes_bin()) {
        (Some((b, BinDir::Out)), true, _) => {
            if b.kind != VarKind::Garbage {
                return err("bin variable must be a garbage variable".into());
            }
            if !f.returned.contains(b) {
                return err("bin-producing function must return its bin".into());
            }
        }
        (Some((b, BinDir::In)), _, true) => {
            if b.kind != VarKind::Garbage {
                return err("bin variable must be a garbage variable".into());
            }
            if !f.consumed_params.iter().any(|p| &p.var == b) {
                return err("bin-consuming function must take its bin as a consumed parameter".into());
            }
        }
        (None, false, false) => {}
        _ => return err("bin direction does not match function mode".into()),
    }
    let bin_var = f.bin.as_ref().map(|(b, _)| b.clone());
    let mut seen_ids = BTreeSet::new();
    for s in &f.body {
        if !seen_ids.insert(s.id) {
            return err(format!("duplicate statement id {:?}", s.id));
        }
        // Reads must be in scope and not consumed; the bin variable never
        // appears in statements (dispose/undispose reference it implicitly).
        for v in s.read_vars() {
            if Some(&v) == bin_var.as_ref() {
                return err(format!("bin variable {v} may not be referenced directly"));
            }
            if v.kind == VarKind::Classical {
                if !defined.contains(&v) {
                    return err(format!("use of undefined classical variable {v}"));
                }
                continue;
            }
            if !defined.contains(&v) {
                return err(format!("use of undefined variable {v}"));
            }
            if consumed.contains(&v) {
                return err(format!("use of already consumed variable {v}"));
            }
        }
        for a in &s.conserved {
            if let Atom::Var(v) = a {
                if v.kind == VarKind::Garbage {
                    return err("garbage variables cannot be conserved arguments".into());
                }
            }
        }
        for v in &s.consumed {
            if conserved_here.contains(v) {
                return err(format!("conserved parameter {v} cannot be consumed"));
            }
            consumed.insert(v.clone());
        }
        for l in &s.condition {
            if l.var.kind == VarKind::Garbage {
                return err("garbage variable in condition".into());
            }
        }
        {
            let mut sorted = s.condition.clone();
            normalize_condition(&mut sorted);
            if sorted != s.condition {
                return err("condition list is not normalized".into());
            }
        }
        for v in s.written_vars() {
            if Some(&v) == bin_var.as_ref() {
                return err(format!("bin variable {v} may not be produced by a statement"));
            }
            if !defined.insert(v.clone()) {
                return err(format!("second assignment to {v}"));
            }
        }
        // Re-check operand shape; passes construct statements directly.
        let sig = signature_of(&s.op, program)
            .map_err(|e| IrError::new(format!("{}: {}", f.name, e.message)))?;
        let q_p = s.produced.iter().filter(|v| v.kind == VarKind::Quantum).count();
        let g_p = s.produced.iter().filter(|v| v.kind == VarKind::Garbage).count();
        let q_c = s.consumed.iter().filter(|v| v.kind == VarKind::Quantum).count();
        let g_c = s.consumed.iter().filter(|v| v.kind == VarKind::Garbage).count();
        let forget_like = matches!(s.op.target, OpTarget::Forget)
            || (matches!(s.op.target, OpTarget::Dispose) && !s.op.mode.inner_adjoint);
        let shape_ok = if forget_like {
            s.consumed.len() == 1 && s.produced.is_empty() && s.produced_classical.is_empty()
        } else {
            s.produced_classical.len() == sig.classical_out
                && q_p == sig.quantum_out
                && g_p == sig.garbage_out
                && s.conserved.len() == sig.conserved
                && q_c == sig.consumed_quantum
                && g_c == sig.garbage_in
        };
        if !shape_ok {
            return err(format!("operand shape mismatch for {}", s.op.target.base_name()));
        }
        if matches!(s.op.target, OpTarget::Dispose) && !s.op.mode.inner_adjoint {
            if f.bin.as_ref().map(|(_, d)| *d) != Some(BinDir::Out) {
                return err("dispose outside a bin-producing function".into());
            }
        }
        if matches!(s.op.target, OpTarget::Dispose) && s.op.mode.inner_adjoint {
            if f.bin.as_ref().map(|(_, d)| *d) != Some(BinDir::In) {
                return err("undispose outside a bin-consuming function".into());
            }
        }
        if s.effect < sig.effect {
            return err(format!(
                "statement effect {} is weaker than operation effect {}",
                s.effect.letter(),
                sig.effect.letter()
            ));
        }
    }
    // Returns: defined, unconsumed, not conserved quantum parameters.
    let mut returned_seen = BTreeSet::new();
    for v in &f.returned {
        if Some(v) == bin_var.as_ref() {
            continue;
        }
        if !returned_seen.insert(v.clone()) {
            return err(format!("variable {v} returned twice"));
        }
        if !defined.contains(v) {
            return err(format!("returned variable {v} is undefined"));
        }
        if v.kind != VarKind::Classical {
            if consumed.contains(v) {
                return err(format!("returned variable {v} was consumed"));
            }
            if conserved_here.contains(v) {
                return err(format!("conserved parameter {v} cannot be returned"));
            }
        }
    }
    // Leak check: every live quantum or garbage variable at exit must be
    // returned; consumed parameters must actually have been consumed unless
    // they are the incoming bin.
    for v in defined.iter() {
        if v.kind == VarKind::Classical {
            continue;
        }
        if consumed.contains(v) || conserved_here.contains(v) {
            continue;
        }
        if f.returned.contains(v) {
            continue;
        }
        return err(format!("variable {v} is live at function exit but not returned"));
    }
    Ok(())
}

/// Computes the effect of every function by fixpoint over call edges,
/// starting from `Pure` (recursion-safe since effects only grow).
pub fn effect_of(program: &Program) -> BTreeMap<FuncName, Effect> {
    let mut effects: BTreeMap<FuncName, Effect> = program
        .names()
        .into_iter()
        .map(|n| (n, Effect::Pure))
        .collect();
    loop {
        let mut changed = false;
        for f in program.functions() {
            let mut e = Effect::Pure;
            for s in &f.body {
                let se = match &s.op.target {
                    OpTarget::Call(base) => {
                        if s.op.mode.classical_only || s.op.mode.garbage {
                            // Classical and garbage variants are pure by
                            // construction (erasure rejects non-pure input).
                            Effect::Pure
                        } else {
                            let plain = FuncName::plain(base.clone());
                            let inner = FuncName::with_mode(
                                base.clone(),
                                Mode { inner_adjoint: s.op.mode.inner_adjoint, ..Mode::PLAIN },
                            );
                            effects
                                .get(&inner)
                                .or_else(|| effects.get(&plain))
                                .copied()
                                .unwrap_or(Effect::Pure)
                        }
                    }
                    t => t.builtin_effect().unwrap_or(Effect::Pure),
                };
                e = e.max(se);
            }
            let entry = effects.get_mut(&f.name).expect("function is indexed");
            if *entry != e {
                // Effects only grow across iterations, so take the max to
                // keep the fixpoint monotone even for recursive programs.
                let merged = (*entry).max(e);
                if *entry != merged {
                    *entry = merged;
                    changed = true;
                }
            }
        }
        if !changed {
            return effects;
        }
    }
}

/// Convenience: the effect of a single function in a program.
pub fn function_effect(program: &Program, name: &FuncName) -> Effect {
    effect_of(program).get(name).copied().unwrap_or(Effect::Pure)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dup_stmt(f: &mut FunctionDef, program: &Program, out: &str, src: &str) -> Statement {
        make_statement(
            f.fresh_stmt_id(),
            vec![],
            vec![Var::q(out)],
            Effect::Pure,
            Operation::plain(OpTarget::Dup),
            vec![Atom::Var(Var::q(src))],
            vec![],
            vec![],
            program,
        )
        .unwrap()
    }

    #[test]
    fn effect_order_is_pure_quantum_measure() {
        assert!(Effect::Pure < Effect::Quantum);
        assert!(Effect::Quantum < Effect::Measure);
    }

    #[test]
    fn angle_is_reduced_and_printed_canonically() {
        assert_eq!(Angle::new(2, 4), Angle::new(1, 2));
        assert_eq!(Angle::new(1, -2), Angle::new(-1, 2));
        assert_eq!(alloc::format!("{}", Angle::new(1, 1)), "pi");
        assert_eq!(alloc::format!("{}", Angle::new(-1, 4)), "-pi/4");
        assert_eq!(alloc::format!("{}", Angle::new(3, 4)), "3*pi/4");
        assert_eq!(alloc::format!("{}", Angle::new(0, 7)), "0");
        assert_eq!(alloc::format!("{}", Angle::new(2, 1)), "2*pi");
    }

    #[test]
    fn mode_adjoint_is_involutive() {
        let modes = [
            Mode::PLAIN,
            Mode::adjoint(),
            Mode::garbage(),
            Mode { inner_adjoint: true, garbage: true, ..Mode::PLAIN },
            Mode { garbage: true, outer_adjoint: true, ..Mode::PLAIN },
        ];
        for m in modes {
            assert_eq!(m.adjointed().adjointed(), m, "{m:?}");
        }
    }

    #[test]
    fn mode_suffixes() {
        assert_eq!(Mode::PLAIN.suffix(), "");
        assert_eq!(Mode::adjoint().suffix(), "^adj");
        assert_eq!(Mode::garbage().suffix(), "^G");
        assert_eq!(
            Mode { inner_adjoint: true, garbage: true, ..Mode::PLAIN }.suffix(),
            "^adj^G"
        );
        assert_eq!(
            Mode { garbage: true, outer_adjoint: true, ..Mode::PLAIN }.suffix(),
            "^G^adj"
        );
        assert_eq!(Mode::classical_only().suffix(), "^O");
    }

    #[test]
    fn garbage_adjoint_differs_from_adjoint_garbage() {
        let g_then_adj = Mode::garbage().adjointed();
        let adj_then_g = Mode::adjoint().garbaged();
        assert_ne!(g_then_adj, adj_then_g);
        assert!(g_then_adj.consumes_bin());
        assert!(adj_then_g.produces_bin());
    }

    #[test]
    fn operation_adjoint_is_involutive_and_spelled_canonically() {
        let ops = [
            Operation::plain(OpTarget::X),
            Operation::plain(OpTarget::H),
            Operation::plain(OpTarget::CX),
            Operation::plain(OpTarget::Dup),
            Operation::plain(OpTarget::Select),
            Operation::plain(OpTarget::New { one: false }),
            Operation::plain(OpTarget::Cat { n: 3 }),
            Operation::plain(OpTarget::Phase(Angle::new(1, 4))),
            Operation::with_mode(OpTarget::Dup, Mode::garbage()),
            Operation::call("f", Mode::PLAIN),
            Operation::call("f", Mode::garbage()),
        ];
        for op in ops {
            assert_eq!(op.adjointed().adjointed(), op, "{}", op.display_name());
        }
        assert_eq!(Operation::plain(OpTarget::Dup).adjointed().display_name(), "undup");
        assert_eq!(Operation::plain(OpTarget::Select).adjointed().display_name(), "distribute");
        assert_eq!(Operation::plain(OpTarget::CX).adjointed().display_name(), "CX^adj");
        assert_eq!(
            Operation::plain(OpTarget::Phase(Angle::pi())).adjointed().display_name(),
            "phase_-pi"
        );
        assert_eq!(
            Operation::with_mode(OpTarget::Dup, Mode::garbage()).adjointed().display_name(),
            "dup^G^adj"
        );
        assert_eq!(
            Operation::with_mode(
                OpTarget::Dup,
                Mode { inner_adjoint: true, garbage: true, ..Mode::PLAIN }
            )
            .display_name(),
            "undup^G"
        );
    }

    #[test]
    fn cexpr_eval_and_subst() {
        let e = CExpr::bin(
            CBinOp::Sub,
            CExpr::bin(CBinOp::Sub, CExpr::var("n"), CExpr::Int(1)),
            CExpr::var("i"),
        );
        let mut env = BTreeMap::new();
        env.insert("n".to_string(), CVal::Int(5));
        env.insert("i".to_string(), CVal::Int(2));
        assert_eq!(e.eval(&env).unwrap(), CVal::Int(2));
        let mut map = BTreeMap::new();
        map.insert("n".to_string(), CExpr::Int(4));
        let e2 = e.subst(&map);
        env.remove("n");
        assert_eq!(e2.eval(&env).unwrap(), CVal::Int(1));
    }

    #[test]
    fn builtin_signatures() {
        let p = Program::new();
        let sig = signature_of(&Operation::plain(OpTarget::Select), &p).unwrap();
        assert_eq!((sig.quantum_out, sig.conserved, sig.consumed_quantum), (1, 1, 2));
        let dist =
            signature_of(&Operation::with_mode(OpTarget::Select, Mode::adjoint()), &p).unwrap();
        assert_eq!((dist.quantum_out, dist.conserved, dist.consumed_quantum), (2, 1, 1));
        let undup_g = signature_of(
            &Operation::with_mode(
                OpTarget::Dup,
                Mode { inner_adjoint: true, garbage: true, ..Mode::PLAIN },
            ),
            &p,
        )
        .unwrap();
        assert_eq!(
            (undup_g.quantum_out, undup_g.garbage_out, undup_g.conserved, undup_g.consumed_quantum),
            (0, 1, 1, 1)
        );
        let dup_g_adj = signature_of(
            &Operation::with_mode(
                OpTarget::Dup,
                Mode { garbage: true, outer_adjoint: true, ..Mode::PLAIN },
            ),
            &p,
        )
        .unwrap();
        assert_eq!(
            (
                dup_g_adj.quantum_out,
                dup_g_adj.garbage_in,
                dup_g_adj.conserved,
                dup_g_adj.consumed_quantum
            ),
            (0, 1, 1, 1)
        );
    }

    #[test]
    fn statement_construction_checks_arity() {
        let p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("t"));
        let s = dup_stmt(&mut f, &p, "b", "a");
        assert_eq!(s.produced, vec![Var::q("b")]);
        let bad = make_statement(
            f.fresh_stmt_id(),
            vec![],
            vec![Var::q("b"), Var::q("c")],
            Effect::Pure,
            Operation::plain(OpTarget::Dup),
            vec![Atom::Var(Var::q("a"))],
            vec![],
            vec![],
            &p,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn structural_check_catches_double_consume() {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("f"));
        f.consumed_params.push(Param::quantum("a"));
        let s1 = make_statement(
            f.fresh_stmt_id(),
            vec![],
            vec![Var::q("b")],
            Effect::Pure,
            Operation::plain(OpTarget::X),
            vec![],
            vec![Var::q("a")],
            vec![],
            &p,
        )
        .unwrap();
        let mut s2 = make_statement(
            f.fresh_stmt_id(),
            vec![],
            vec![Var::q("c")],
            Effect::Pure,
            Operation::plain(OpTarget::X),
            vec![],
            vec![Var::q("a")],
            vec![],
            &p,
        )
        .unwrap();
        f.body.push(s1);
        f.returned.push(Var::q("b"));
        let ok_fn = f.clone();
        p.add_function(ok_fn).unwrap();
        assert!(structural_check(p.get(&FuncName::plain("f")).unwrap(), &p).is_ok());
        s2.consumed = vec![Var::q("a")];
        let mut bad = p.get(&FuncName::plain("f")).unwrap().clone();
        bad.body.push(s2);
        bad.returned.push(Var::q("c"));
        assert!(structural_check(&bad, &p).is_err());
    }

    #[test]
    fn structural_check_catches_leak() {
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("leaky"));
        let s = make_statement(
            f.fresh_stmt_id(),
            vec![],
            vec![Var::q("a")],
            Effect::Pure,
            Operation::plain(OpTarget::New { one: false }),
            vec![],
            vec![],
            vec![],
            &p,
        )
        .unwrap();
        f.body.push(s);
        p.add_function(f).unwrap();
        assert!(structural_check(p.get(&FuncName::plain("leaky")).unwrap(), &p).is_err());
    }

    #[test]
    fn effects_fixpoint_handles_recursion() {
        // f calls itself and uses H: effect must be Quantum, not diverge.
        let mut p = Program::new();
        let mut f = FunctionDef::new(FuncName::plain("loop"));
        f.consumed_params.push(Param::quantum("a"));
        let s1 = make_statement(
            f.fresh_stmt_id(),
            vec![],
            vec![Var::q("b")],
            Effect::Quantum,
            Operation::plain(OpTarget::H),
            vec![],
            vec![Var::q("a")],
            vec![],
            &p,
        )
        .unwrap();
        f.body.push(s1);
        f.returned.push(Var::q("b"));
        p.add_function(f).unwrap();
        let effects = effect_of(&p);
        assert_eq!(effects[&FuncName::plain("loop")], Effect::Quantum);
    }
}
