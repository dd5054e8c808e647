//! Reference statevector semantics for IR programs.
//!
//! The simulator executes function bodies directly (no lowering involved) so
//! it can serve as an independent oracle for every transformation pass:
//!
//! * `forget` statements are executed by [`forget_oracle`]: the discarded
//!   wires must carry a value that is a function of the surviving basis
//!   labels, otherwise simulation fails with a conflict (failure is a value,
//!   not a panic).
//! * `dup`/`select`/`distribute` use shared wire allocation; branch-dependent
//!   values written under complementary conditions land on the same physical
//!   wires, which is what makes the multiplexer a no-op at runtime.
//! * garbage bins are bookkeeping: `dispose` moves wires into the enclosing
//!   bin without touching the state, `undispose` draws them back out in
//!   reverse order.
//! * calls to derived variants (`f^adj`, `f^G`, ...) that are not defined in
//!   the program are materialized on demand, so source programs that call
//!   adjoints of forget-containing functions still have semantics.
//!
//! Wire budget, seed, and tolerance come from [`SimConfig`]. All randomness
//! (measurement sampling) is drawn from a seeded ChaCha stream, so runs are
//! reproducible bit for bit.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::derive;
use crate::ir::{
    Atom, BinDir, CVal, FuncName, FunctionDef, OpTarget, Program, Statement, Var, VarKind,
};

/// Simulation parameters.
#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    /// Hard cap on simultaneously live wires.
    pub max_qubits: usize,
    /// Seed for measurement sampling.
    pub seed: u64,
    /// Numeric tolerance for zero checks and state comparison.
    pub tolerance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { max_qubits: 20, seed: 0, tolerance: 1e-9 }
    }
}

/// Simulation failure.
#[derive(Clone, Debug, PartialEq)]
pub enum SimError {
    /// A wire released by `unnew`/`undup` was not in the asserted state.
    UnnewViolation { context: String, residual: f64 },
    /// The wire budget was exceeded.
    BudgetExceeded { limit: usize },
    /// A forgotten value was not determined by the surviving wires.
    ForgetConflict { context: String },
    /// Operand shapes or kinds did not line up (malformed input program).
    Shape(String),
    /// The program lacks a function or a variant could not be materialized.
    Missing(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::UnnewViolation { context, residual } => {
                write!(f, "released wire not in its asserted state ({context}, residual probability {residual:.3e})")
            }
            SimError::BudgetExceeded { limit } => {
                write!(f, "wire budget exceeded (limit {limit})")
            }
            SimError::ForgetConflict { context } => {
                write!(f, "forgotten value is not determined by surviving wires ({context})")
            }
            SimError::Shape(m) => write!(f, "shape error: {m}"),
            SimError::Missing(m) => write!(f, "missing function: {m}"),
        }
    }
}

impl core::error::Error for SimError {}

/// A labeled statevector. `labels[0]` is the most significant bit of the
/// amplitude index: `amps[i]` is the amplitude of the basis state whose
/// bit `k` (reading labels left to right) is `(i >> (n-1-k)) & 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub labels: Vec<String>,
    pub amps: Vec<Complex64>,
}

impl StateVector {
    pub fn new(labels: Vec<String>, amps: Vec<Complex64>) -> Self {
        assert_eq!(amps.len(), 1usize << labels.len(), "amplitude count mismatch");
        StateVector { labels, amps }
    }

    /// The computational basis state with the given bits (one per label).
    pub fn basis(labels: Vec<String>, bits: &[bool]) -> Self {
        assert_eq!(labels.len(), bits.len());
        let n = labels.len();
        let mut idx = 0usize;
        for (k, b) in bits.iter().enumerate() {
            if *b {
                idx |= 1 << (n - 1 - k);
            }
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[idx] = Complex64::new(1.0, 0.0);
        StateVector { labels, amps }
    }

    /// A reproducible pseudo-random normalized state.
    pub fn random(labels: Vec<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1usize << labels.len();
        let mut amps = Vec::with_capacity(n);
        for _ in 0..n {
            let (a, b) = gaussian_pair(&mut rng);
            amps.push(Complex64::new(a, b));
        }
        let mut s = StateVector { labels, amps };
        s.normalize();
        s
    }

    pub fn num_wires(&self) -> usize {
        self.labels.len()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>())
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for a in &mut self.amps {
                *a /= n;
            }
        }
    }

    /// Returns an equal state with labels sorted ascending.
    pub fn sorted(&self) -> StateVector {
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        order.sort_by(|&a, &b| self.labels[a].cmp(&self.labels[b]));
        self.permuted(&order)
    }

    /// Reorders wires: `order[k]` is the old position of the new position
    /// `k`.
    pub fn permuted(&self, order: &[usize]) -> StateVector {
        let n = self.labels.len();
        assert_eq!(order.len(), n);
        let labels: Vec<String> = order.iter().map(|&i| self.labels[i].clone()).collect();
        let mut amps = vec![Complex64::new(0.0, 0.0); self.amps.len()];
        for (old_idx, a) in self.amps.iter().enumerate() {
            let mut new_idx = 0usize;
            for (new_pos, &old_pos) in order.iter().enumerate() {
                let bit = (old_idx >> (n - 1 - old_pos)) & 1;
                new_idx |= bit << (n - 1 - new_pos);
            }
            amps[new_idx] = *a;
        }
        StateVector { labels, amps }
    }

    /// Nonzero amplitudes as (bitstring, amplitude), in index order.
    pub fn support(&self, tol: f64) -> Vec<(String, Complex64)> {
        let n = self.labels.len();
        let mut out = Vec::new();
        for (i, a) in self.amps.iter().enumerate() {
            if a.norm_sqr() > tol * tol {
                let bits: String =
                    (0..n).map(|k| if (i >> (n - 1 - k)) & 1 == 1 { '1' } else { '0' }).collect();
                out.push((bits, *a));
            }
        }
        out
    }
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Box-Muller on two uniform samples; u1 is kept away from zero.
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / 9007199254740992.0);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
    let r = libm::sqrt(-2.0 * libm::log(u1));
    let t = 2.0 * core::f64::consts::PI * u2;
    (r * libm::cos(t), r * libm::sin(t))
}

/// Whether two states are equal up to a global phase: the label sets must
/// match and the normalized overlap must satisfy `|<a|b>| >= 1 - tol`.
pub fn equiv_up_to_phase(a: &StateVector, b: &StateVector, tol: f64) -> bool {
    let a = a.sorted();
    let b = b.sorted();
    if a.labels != b.labels {
        return false;
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return false;
    }
    let mut ip = Complex64::new(0.0, 0.0);
    for (x, y) in a.amps.iter().zip(&b.amps) {
        ip += x.conj() * y;
    }
    ip.norm() / (na * nb) >= 1.0 - tol
}

/// Checks that the named wires are conserved between two states: for every
/// basis value of those wires, the total probability mass carried by that
/// value is unchanged.
pub fn check_conserved(
    before: &StateVector,
    after: &StateVector,
    labels: &[String],
    tol: f64,
) -> bool {
    let mass = |s: &StateVector| -> Option<BTreeMap<u64, f64>> {
        let pos: Option<Vec<usize>> =
            labels.iter().map(|l| s.labels.iter().position(|x| x == l)).collect();
        let pos = pos?;
        let n = s.labels.len();
        let mut m = BTreeMap::new();
        for (i, a) in s.amps.iter().enumerate() {
            let mut key = 0u64;
            for (k, &p) in pos.iter().enumerate() {
                let bit = (i >> (n - 1 - p)) & 1;
                key |= (bit as u64) << k;
            }
            *m.entry(key).or_insert(0.0) += a.norm_sqr();
        }
        Some(m)
    };
    let (Some(ma), Some(mb)) = (mass(before), mass(after)) else {
        return false;
    };
    let keys: alloc::collections::BTreeSet<u64> = ma.keys().chain(mb.keys()).copied().collect();
    keys.iter().all(|k| {
        let a = ma.get(k).copied().unwrap_or(0.0);
        let b = mb.get(k).copied().unwrap_or(0.0);
        libm::fabs(a - b) <= tol
    })
}

/// Projects the named wires out of the state, provided their value is a
/// function of the remaining wires' basis labels. Returns the reduced state
/// or a conflict error naming the offending group.
pub fn forget_oracle(state: &StateVector, labels: &[String]) -> Result<StateVector, SimError> {
    let n = state.labels.len();
    let pos: Vec<usize> = labels
        .iter()
        .map(|l| {
            state
                .labels
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| SimError::Shape(format!("no wire labeled {l}")))
        })
        .collect::<Result<_, _>>()?;
    let drop_mask: u64 = pos.iter().map(|&p| 1u64 << (n - 1 - p)).sum();
    let tol = 1e-12;
    // Group indices by the surviving bits and insist on a unique dropped
    // value per group.
    let mut chosen: BTreeMap<u64, u64> = BTreeMap::new();
    for (i, a) in state.amps.iter().enumerate() {
        if a.norm_sqr() <= tol * tol {
            continue;
        }
        let rest = (i as u64) & !drop_mask;
        let dropped = (i as u64) & drop_mask;
        if let Some(prev) = chosen.get(&rest) {
            if *prev != dropped {
                return Err(SimError::ForgetConflict {
                    context: format!("wires {} differ across branches", labels.join(", ")),
                });
            }
        } else {
            chosen.insert(rest, dropped);
        }
    }
    // Build the reduced state over the surviving labels, in original order.
    let keep: Vec<usize> = (0..n).filter(|p| !pos.contains(p)).collect();
    let m = keep.len();
    let mut amps = vec![Complex64::new(0.0, 0.0); 1 << m];
    for (i, a) in state.amps.iter().enumerate() {
        if a.norm_sqr() <= tol * tol {
            continue;
        }
        let mut j = 0usize;
        for (new_k, &p) in keep.iter().enumerate() {
            let bit = (i >> (n - 1 - p)) & 1;
            j |= bit << (m - 1 - new_k);
        }
        amps[j] += *a;
    }
    let labels_out: Vec<String> = keep.iter().map(|&p| state.labels[p].clone()).collect();
    Ok(StateVector { labels: labels_out, amps })
}

/// An allocated wire within a [`Session`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Wire(u64);

/// One disposed chunk: quantum wires or a nested bin.
#[derive(Clone, Debug, PartialEq)]
pub enum GItem {
    Wires(Vec<Wire>),
    Nested(Vec<GItem>),
}

fn gitem_wires(items: &[GItem], out: &mut Vec<Wire>) {
    for it in items {
        match it {
            GItem::Wires(ws) => out.extend(ws.iter().copied()),
            GItem::Nested(inner) => gitem_wires(inner, out),
        }
    }
}

/// A runtime value bound to an IR variable.
#[derive(Clone, Debug, PartialEq)]
pub enum SimValue {
    Quantum(Vec<Wire>),
    Classical(CVal),
    Garbage(Vec<GItem>),
    /// Produced by a statement skipped under a false classical condition.
    Skipped,
}

/// Result of calling a function in a session.
#[derive(Clone, Debug)]
pub struct CallResult {
    /// Returned values in the callee's declaration order (classical and
    /// quantum interleaved as declared).
    pub returned: Vec<(Var, SimValue)>,
}

impl CallResult {
    pub fn value_of(&self, name: &str) -> Option<&SimValue> {
        self.returned.iter().find(|(v, _)| v.name == name).map(|(_, v)| v)
    }
}

/// Outputs of a whole-program entry simulation.
#[derive(Clone, Debug)]
pub struct EntryOutputs {
    /// Returned classical values, in declaration order.
    pub classical: Vec<(Var, CVal)>,
    /// Final state over conserved parameters, returned quantum variables,
    /// and (for garbage entries) bin wires labeled `%bin[i]`.
    pub state: StateVector,
}

/// Union-find over variable names, used for shared wire allocation across
/// `select`/`distribute` branches with quantum controls.
#[derive(Default)]
struct Classes {
    ids: BTreeMap<Var, usize>,
    parent: Vec<usize>,
}

impl Classes {
    fn id(&mut self, v: &Var) -> usize {
        if let Some(&i) = self.ids.get(v) {
            return i;
        }
        let i = self.parent.len();
        self.parent.push(i);
        self.ids.insert(v.clone(), i);
        i
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }
    fn union(&mut self, a: &Var, b: &Var) {
        let (x, y) = (self.id(a), self.id(b));
        let (rx, ry) = (self.find(x), self.find(y));
        if rx != ry {
            self.parent[rx] = ry;
        }
    }
    fn root_of(&mut self, v: &Var) -> usize {
        let i = self.id(v);
        self.find(i)
    }
}

fn alias_classes(f: &FunctionDef) -> Classes {
    let mut c = Classes::default();
    for s in &f.body {
        let quantum_ctrl = s
            .conserved
            .first()
            .and_then(|a| a.as_var())
            .map(|v| v.kind == VarKind::Quantum)
            .unwrap_or(false);
        if !quantum_ctrl {
            continue;
        }
        if s.op.is_select() {
            // select[x](r0, r1) -> r : all three share wires.
            for v in &s.consumed {
                c.union(v, &s.produced[0]);
            }
        } else if s.op.is_distribute() {
            for v in &s.produced {
                c.union(v, &s.consumed[0]);
            }
        }
    }
    c
}

/// One function activation.
struct Frame {
    env: BTreeMap<Var, SimValue>,
    classes: Classes,
    class_wires: BTreeMap<usize, Vec<Wire>>,
    /// Dispose accumulator (bin-producing functions).
    bin_out: Vec<GItem>,
    /// Undispose source (bin-consuming functions), popped from the back.
    bin_in: Vec<GItem>,
}

/// An interactive simulation session. Holds the dense statevector, the wire
/// table, and a private extendable copy of the program (so calls to derived
/// variants can be materialized on demand).
pub struct Session {
    program: Program,
    cfg: SimConfig,
    rng: ChaCha8Rng,
    amps: Vec<Complex64>,
    /// Live wires, most significant bit first.
    order: Vec<Wire>,
    next_wire: u64,
    /// Quantum controls currently in force: (wire, required value).
    ctrls: Vec<(Wire, bool)>,
}

impl Session {
    pub fn new(program: &Program, cfg: SimConfig) -> Session {
        Session {
            program: program.clone(),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            amps: vec![Complex64::new(1.0, 0.0)],
            order: Vec::new(),
            next_wire: 0,
            ctrls: Vec::new(),
        }
    }

    pub fn num_wires(&self) -> usize {
        self.order.len()
    }

    pub fn config(&self) -> SimConfig {
        self.cfg
    }

    fn pos_of(&self, w: Wire) -> Result<usize, SimError> {
        self.order
            .iter()
            .position(|&x| x == w)
            .ok_or_else(|| SimError::Shape("dangling wire reference".into()))
    }

    fn alloc_wire(&mut self) -> Result<Wire, SimError> {
        if self.order.len() >= self.cfg.max_qubits {
            return Err(SimError::BudgetExceeded { limit: self.cfg.max_qubits });
        }
        let w = Wire(self.next_wire);
        self.next_wire += 1;
        // Appending at the least significant position interleaves zeros.
        let mut amps = vec![Complex64::new(0.0, 0.0); self.amps.len() * 2];
        for (i, a) in self.amps.iter().enumerate() {
            amps[i << 1] = *a;
        }
        self.amps = amps;
        self.order.push(w);
        Ok(w)
    }

    /// Removes a wire that is exactly |0> (up to tolerance), or reports the
    /// residual probability of the |1> branch.
    fn free_zero_wire(&mut self, w: Wire, context: &str) -> Result<(), SimError> {
        let pos = self.pos_of(w)?;
        let n = self.order.len();
        let bit = 1usize << (n - 1 - pos);
        let residual: f64 =
            self.amps.iter().enumerate().filter(|(i, _)| i & bit != 0).map(|(_, a)| a.norm_sqr()).sum();
        if residual > self.cfg.tolerance {
            return Err(SimError::UnnewViolation { context: context.to_string(), residual });
        }
        let mut amps = Vec::with_capacity(self.amps.len() / 2);
        for (i, a) in self.amps.iter().enumerate() {
            if i & bit == 0 {
                amps.push(*a);
            }
        }
        self.amps = amps;
        self.order.remove(pos);
        Ok(())
    }

    /// Residual probability mass on the |1> branch of a wire, restricted to
    /// the subspace where the given controls match.
    fn residual_in_subspace(&self, w: Wire, ctrls: &[(Wire, bool)]) -> Result<f64, SimError> {
        let pos = self.pos_of(w)?;
        let n = self.order.len();
        let bit = 1usize << (n - 1 - pos);
        let mut masks = Vec::new();
        for &(cw, val) in ctrls {
            let cpos = self.pos_of(cw)?;
            masks.push((1usize << (n - 1 - cpos), val));
        }
        let mut sum = 0.0;
        for (i, a) in self.amps.iter().enumerate() {
            if i & bit == 0 {
                continue;
            }
            if masks.iter().all(|&(m, val)| (i & m != 0) == val) {
                sum += a.norm_sqr();
            }
        }
        Ok(sum)
    }

    fn controls_match(&self, idx: usize, masks: &[(usize, bool)]) -> bool {
        masks.iter().all(|&(m, val)| (idx & m != 0) == val)
    }

    fn ctrl_masks(&self, extra: &[(Wire, bool)]) -> Result<Vec<(usize, bool)>, SimError> {
        let n = self.order.len();
        let mut masks = Vec::new();
        for &(w, val) in self.ctrls.iter().chain(extra) {
            let pos = self.pos_of(w)?;
            masks.push((1usize << (n - 1 - pos), val));
        }
        Ok(masks)
    }

    /// Applies a single-qubit unitary to a wire under the active controls.
    fn apply_1q(
        &mut self,
        w: Wire,
        u: [[Complex64; 2]; 2],
        extra_ctrls: &[(Wire, bool)],
    ) -> Result<(), SimError> {
        let masks = self.ctrl_masks(extra_ctrls)?;
        let pos = self.pos_of(w)?;
        let n = self.order.len();
        let bit = 1usize << (n - 1 - pos);
        for i in 0..self.amps.len() {
            if i & bit != 0 {
                continue;
            }
            if !self.controls_match(i, &masks) {
                continue;
            }
            let j = i | bit;
            let (a, b) = (self.amps[i], self.amps[j]);
            self.amps[i] = u[0][0] * a + u[0][1] * b;
            self.amps[j] = u[1][0] * a + u[1][1] * b;
        }
        Ok(())
    }

    fn apply_phase(&mut self, theta: f64, extra_ctrls: &[(Wire, bool)]) -> Result<(), SimError> {
        let masks = self.ctrl_masks(extra_ctrls)?;
        let factor = Complex64::new(libm::cos(theta), libm::sin(theta));
        for (i, a) in self.amps.iter_mut().enumerate() {
            let ok = masks.iter().all(|&(m, val)| (i & m != 0) == val);
            if ok {
                *a *= factor;
            }
        }
        Ok(())
    }

    fn x_matrix() -> [[Complex64; 2]; 2] {
        let z = Complex64::new(0.0, 0.0);
        let o = Complex64::new(1.0, 0.0);
        [[z, o], [o, z]]
    }

    fn h_matrix() -> [[Complex64; 2]; 2] {
        let s = Complex64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
        [[s, s], [s, -s]]
    }

    /// Tensors an external state into the session; returns the wire for each
    /// label, in label order.
    pub fn alloc_state(&mut self, state: &StateVector) -> Result<BTreeMap<String, Wire>, SimError> {
        if self.order.len() + state.labels.len() > self.cfg.max_qubits {
            return Err(SimError::BudgetExceeded { limit: self.cfg.max_qubits });
        }
        let k = state.labels.len();
        let mut amps = Vec::with_capacity(self.amps.len() << k);
        for a in &self.amps {
            for b in &state.amps {
                amps.push(a * b);
            }
        }
        self.amps = amps;
        let mut map = BTreeMap::new();
        for label in &state.labels {
            let w = Wire(self.next_wire);
            self.next_wire += 1;
            self.order.push(w);
            if map.insert(label.clone(), w).is_some() {
                return Err(SimError::Shape(format!("duplicate input label {label}")));
            }
        }
        Ok(map)
    }

    /// Reads out the full state under the given labeling. Every live wire
    /// must be covered exactly once.
    pub fn snapshot(&self, labeling: &[(String, Wire)]) -> Result<StateVector, SimError> {
        if labeling.len() != self.order.len() {
            return Err(SimError::Shape(format!(
                "labeling covers {} wires but {} are live",
                labeling.len(),
                self.order.len()
            )));
        }
        let mut order = Vec::with_capacity(labeling.len());
        for (_, w) in labeling {
            order.push(self.pos_of(*w)?);
        }
        {
            let mut seen = order.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != order.len() {
                return Err(SimError::Shape("labeling repeats a wire".into()));
            }
        }
        let tmp = StateVector {
            labels: labeling.iter().map(|(l, _)| l.clone()).collect(),
            amps: self.amps.clone(),
        };
        // `tmp` currently carries amps in internal order; permute them so
        // that label k sits at position k.
        let internal = StateVector {
            labels: (0..self.order.len()).map(|i| i.to_string()).collect(),
            amps: self.amps.clone(),
        };
        let permuted = internal.permuted(&order);
        Ok(StateVector { labels: tmp.labels, amps: permuted.amps })
    }

    /// Calls a function with the given arguments. Classical arguments bind
    /// the classical conserved parameters in order; `conserved` and
    /// `consumed` bind the quantum (and bin) parameters in order.
    pub fn call(
        &mut self,
        name: &FuncName,
        classical: &[CVal],
        conserved: &[SimValue],
        consumed: &[SimValue],
    ) -> Result<CallResult, SimError> {
        let def = self.resolve(name)?;
        let mut frame = Frame {
            env: BTreeMap::new(),
            classes: alias_classes(&def),
            class_wires: BTreeMap::new(),
            bin_out: Vec::new(),
            bin_in: Vec::new(),
        };
        let mut ci = classical.iter();
        let mut qi = conserved.iter();
        for p in &def.conserved_params {
            match p.var.kind {
                VarKind::Classical => {
                    let v = ci
                        .next()
                        .ok_or_else(|| SimError::Shape(format!("{name}: missing classical argument {}", p.var)))?;
                    frame.env.insert(p.var.clone(), SimValue::Classical(*v));
                }
                VarKind::Quantum => {
                    let v = qi
                        .next()
                        .ok_or_else(|| SimError::Shape(format!("{name}: missing conserved argument {}", p.var)))?;
                    frame.env.insert(p.var.clone(), v.clone());
                }
                VarKind::Garbage => {
                    return Err(SimError::Shape(format!("{name}: garbage conserved parameter")))
                }
            }
        }
        if ci.next().is_some() || qi.next().is_some() {
            return Err(SimError::Shape(format!("{name}: too many conserved arguments")));
        }
        let bin_in_var = def.bin.as_ref().filter(|(_, d)| *d == BinDir::In).map(|(b, _)| b.clone());
        let mut ki = consumed.iter();
        for p in &def.consumed_params {
            let v = ki
                .next()
                .ok_or_else(|| SimError::Shape(format!("{name}: missing consumed argument {}", p.var)))?;
            if Some(&p.var) == bin_in_var.as_ref() {
                match v {
                    SimValue::Garbage(items) => frame.bin_in = items.clone(),
                    _ => return Err(SimError::Shape(format!("{name}: bin argument must be garbage"))),
                }
            } else {
                frame.env.insert(p.var.clone(), v.clone());
            }
        }
        if ki.next().is_some() {
            return Err(SimError::Shape(format!("{name}: too many consumed arguments")));
        }
        for stmt in &def.body {
            self.exec(&def, &mut frame, stmt)?;
        }
        if !frame.bin_in.is_empty() {
            return Err(SimError::Shape(format!("{name}: bin not fully drawn down")));
        }
        let mut returned = Vec::new();
        let bin_out_var =
            def.bin.as_ref().filter(|(_, d)| *d == BinDir::Out).map(|(b, _)| b.clone());
        for r in &def.returned {
            if Some(r) == bin_out_var.as_ref() {
                returned.push((r.clone(), SimValue::Garbage(core::mem::take(&mut frame.bin_out))));
                continue;
            }
            let v = frame
                .env
                .get(r)
                .cloned()
                .ok_or_else(|| SimError::Shape(format!("{name}: returned {r} is unbound")))?;
            returned.push((r.clone(), v));
        }
        Ok(CallResult { returned })
    }

    /// Resolves a callee, materializing derived variants on demand.
    fn resolve(&mut self, name: &FuncName) -> Result<FunctionDef, SimError> {
        if let Some(f) = self.program.get(name) {
            return Ok(f.clone());
        }
        derive::materialize(&mut self.program, name)
            .map_err(|e| SimError::Missing(format!("{name}: {e}")))?;
        self.program
            .get(name)
            .cloned()
            .ok_or_else(|| SimError::Missing(name.to_string()))
    }

    fn classical_env(frame: &Frame) -> BTreeMap<String, CVal> {
        frame
            .env
            .iter()
            .filter(|(v, _)| v.kind == VarKind::Classical)
            .filter_map(|(v, val)| match val {
                SimValue::Classical(c) => Some((v.name.clone(), *c)),
                _ => None,
            })
            .collect()
    }

    /// Splits a statement condition into a classical verdict and quantum
    /// controls. Returns `None` if a classical literal is false (skip).
    fn eval_condition(
        &self,
        frame: &Frame,
        stmt: &Statement,
    ) -> Result<Option<Vec<(Wire, bool)>>, SimError> {
        let mut quantum = Vec::new();
        for lit in &stmt.condition {
            match lit.var.kind {
                VarKind::Classical => {
                    let env = Self::classical_env(frame);
                    let v = env.get(&lit.var.name).copied().ok_or_else(|| {
                        SimError::Shape(format!("condition reads undefined {}", lit.var))
                    })?;
                    let b = v.as_bool().map_err(|e| SimError::Shape(e.message))?;
                    if b == lit.negated {
                        return Ok(None);
                    }
                }
                VarKind::Quantum => match frame.env.get(&lit.var) {
                    Some(SimValue::Quantum(ws)) if ws.len() == 1 => {
                        quantum.push((ws[0], !lit.negated));
                    }
                    Some(SimValue::Skipped) => return Ok(None),
                    other => {
                        return Err(SimError::Shape(format!(
                            "condition wire {} is {other:?}",
                            lit.var
                        )))
                    }
                },
                VarKind::Garbage => {
                    return Err(SimError::Shape("garbage variable in condition".into()))
                }
            }
        }
        Ok(Some(quantum))
    }

    fn take_quantum(&self, frame: &mut Frame, v: &Var) -> Result<Vec<Wire>, SimError> {
        match frame.env.get(v) {
            Some(SimValue::Quantum(ws)) => Ok(ws.clone()),
            other => Err(SimError::Shape(format!("expected quantum value in {v}, found {other:?}"))),
        }
    }

    /// Allocates (or reuses, for aliased branch variables) the wires backing
    /// a produced variable.
    fn class_alloc(
        &mut self,
        frame: &mut Frame,
        var: &Var,
        width: usize,
    ) -> Result<Vec<Wire>, SimError> {
        let root = frame.classes.root_of(var);
        if let Some(ws) = frame.class_wires.get(&root) {
            if ws.len() != width {
                return Err(SimError::Shape(format!(
                    "aliased branches of {var} disagree on width"
                )));
            }
            return Ok(ws.clone());
        }
        let mut ws = Vec::with_capacity(width);
        for _ in 0..width {
            ws.push(self.alloc_wire()?);
        }
        frame.class_wires.insert(root, ws.clone());
        Ok(ws)
    }

    /// Releases class wires after an inverse copy, tolerating wires still
    /// carrying the complementary branch: the wire is freed only once it is
    /// globally |0>.
    fn class_release(
        &mut self,
        frame: &mut Frame,
        var: &Var,
        wires: &[Wire],
        ctrls: &[(Wire, bool)],
        context: &str,
    ) -> Result<(), SimError> {
        let mut all_ctrls = self.ctrls.clone();
        all_ctrls.extend_from_slice(ctrls);
        let mut globally_zero = true;
        for &w in wires {
            let pos = self.pos_of(w)?;
            let n = self.order.len();
            let bit = 1usize << (n - 1 - pos);
            let total: f64 = self
                .amps
                .iter()
                .enumerate()
                .filter(|(i, _)| i & bit != 0)
                .map(|(_, a)| a.norm_sqr())
                .sum();
            if total > self.cfg.tolerance {
                globally_zero = false;
                // Within the controlled subspace the wire must be clean.
                let sub = self.residual_in_subspace(w, &all_ctrls)?;
                if sub > self.cfg.tolerance {
                    return Err(SimError::UnnewViolation { context: context.to_string(), residual: sub });
                }
            }
        }
        if globally_zero {
            for &w in wires {
                self.free_zero_wire(w, context)?;
            }
            let root = frame.classes.root_of(var);
            frame.class_wires.remove(&root);
        }
        Ok(())
    }

    fn exec(
        &mut self,
        def: &FunctionDef,
        frame: &mut Frame,
        stmt: &Statement,
    ) -> Result<(), SimError> {
        let Some(qctrls) = self.eval_condition(frame, stmt)? else {
            // Skipped under a false classical condition.
            for v in stmt.written_vars() {
                frame.env.insert(v, SimValue::Skipped);
            }
            return Ok(());
        };
        let m = stmt.op.mode;
        // Builtins run inverted under an inner adjoint or an outer adjoint
        // of a garbage variant (`dup^G^adj` releases like undup does).
        let inv = m.inner_adjoint ^ (m.garbage && m.outer_adjoint);
        match &stmt.op.target {
            OpTarget::Classical(e) => {
                let env = Self::classical_env(frame);
                let v = e.eval(&env).map_err(|e| SimError::Shape(e.message))?;
                frame.env.insert(stmt.produced_classical[0].clone(), SimValue::Classical(v));
            }
            OpTarget::New { one } => {
                if !inv {
                    let out = &stmt.produced[0];
                    let ws = self.class_alloc(frame, out, 1)?;
                    if *one {
                        self.apply_1q(ws[0], Self::x_matrix(), &qctrls)?;
                    }
                    frame.env.insert(out.clone(), SimValue::Quantum(ws));
                    if m.garbage {
                        self.bind_empty_garbage(frame, stmt)?;
                    }
                } else {
                    let ws = self.take_quantum(frame, &stmt.consumed[0])?;
                    if *one {
                        self.apply_1q(ws[0], Self::x_matrix(), &qctrls)?;
                    }
                    let ctx = format!("{} in {}", stmt.op.display_name(), def.name);
                    self.class_release(frame, &stmt.consumed[0], &ws, &qctrls, &ctx)?;
                    if m.garbage {
                        self.bind_empty_garbage(frame, stmt)?;
                    }
                }
            }
            OpTarget::X => {
                let ws = self.take_quantum(frame, &stmt.consumed[0])?;
                for &w in &ws {
                    self.apply_1q(w, Self::x_matrix(), &qctrls)?;
                }
                frame.env.insert(stmt.produced[0].clone(), SimValue::Quantum(ws));
                if m.garbage {
                    self.bind_empty_garbage(frame, stmt)?;
                }
            }
            OpTarget::H => {
                let ws = self.take_quantum(frame, &stmt.consumed[0])?;
                for &w in &ws {
                    self.apply_1q(w, Self::h_matrix(), &qctrls)?;
                }
                frame.env.insert(stmt.produced[0].clone(), SimValue::Quantum(ws));
            }
            OpTarget::CX => {
                let ctrl_var = stmt.conserved[0]
                    .as_var()
                    .ok_or_else(|| SimError::Shape("CX control must be a variable".into()))?;
                let cs = self.take_quantum(frame, ctrl_var)?;
                let ts = self.take_quantum(frame, &stmt.consumed[0])?;
                if cs.len() != ts.len() {
                    return Err(SimError::Shape("CX operand widths differ".into()));
                }
                for (&c, &t) in cs.iter().zip(&ts) {
                    let mut ctrls = qctrls.clone();
                    ctrls.push((c, true));
                    self.apply_1q(t, Self::x_matrix(), &ctrls)?;
                }
                frame.env.insert(stmt.produced[0].clone(), SimValue::Quantum(ts));
                if m.garbage {
                    self.bind_empty_garbage(frame, stmt)?;
                }
            }
            OpTarget::Phase(a) => {
                let theta = if inv { a.negated().radians() } else { a.radians() };
                self.apply_phase(theta, &qctrls)?;
                if m.garbage {
                    self.bind_empty_garbage(frame, stmt)?;
                }
            }
            OpTarget::Measure => {
                if !self.ctrls.is_empty() || !qctrls.is_empty() {
                    return Err(SimError::Shape("measurement under a quantum condition".into()));
                }
                let ws = self.take_quantum(frame, &stmt.consumed[0])?;
                if ws.len() != 1 {
                    return Err(SimError::Shape("measure expects a single wire".into()));
                }
                let outcome = self.measure_wire(ws[0])?;
                frame
                    .env
                    .insert(stmt.produced_classical[0].clone(), SimValue::Classical(CVal::Bool(outcome)));
            }
            OpTarget::Forget => {
                if !self.ctrls.is_empty() || !qctrls.is_empty() {
                    return Err(SimError::Shape("forget under a quantum condition".into()));
                }
                match frame.env.get(&stmt.consumed[0]) {
                    Some(SimValue::Quantum(ws)) => {
                        let ws = ws.clone();
                        self.forget_wires(&ws, &stmt.consumed[0].name)?;
                    }
                    Some(SimValue::Garbage(items)) => {
                        let mut ws = Vec::new();
                        gitem_wires(items, &mut ws);
                        self.forget_wires(&ws, &stmt.consumed[0].name)?;
                    }
                    other => {
                        return Err(SimError::Shape(format!(
                            "forget of non-quantum value {other:?}"
                        )))
                    }
                }
            }
            OpTarget::Dispose => {
                if !inv {
                    let item = match frame.env.get(&stmt.consumed[0]) {
                        Some(SimValue::Quantum(ws)) => GItem::Wires(ws.clone()),
                        Some(SimValue::Garbage(items)) => GItem::Nested(items.clone()),
                        other => {
                            return Err(SimError::Shape(format!(
                                "dispose of non-quantum value {other:?}"
                            )))
                        }
                    };
                    frame.bin_out.push(item);
                } else {
                    let item = frame
                        .bin_in
                        .pop()
                        .ok_or_else(|| SimError::Shape("undispose from an empty bin".into()))?;
                    let out = &stmt.produced[0];
                    let value = match (out.kind, item) {
                        (VarKind::Quantum, GItem::Wires(ws)) => SimValue::Quantum(ws),
                        (VarKind::Garbage, GItem::Nested(items)) => SimValue::Garbage(items),
                        (_, item) => {
                            return Err(SimError::Shape(format!(
                                "undispose kind mismatch binding {out} to {item:?}"
                            )))
                        }
                    };
                    frame.env.insert(out.clone(), value);
                }
            }
            OpTarget::Dup => {
                let src = stmt.conserved[0]
                    .as_var()
                    .ok_or_else(|| SimError::Shape("dup source must be a variable".into()))?;
                let ss = self.take_quantum(frame, src)?;
                if !inv {
                    let out = &stmt.produced[0];
                    let ws = self.class_alloc(frame, out, ss.len())?;
                    for (&s, &w) in ss.iter().zip(&ws) {
                        let mut ctrls = qctrls.clone();
                        ctrls.push((s, true));
                        self.apply_1q(w, Self::x_matrix(), &ctrls)?;
                    }
                    frame.env.insert(out.clone(), SimValue::Quantum(ws));
                } else {
                    let ws = self.take_quantum(frame, &stmt.consumed[0])?;
                    if ws.len() != ss.len() {
                        return Err(SimError::Shape("undup operand widths differ".into()));
                    }
                    for (&s, &w) in ss.iter().zip(&ws) {
                        let mut ctrls = qctrls.clone();
                        ctrls.push((s, true));
                        self.apply_1q(w, Self::x_matrix(), &ctrls)?;
                    }
                    let ctx = format!("undup of {} in {}", stmt.consumed[0], def.name);
                    self.class_release(frame, &stmt.consumed[0], &ws, &qctrls, &ctx)?;
                }
                if m.garbage {
                    self.bind_empty_garbage(frame, stmt)?;
                }
            }
            OpTarget::Select => {
                let ctrl = stmt.conserved[0]
                    .as_var()
                    .ok_or_else(|| SimError::Shape("select control must be a variable".into()))?;
                match ctrl.kind {
                    VarKind::Classical => {
                        let env = Self::classical_env(frame);
                        let b = env
                            .get(&ctrl.name)
                            .copied()
                            .ok_or_else(|| SimError::Shape(format!("undefined control {ctrl}")))?
                            .as_bool()
                            .map_err(|e| SimError::Shape(e.message))?;
                        if !inv {
                            // Exactly one branch carries a value; the other
                            // was skipped under the complementary condition.
                            let picked = &stmt.consumed[if b { 1 } else { 0 }];
                            let other = &stmt.consumed[if b { 0 } else { 1 }];
                            if !matches!(frame.env.get(other), Some(SimValue::Skipped) | None) {
                                return Err(SimError::Shape(format!(
                                    "unselected branch {other} still live under classical control"
                                )));
                            }
                            let ws = self.take_quantum(frame, picked)?;
                            frame.env.insert(stmt.produced[0].clone(), SimValue::Quantum(ws));
                        } else {
                            let ws = self.take_quantum(frame, &stmt.consumed[0])?;
                            let (live, dead) = if b {
                                (&stmt.produced[1], &stmt.produced[0])
                            } else {
                                (&stmt.produced[0], &stmt.produced[1])
                            };
                            frame.env.insert(live.clone(), SimValue::Quantum(ws));
                            frame.env.insert(dead.clone(), SimValue::Skipped);
                        }
                    }
                    VarKind::Quantum => {
                        if !inv {
                            let a = self.take_quantum(frame, &stmt.consumed[0])?;
                            let b = self.take_quantum(frame, &stmt.consumed[1])?;
                            if a != b {
                                return Err(SimError::Shape(
                                    "select branches are not aliased to the same wires".into(),
                                ));
                            }
                            frame.env.insert(stmt.produced[0].clone(), SimValue::Quantum(a));
                        } else {
                            let ws = self.take_quantum(frame, &stmt.consumed[0])?;
                            let root = frame.classes.root_of(&stmt.consumed[0]);
                            frame.class_wires.entry(root).or_insert_with(|| ws.clone());
                            frame.env.insert(stmt.produced[0].clone(), SimValue::Quantum(ws.clone()));
                            frame.env.insert(stmt.produced[1].clone(), SimValue::Quantum(ws));
                        }
                    }
                    VarKind::Garbage => {
                        return Err(SimError::Shape("garbage select control".into()))
                    }
                }
                if m.garbage {
                    self.bind_empty_garbage(frame, stmt)?;
                }
            }
            OpTarget::Cat { n } => {
                let env = Self::classical_env(frame);
                let widths: Vec<usize> = stmt
                    .conserved
                    .iter()
                    .map(|a| {
                        let e = a
                            .to_cexpr()
                            .ok_or_else(|| SimError::Shape("cat width must be classical".into()))?;
                        let v = e.eval(&env).map_err(|e| SimError::Shape(e.message))?;
                        let i = v.as_int().map_err(|e| SimError::Shape(e.message))?;
                        usize::try_from(i)
                            .map_err(|_| SimError::Shape("negative width".into()))
                    })
                    .collect::<Result<_, _>>()?;
                if widths.len() != *n {
                    return Err(SimError::Shape("cat width count mismatch".into()));
                }
                if !inv {
                    let mut ws = Vec::new();
                    for (k, v) in stmt.consumed.iter().enumerate() {
                        let part = self.take_quantum(frame, v)?;
                        if part.len() != widths[k] {
                            return Err(SimError::Shape(format!(
                                "cat operand {v} has width {} but {} was declared",
                                part.len(),
                                widths[k]
                            )));
                        }
                        ws.extend(part);
                    }
                    frame.env.insert(stmt.produced[0].clone(), SimValue::Quantum(ws));
                } else {
                    let ws = self.take_quantum(frame, &stmt.consumed[0])?;
                    if ws.len() != widths.iter().sum::<usize>() {
                        return Err(SimError::Shape("uncat width sum mismatch".into()));
                    }
                    let mut offset = 0usize;
                    for (k, out) in stmt.produced.iter().enumerate() {
                        let part = ws[offset..offset + widths[k]].to_vec();
                        offset += widths[k];
                        frame.env.insert(out.clone(), SimValue::Quantum(part));
                    }
                }
                if m.garbage {
                    self.bind_empty_garbage(frame, stmt)?;
                }
            }
            OpTarget::Call(base) => {
                self.exec_call(frame, stmt, base, &qctrls)?;
            }
        }
        Ok(())
    }

    /// Builtins in garbage mode produce an empty garbage value.
    fn bind_empty_garbage(&mut self, frame: &mut Frame, stmt: &Statement) -> Result<(), SimError> {
        if stmt.op.mode.consumes_bin() {
            // The bin operand must be empty garbage; it is absorbed here.
            match frame.env.get(stmt.consumed.last().expect("bin operand")) {
                Some(SimValue::Garbage(items)) if items.is_empty() => Ok(()),
                other => Err(SimError::Shape(format!(
                    "builtin bin operand should be empty garbage, found {other:?}"
                ))),
            }
        } else {
            let out = stmt
                .produced
                .iter()
                .find(|v| v.kind == VarKind::Garbage)
                .ok_or_else(|| SimError::Shape("garbage-mode builtin lacks garbage output".into()))?;
            frame.env.insert(out.clone(), SimValue::Garbage(Vec::new()));
            Ok(())
        }
    }

    fn exec_call(
        &mut self,
        frame: &mut Frame,
        stmt: &Statement,
        base: &str,
        qctrls: &[(Wire, bool)],
    ) -> Result<(), SimError> {
        let callee = FuncName::with_mode(base, stmt.op.mode);
        let mut classical = Vec::new();
        let mut conserved = Vec::new();
        let env = Self::classical_env(frame);
        for a in &stmt.conserved {
            match a {
                Atom::Int(v) => classical.push(CVal::Int(*v)),
                Atom::Var(v) if v.kind == VarKind::Classical => {
                    let val = env
                        .get(&v.name)
                        .copied()
                        .ok_or_else(|| SimError::Shape(format!("undefined classical {v}")))?;
                    classical.push(val);
                }
                Atom::Var(v) => {
                    conserved.push(SimValue::Quantum(self.take_quantum(frame, v)?));
                }
            }
        }
        let mut consumed = Vec::new();
        for v in &stmt.consumed {
            let val = frame
                .env
                .get(v)
                .cloned()
                .ok_or_else(|| SimError::Shape(format!("undefined consumed {v}")))?;
            consumed.push(val);
        }
        // The caller's quantum controls stay in force for the whole call.
        let depth = self.ctrls.len();
        self.ctrls.extend_from_slice(qctrls);
        let result = self.call(&callee, &classical, &conserved, &consumed);
        self.ctrls.truncate(depth);
        let result = result?;
        let mut rc = stmt.produced_classical.iter();
        let mut rq = stmt.produced.iter();
        for (_, val) in result.returned {
            match &val {
                SimValue::Classical(_) => {
                    let out = rc.next().ok_or_else(|| {
                        SimError::Shape(format!("{callee}: too many classical returns"))
                    })?;
                    frame.env.insert(out.clone(), val);
                }
                _ => {
                    let out = rq.next().ok_or_else(|| {
                        SimError::Shape(format!("{callee}: too many quantum returns"))
                    })?;
                    frame.env.insert(out.clone(), val);
                }
            }
        }
        if rc.next().is_some() || rq.next().is_some() {
            return Err(SimError::Shape(format!("{callee}: too few returns")));
        }
        Ok(())
    }

    fn measure_wire(&mut self, w: Wire) -> Result<bool, SimError> {
        let pos = self.pos_of(w)?;
        let n = self.order.len();
        let bit = 1usize << (n - 1 - pos);
        let p1: f64 = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        let total: f64 = self.amps.iter().map(|a| a.norm_sqr()).sum();
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
        let outcome = u * total < p1;
        // Collapse, renormalize, and drop the wire.
        let keep = |i: usize| (i & bit != 0) == outcome;
        let mass: f64 = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, a)| a.norm_sqr())
            .sum();
        let scale = 1.0 / libm::sqrt(mass);
        let mut amps = Vec::with_capacity(self.amps.len() / 2);
        for (i, a) in self.amps.iter().enumerate() {
            if keep(i) {
                amps.push(a * scale);
            }
        }
        self.amps = amps;
        self.order.remove(pos);
        Ok(outcome)
    }

    fn forget_wires(&mut self, wires: &[Wire], name: &str) -> Result<(), SimError> {
        if wires.is_empty() {
            return Ok(());
        }
        let labels: Vec<String> = (0..self.order.len()).map(|i| format!("w{i}")).collect();
        let state = StateVector { labels: labels.clone(), amps: self.amps.clone() };
        let mut drop_labels = Vec::new();
        for w in wires {
            drop_labels.push(format!("w{}", self.pos_of(*w)?));
        }
        let reduced = forget_oracle(&state, &drop_labels).map_err(|e| match e {
            SimError::ForgetConflict { .. } => SimError::ForgetConflict {
                context: format!("forget({name})"),
            },
            other => other,
        })?;
        // Rebuild internal order without the dropped wires.
        let keep_positions: Vec<usize> = (0..self.order.len())
            .filter(|i| !drop_labels.contains(&format!("w{i}")))
            .collect();
        self.order = keep_positions.iter().map(|&i| self.order[i]).collect();
        self.amps = reduced.amps;
        Ok(())
    }
}

/// Simulates an entry function on a given input state.
///
/// The input state's labels must name every quantum parameter wire: a
/// width-1 parameter `a` is the label `a`; a width-w parameter contributes
/// `a[0]` ... `a[w-1]`. The output state is labeled by conserved parameters
/// and returned variables the same way, with garbage bin wires labeled
/// `%bin[i]`.
pub fn simulate(
    program: &Program,
    entry: &FuncName,
    classical: &[CVal],
    input: &StateVector,
    cfg: SimConfig,
) -> Result<EntryOutputs, SimError> {
    let mut session = Session::new(program, cfg);
    let def = session.resolve(entry)?;
    if def.bin.as_ref().map(|(_, d)| *d) == Some(BinDir::In) {
        return Err(SimError::Shape(
            "bin-consuming functions cannot be simulated as entries".into(),
        ));
    }
    let label_map = session.alloc_state(input)?;
    // Bind parameters: classical values by order, quantum wires by label.
    let mut cenv: BTreeMap<String, CVal> = BTreeMap::new();
    {
        let mut ci = classical.iter();
        for p in def.classical_params() {
            let v = ci.next().ok_or_else(|| {
                SimError::Shape(format!("missing classical argument {}", p.var))
            })?;
            cenv.insert(p.var.name.clone(), *v);
        }
        if ci.next().is_some() {
            return Err(SimError::Shape("too many classical arguments".into()));
        }
    }
    let mut used_labels: alloc::collections::BTreeSet<String> = alloc::collections::BTreeSet::new();
    let mut wires_for = |p: &crate::ir::Param| -> Result<Vec<Wire>, SimError> {
        let width = p
            .width_expr()
            .eval(&cenv)
            .map_err(|e| SimError::Shape(e.message))
            .and_then(|v| v.as_int().map_err(|e| SimError::Shape(e.message)))?;
        let width = usize::try_from(width).map_err(|_| SimError::Shape("negative width".into()))?;
        let labels: Vec<String> = if width == 1 {
            vec![p.var.name.clone()]
        } else {
            (0..width).map(|i| format!("{}[{i}]", p.var.name)).collect()
        };
        let mut ws = Vec::new();
        for l in labels {
            let w = label_map.get(&l).copied().ok_or_else(|| {
                SimError::Shape(format!("input state lacks a wire labeled {l}"))
            })?;
            used_labels.insert(l);
            ws.push(w);
        }
        Ok(ws)
    };
    let mut conserved = Vec::new();
    let mut conserved_labelled: Vec<(String, Wire)> = Vec::new();
    let mut classical_args = Vec::new();
    for p in &def.conserved_params {
        match p.var.kind {
            VarKind::Classical => {
                classical_args.push(*cenv.get(&p.var.name).expect("bound above"));
            }
            VarKind::Quantum => {
                let ws = wires_for(p)?;
                for (i, w) in ws.iter().enumerate() {
                    let label = if ws.len() == 1 {
                        p.var.name.clone()
                    } else {
                        format!("{}[{i}]", p.var.name)
                    };
                    conserved_labelled.push((label, *w));
                }
                conserved.push(SimValue::Quantum(ws));
            }
            VarKind::Garbage => return Err(SimError::Shape("garbage conserved parameter".into())),
        }
    }
    let mut consumed = Vec::new();
    for p in &def.consumed_params {
        let ws = wires_for(p)?;
        consumed.push(SimValue::Quantum(ws));
    }
    if used_labels.len() != input.labels.len() {
        let extra: Vec<String> = input
            .labels
            .iter()
            .filter(|l| !used_labels.contains(*l))
            .cloned()
            .collect();
        return Err(SimError::Shape(format!(
            "input labels do not match parameters (unused: {})",
            extra.join(", ")
        )));
    }
    let result = session.call(entry, &classical_args, &conserved, &consumed)?;
    let mut labeling = conserved_labelled;
    let mut classical_out = Vec::new();
    for (var, val) in &result.returned {
        match val {
            SimValue::Classical(c) => classical_out.push((var.clone(), *c)),
            SimValue::Quantum(ws) => {
                for (i, w) in ws.iter().enumerate() {
                    let label =
                        if ws.len() == 1 { var.name.clone() } else { format!("{}[{i}]", var.name) };
                    labeling.push((label, *w));
                }
            }
            SimValue::Garbage(items) => {
                let mut ws = Vec::new();
                gitem_wires(items, &mut ws);
                for (i, w) in ws.iter().enumerate() {
                    labeling.push((format!("%{}[{i}]", var.name), *w));
                }
            }
            SimValue::Skipped => {
                return Err(SimError::Shape(format!("returned {var} was never produced")))
            }
        }
    }
    let state = session.snapshot(&labeling)?;
    Ok(EntryOutputs { classical: classical_out, state })
}
