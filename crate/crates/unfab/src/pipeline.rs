//! Whole-program pass schedule.
//!
//! Checking and transformation are deliberately separate. [`transform`]
//! refuses to touch a program that does not verify; it then rewrites every
//! function in place: uncomputation synthesis, dup-pair cancellation, and
//! (in standard mode) garbage connection of the surviving compute/
//! uncompute pairs. Naive mode skips the connection step, so any adjoint
//! taken later re-expands uncomputation recursively. It exists to make the
//! exponential baseline measurable, not to be used.
//!
//! The output is audited by the verifier again. A diagnostic at that stage
//! means a pass broke its own contract, which callers are expected to
//! report as an internal failure rather than an input error.

use unfab_core::ir::{IrError, Program};
use unfab_core::verify::{verify_program, Diagnostic};
use unfab_core::{garbage, uncomp};

/// How compute/uncompute call pairs left by synthesis are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Thread pairs through garbage variables so derived variants stay
    /// linear in the source.
    Standard,
    /// Leave pairs plain. Adjoints of the output re-derive uncomputation
    /// at every level.
    Naive,
}

/// Why a pipeline run stopped.
#[derive(Debug)]
pub enum Failure {
    /// The input is at fault. Maps to exit code 1.
    Diagnostics(Vec<Diagnostic>),
    /// A pass violated its own postcondition. Maps to exit code 2.
    Internal(IrError),
}

impl core::fmt::Display for Failure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Failure::Diagnostics(ds) => {
                write!(f, "{} diagnostic(s)", ds.len())
            }
            Failure::Internal(e) => write!(f, "internal: {e}"),
        }
    }
}

/// Runs the verifier and returns its findings without changing anything.
pub fn check(p: &Program) -> Vec<Diagnostic> {
    verify_program(p)
}

/// Verifies, synthesizes uncomputation for every function, cancels
/// redundant dup pairs, and in standard mode connects the remaining
/// compute/uncompute pairs through garbage variables. On success the
/// program contains no `forget` statements.
pub fn transform(p: &mut Program, mode: Mode) -> Result<(), Failure> {
    let diags = verify_program(p);
    if !diags.is_empty() {
        return Err(Failure::Diagnostics(diags));
    }
    uncomp::synthesize_program(p).map_err(Failure::Internal)?;
    uncomp::cancel_program(p);
    if mode == Mode::Standard {
        for name in p.names() {
            let mut f = p.get(&name).expect("listed name").clone();
            garbage::connect_pairs(&mut f).map_err(Failure::Internal)?;
            p.replace_function(f).map_err(Failure::Internal)?;
        }
    }
    let audit = verify_program(p);
    if let Some(d) = audit.first() {
        return Err(Failure::Internal(IrError::new(format!(
            "transformed program fails verification: {}",
            d.message
        ))));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textfmt::parse_program;
    use unfab_core::census::call_census;
    use unfab_core::ir::{CVal, FuncName, OpTarget};

    const MAJ: &str = include_str!("../fixtures/maj.uir");
    const BAD: &str = include_str!("../fixtures/bad.uir");
    const ITERATE: &str = include_str!("../fixtures/iterate.uir");
    const ETARETI: &str = include_str!("../fixtures/etareti.uir");

    #[test]
    fn transform_removes_forgets_and_stays_verified() {
        let mut p = parse_program(MAJ).unwrap().program;
        transform(&mut p, Mode::Standard).unwrap();
        let maj = p.get(&FuncName::plain("maj")).unwrap();
        assert!(maj.body.iter().all(|s| !matches!(s.op.target, OpTarget::Forget)));
        assert!(maj.body.iter().any(|s| s.op.mode.garbage));
        assert!(check(&p).is_empty());
    }

    #[test]
    fn naive_mode_leaves_pairs_unconnected() {
        let mut p = parse_program(MAJ).unwrap().program;
        transform(&mut p, Mode::Naive).unwrap();
        let maj = p.get(&FuncName::plain("maj")).unwrap();
        assert!(maj.body.iter().all(|s| !s.op.mode.garbage));
    }

    #[test]
    fn rejected_programs_do_not_transform() {
        let mut p = parse_program(BAD).unwrap().program;
        match transform(&mut p, Mode::Standard) {
            Err(Failure::Diagnostics(ds)) => assert!(!ds.is_empty()),
            other => panic!("expected diagnostics, got {other:?}"),
        }
    }

    /// Weight of the entry census at the given recursion depth.
    fn weight(p: &mut Program, entry: &str, n: i64) -> u64 {
        call_census(p, &FuncName::plain(entry), &[CVal::Int(n)])
            .unwrap()
            .weight()
    }

    #[test]
    fn recursive_call_weight_stays_within_double() {
        for src in [ITERATE, ETARETI] {
            let entry = if src == ITERATE { "iterate" } else { "etareti" };
            let mut source = parse_program(src).unwrap().program;
            let mut piped = source.clone();
            transform(&mut piped, Mode::Standard).unwrap();
            for n in 1..=10 {
                let s = weight(&mut source, entry, n);
                let w = weight(&mut piped, entry, n);
                assert_eq!(s, 3 * n as u64, "{entry} source weight at n = {n}");
                assert_eq!(w, 4 * n as u64 - 1, "{entry} output weight at n = {n}");
                assert!(w <= 2 * s, "{entry} doubled at n = {n}: {w} > 2*{s}");
            }
        }
    }

    #[test]
    fn naive_mode_calls_the_step_exponentially_often() {
        let mut p = parse_program(ITERATE).unwrap().program;
        transform(&mut p, Mode::Naive).unwrap();
        for n in 1..=8i64 {
            let c = call_census(&mut p, &FuncName::plain("iterate"), &[CVal::Int(n)]).unwrap();
            assert_eq!(c.of(&FuncName::plain("fstep")), 1 << (n - 1), "n = {n}");
        }
    }
}
