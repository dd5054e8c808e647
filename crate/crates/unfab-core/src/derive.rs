//! On-demand materialization of derived function variants.
//!
//! A call may name a variant that has no definition yet: `f^adj`, `f^G`,
//! `f^G^adj` or `f^O`. Each is derived from a simpler variant, recursing
//! until the plain definition is reached:
//!
//! - `f^adj` is the adjoint of `f` after uncomputation synthesis (adjoints
//!   require forget-free bodies).
//! - `f^G` erases the uncomputation of `f` after synthesis, dup-pair
//!   cancellation and garbage connection, then cancels leftover dup chains.
//! - `f^G^adj` is the adjoint of `f^G`.
//! - `f^O` is the classical part of `f`.
//!
//! Derived definitions are inserted into the program under their variant
//! name, so repeated calls resolve without re-deriving.

use crate::adjoint;
use crate::garbage;
use crate::ir::{FuncName, IrError, Mode, Program};
use crate::uncomp;

/// Ensures the named variant exists in the program, deriving it from the
/// plain definition if needed.
pub fn materialize(program: &mut Program, name: &FuncName) -> Result<(), IrError> {
    if program.contains(name) {
        return Ok(());
    }
    let mode = name.mode;
    if mode == Mode::PLAIN {
        return Err(IrError::new(alloc::format!("unknown function {name}")));
    }
    if mode.classical_only {
        if mode != Mode::classical_only() {
            return Err(IrError::new(alloc::format!(
                "non-canonical classical variant {name}; the classical part is mode-independent"
            )));
        }
        let base = FuncName { base: name.base.clone(), mode: Mode::PLAIN };
        materialize(program, &base)?;
        let f = program.get(&base).expect("just materialized").clone();
        let o = adjoint::synthesize_classical(&f, program)?;
        program.add_function(o)?;
        return Ok(());
    }
    if mode.garbage && mode.outer_adjoint {
        let inner = FuncName {
            base: name.base.clone(),
            mode: Mode { outer_adjoint: false, ..mode },
        };
        materialize(program, &inner)?;
        let f = program.get(&inner).expect("just materialized").clone();
        let a = adjoint::synthesize_adjoint(&f, program)?;
        program.add_function(a)?;
        return Ok(());
    }
    if mode.garbage {
        let base = FuncName {
            base: name.base.clone(),
            mode: Mode { garbage: false, ..mode },
        };
        materialize(program, &base)?;
        let f = program.get(&base).expect("just materialized").clone();
        let u = uncomp::synthesize_uncomputation(&f, program)?;
        let mut s = uncomp::cancel_dup_pairs(&u);
        garbage::connect_pairs(&mut s)?;
        let e = garbage::erase_uncomputation(&s)?;
        let e = uncomp::cancel_dup_pairs(&e);
        program.add_function(e)?;
        return Ok(());
    }
    if mode.inner_adjoint && !mode.outer_adjoint {
        let base = FuncName { base: name.base.clone(), mode: Mode::PLAIN };
        materialize(program, &base)?;
        let f = program.get(&base).expect("just materialized").clone();
        let u = uncomp::synthesize_uncomputation(&f, program)?;
        let s = uncomp::cancel_dup_pairs(&u);
        let a = adjoint::synthesize_adjoint(&s, program)?;
        program.add_function(a)?;
        return Ok(());
    }
    Err(IrError::new(alloc::format!("cannot derive {name}: incoherent mode")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{BinDir, VarKind};
    use crate::testfix::{maj_program, names_of};

    #[test]
    fn garbage_variant_of_maj_appears_with_a_bin() {
        let mut p = maj_program();
        let name = FuncName::with_mode("maj", Mode { garbage: true, ..Mode::PLAIN });
        materialize(&mut p, &name).unwrap();
        let g = p.get(&name).unwrap();
        assert_eq!(g.bin.as_ref().map(|(_, d)| *d), Some(BinDir::Out));
        assert_eq!(g.body.len(), 11);
    }

    #[test]
    fn adjoint_variant_of_maj_reverses_the_synthesized_body() {
        let mut p = maj_program();
        let name = FuncName::with_mode("maj", Mode { inner_adjoint: true, ..Mode::PLAIN });
        materialize(&mut p, &name).unwrap();
        let a = p.get(&name).unwrap();
        assert_eq!(
            names_of(a),
            ["dup", "CX", "distribute", "undup", "undup", "CX^adj", "undup"]
        );
        assert_eq!(a.consumed_params.len(), 1);
        assert!(a.returned.is_empty());
    }

    #[test]
    fn garbage_adjoint_consumes_the_bin() {
        let mut p = maj_program();
        let name = FuncName::with_mode(
            "maj",
            Mode { garbage: true, outer_adjoint: true, ..Mode::PLAIN },
        );
        materialize(&mut p, &name).unwrap();
        let ga = p.get(&name).unwrap();
        assert_eq!(ga.bin.as_ref().map(|(_, d)| *d), Some(BinDir::In));
        assert!(ga
            .consumed_params
            .iter()
            .any(|q| q.var.kind == VarKind::Garbage));
        // Undisposes mirror the disposes of maj^G.
        let undisposes = ga.body.iter().filter(|s| s.op.display_name() == "undispose").count();
        assert_eq!(undisposes, 6);
    }

    #[test]
    fn unknown_bases_cannot_be_derived() {
        let mut p = maj_program();
        let name = FuncName::with_mode("nosuch", Mode { garbage: true, ..Mode::PLAIN });
        assert!(materialize(&mut p, &name).is_err());
    }

    #[test]
    fn synthesized_maj_matches_the_forget_oracle_on_random_states() {
        use crate::sim::{equiv_up_to_phase, simulate, SimConfig, StateVector};
        let p = maj_program();
        let entry = FuncName::plain("maj");
        let mut synthesized = maj_program();
        let f = synthesized.get(&entry).unwrap().clone();
        let u = crate::uncomp::synthesize_uncomputation(&f, &synthesized).unwrap();
        let mut s = crate::uncomp::cancel_dup_pairs(&u);
        crate::garbage::connect_pairs(&mut s).unwrap();
        synthesized.replace_function(s).unwrap();
        let labels: alloc::vec::Vec<alloc::string::String> =
            alloc::vec!["a".into(), "b".into(), "c".into()];
        for seed in 0..8u64 {
            let input = StateVector::random(labels.clone(), seed);
            let oracle =
                simulate(&p, &entry, &[], &input, SimConfig::default()).unwrap();
            let piped =
                simulate(&synthesized, &entry, &[], &input, SimConfig::default()).unwrap();
            assert!(
                equiv_up_to_phase(&oracle.state, &piped.state, 1e-9),
                "seed {seed}:\n{:?}\nvs\n{:?}",
                oracle.state.support(1e-9),
                piped.state.support(1e-9)
            );
        }
    }

    #[test]
    fn garbage_roundtrip_restores_the_input_state() {
        use crate::sim::{equiv_up_to_phase, Session, SimConfig, SimValue, StateVector};
        let p = maj_program();
        let g_name = FuncName::with_mode("maj", Mode { garbage: true, ..Mode::PLAIN });
        let ga_name = FuncName::with_mode(
            "maj",
            Mode { garbage: true, outer_adjoint: true, ..Mode::PLAIN },
        );
        let labels: alloc::vec::Vec<alloc::string::String> =
            alloc::vec!["a".into(), "b".into(), "c".into()];
        for seed in 0..4u64 {
            let input = StateVector::random(labels.clone(), seed);
            let mut sess = Session::new(&p, SimConfig::default());
            let wires = sess.alloc_state(&input).unwrap();
            let conserved: alloc::vec::Vec<SimValue> = ["a", "b", "c"]
                .iter()
                .map(|n| SimValue::Quantum(alloc::vec![wires[*n]]))
                .collect();
            let out = sess.call(&g_name, &[], &conserved, &[]).unwrap();
            let consumed: alloc::vec::Vec<SimValue> =
                out.returned.iter().map(|(_, v)| v.clone()).collect();
            sess.call(&ga_name, &[], &conserved, &consumed).unwrap();
            let final_state = sess
                .snapshot(&labels.iter().map(|l| (l.clone(), wires[l.as_str()])).collect::<alloc::vec::Vec<_>>())
                .unwrap();
            assert!(sess.num_wires() == 3, "leaked wires: {}", sess.num_wires());
            assert!(equiv_up_to_phase(&input, &final_state, 1e-9), "seed {seed}");
        }
    }

    #[test]
    fn garbage_variant_agrees_with_the_source_on_basis_inputs() {
        use crate::sim::{Session, SimConfig, SimValue, StateVector};
        let p = maj_program();
        let entry = FuncName::plain("maj");
        let g_name = FuncName::with_mode("maj", Mode { garbage: true, ..Mode::PLAIN });
        let labels: alloc::vec::Vec<alloc::string::String> =
            alloc::vec!["a".into(), "b".into(), "c".into()];
        for bits in 0..8u32 {
            let basis = [bits & 4 != 0, bits & 2 != 0, bits & 1 != 0];
            let input = StateVector::basis(labels.clone(), &basis);
            // r = b when a == b, else c: the majority vote.
            let expect_r = if basis[0] == basis[1] { basis[1] } else { basis[2] };
            let oracle =
                crate::sim::simulate(&p, &entry, &[], &input, SimConfig::default()).unwrap();
            let mut sess = Session::new(&p, SimConfig::default());
            let wires = sess.alloc_state(&input).unwrap();
            let conserved: alloc::vec::Vec<SimValue> = ["a", "b", "c"]
                .iter()
                .map(|n| SimValue::Quantum(alloc::vec![wires[*n]]))
                .collect();
            let out = sess.call(&g_name, &[], &conserved, &[]).unwrap();
            let SimValue::Quantum(r_wires) = out.value_of("r").unwrap() else {
                panic!("r is not quantum")
            };
            let SimValue::Garbage(items) = out.value_of("bin").unwrap() else {
                panic!("bin is not garbage")
            };
            let mut labeling: alloc::vec::Vec<(alloc::string::String, crate::sim::Wire)> = ["a", "b", "c"]
                .iter()
                .map(|n| ((*n).into(), wires[*n]))
                .collect();
            labeling.push(("r".into(), r_wires[0]));
            for item in items {
                if let crate::sim::GItem::Wires(ws) = item {
                    for (i, w) in ws.iter().enumerate() {
                        labeling.push((alloc::format!("junk{i}"), *w));
                    }
                }
            }
            let snap = sess.snapshot(&labeling).unwrap();
            let sup = snap.support(1e-9);
            assert_eq!(sup.len(), 1, "bits {bits:03b}: output not a basis state");
            let r_index = snap.labels.iter().position(|l| l == "r").unwrap();
            assert_eq!(
                sup[0].0.as_bytes()[r_index] == b'1',
                expect_r,
                "bits {bits:03b}: wrong majority"
            );
            // The source function agrees on its r wire.
            let osorted = oracle.state.sorted();
            let r_index = osorted.labels.iter().position(|l| l == "r").unwrap();
            for (label, _) in osorted.support(1e-9) {
                let bit = label.as_bytes()[r_index] == b'1';
                assert_eq!(bit, expect_r, "bits {bits:03b}: source maj disagrees");
            }
        }
    }
}
