//! Flat gate-level circuits: the lowering target.
//!
//! A [`FlatCircuit`] is an ordered gate list over plain qubit indices, with
//! measurements writing classical bits and gates optionally guarded on
//! previously measured bits. The gate set is what survives control
//! decomposition: x, h, t, t-dagger, u1 and cx, so a circuit maps directly
//! onto OpenQASM 2.0.
//!
//! The module carries its own dense statevector executor so lowered
//! circuits can be checked against the statement-level simulator. Both
//! executors draw measurement randomness the same way from the same seeded
//! stream, so a lowered program takes the same measurement branches as its
//! source under equal seeds.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{Angle, IrError};

/// One primitive gate. Qubit indices are zero-based; `Measure` writes one
/// classical bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    X { q: usize },
    H { q: usize },
    T { q: usize },
    Tdg { q: usize },
    U1 { q: usize, angle: Angle },
    Cx { c: usize, t: usize },
    Measure { q: usize, bit: usize },
}

impl Gate {
    /// Qubits the gate touches.
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::X { q }
            | Gate::H { q }
            | Gate::T { q }
            | Gate::Tdg { q }
            | Gate::U1 { q, .. }
            | Gate::Measure { q, .. } => vec![q],
            Gate::Cx { c, t } => vec![c, t],
        }
    }
}

/// A gate plus the classical-bit guard it runs under. Every `(bit, value)`
/// pair must hold for the gate to fire; an empty guard always fires.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatGate {
    pub gate: Gate,
    pub guard: Vec<(usize, bool)>,
}

impl FlatGate {
    pub fn plain(gate: Gate) -> Self {
        FlatGate { gate, guard: Vec::new() }
    }
}

/// An ordered gate list over `num_qubits` qubits and `num_bits` classical
/// bits. Qubit 0 is the most significant position of a state index, matching
/// the label order of [`crate::sim::StateVector`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlatCircuit {
    pub num_qubits: usize,
    pub num_bits: usize,
    pub gates: Vec<FlatGate>,
}

impl FlatCircuit {
    /// Validates index ranges.
    pub fn check(&self) -> Result<(), IrError> {
        for (k, g) in self.gates.iter().enumerate() {
            for q in g.gate.qubits() {
                if q >= self.num_qubits {
                    return Err(IrError::new(format!(
                        "gate {k} touches qubit {q}, circuit has {}",
                        self.num_qubits
                    )));
                }
            }
            if let Gate::Cx { c, t } = g.gate {
                if c == t {
                    return Err(IrError::new(format!("gate {k} is a cx with equal qubits")));
                }
            }
            if let Gate::Measure { bit, .. } = g.gate {
                if bit >= self.num_bits {
                    return Err(IrError::new(format!(
                        "gate {k} writes bit {bit}, circuit has {}",
                        self.num_bits
                    )));
                }
            }
            for &(bit, _) in &g.guard {
                if bit >= self.num_bits {
                    return Err(IrError::new(format!(
                        "gate {k} is guarded on bit {bit}, circuit has {}",
                        self.num_bits
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gate totals in the single-qubit versus cx split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GateReport {
    pub single: u64,
    pub cx: u64,
    /// `single + cx`; measurements are not gates and are not counted.
    pub gates: u64,
    pub qubits: u64,
}

pub fn gate_count(c: &FlatCircuit) -> GateReport {
    let mut r = GateReport { qubits: c.num_qubits as u64, ..GateReport::default() };
    for g in &c.gates {
        match g.gate {
            Gate::X { .. } | Gate::H { .. } | Gate::T { .. } | Gate::Tdg { .. } | Gate::U1 { .. } => {
                r.single += 1
            }
            Gate::Cx { .. } => r.cx += 1,
            Gate::Measure { .. } => {}
        }
    }
    r.gates = r.single + r.cx;
    r
}

/// Final amplitudes and measured bits of one execution.
#[derive(Clone, Debug)]
pub struct FlatRun {
    pub amps: Vec<Complex64>,
    pub bits: Vec<bool>,
}

/// Executes the circuit on the given initial amplitudes (length must be
/// `2^num_qubits`). Measurements collapse the state in place; the measured
/// qubit stays allocated. The randomness discipline matches the
/// statement-level simulator: one `u64` draw per executed measurement.
pub fn run(c: &FlatCircuit, init: &[Complex64], seed: u64) -> Result<FlatRun, IrError> {
    c.check()?;
    let dim = 1usize << c.num_qubits;
    if init.len() != dim {
        return Err(IrError::new(format!(
            "initial state has {} amplitudes, circuit needs {dim}",
            init.len()
        )));
    }
    let mut amps = init.to_vec();
    let mut bits = vec![false; c.num_bits];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = c.num_qubits;
    let mask_of = |q: usize| 1usize << (n - 1 - q);
    for g in &c.gates {
        if g.guard.iter().any(|&(bit, want)| bits[bit] != want) {
            continue;
        }
        match g.gate {
            Gate::X { q } => {
                let m = mask_of(q);
                for i in 0..dim {
                    if i & m == 0 {
                        amps.swap(i, i | m);
                    }
                }
            }
            Gate::H { q } => {
                let m = mask_of(q);
                let s = core::f64::consts::FRAC_1_SQRT_2;
                for i in 0..dim {
                    if i & m == 0 {
                        let a = amps[i];
                        let b = amps[i | m];
                        amps[i] = (a + b) * s;
                        amps[i | m] = (a - b) * s;
                    }
                }
            }
            Gate::T { q } => phase_on(&mut amps, mask_of(q), Angle::new(1, 4)),
            Gate::Tdg { q } => phase_on(&mut amps, mask_of(q), Angle::new(-1, 4)),
            Gate::U1 { q, angle } => phase_on(&mut amps, mask_of(q), angle),
            Gate::Cx { c: ctl, t } => {
                let mc = mask_of(ctl);
                let mt = mask_of(t);
                for i in 0..dim {
                    if i & mc != 0 && i & mt == 0 {
                        amps.swap(i, i | mt);
                    }
                }
            }
            Gate::Measure { q, bit } => {
                let m = mask_of(q);
                let p1: f64 = amps
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i & m != 0)
                    .map(|(_, a)| a.norm_sqr())
                    .sum();
                let total: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
                let u = (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
                let outcome = u * total < p1;
                let mass = if outcome { p1 } else { total - p1 };
                let scale = 1.0 / libm::sqrt(mass);
                for (i, a) in amps.iter_mut().enumerate() {
                    if (i & m != 0) == outcome {
                        *a *= scale;
                    } else {
                        *a = Complex64::new(0.0, 0.0);
                    }
                }
                bits[bit] = outcome;
            }
        }
    }
    Ok(FlatRun { amps, bits })
}

fn phase_on(amps: &mut [Complex64], mask: usize, angle: Angle) {
    let r = angle.radians();
    let w = Complex64::new(libm::cos(r), libm::sin(r));
    for (i, a) in amps.iter_mut().enumerate() {
        if i & mask != 0 {
            *a *= w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(n: usize, index: usize) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); 1 << n];
        v[index] = Complex64::new(1.0, 0.0);
        v
    }

    fn close(a: Complex64, re: f64, im: f64) -> bool {
        (a - Complex64::new(re, im)).norm() < 1e-12
    }

    #[test]
    fn hadamard_then_cx_prepares_the_bell_state() {
        let c = FlatCircuit {
            num_qubits: 2,
            num_bits: 0,
            gates: vec![
                FlatGate::plain(Gate::H { q: 0 }),
                FlatGate::plain(Gate::Cx { c: 0, t: 1 }),
            ],
        };
        let out = run(&c, &basis(2, 0), 0).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!(close(out.amps[0b00], s, 0.0));
        assert!(close(out.amps[0b11], s, 0.0));
        assert!(close(out.amps[0b01], 0.0, 0.0));
        assert!(close(out.amps[0b10], 0.0, 0.0));
        let r = gate_count(&c);
        assert_eq!((r.single, r.cx, r.gates, r.qubits), (1, 1, 2, 2));
    }

    #[test]
    fn eight_t_gates_cycle_back_to_the_start() {
        let mut gates = vec![FlatGate::plain(Gate::H { q: 0 })];
        gates.extend((0..8).map(|_| FlatGate::plain(Gate::T { q: 0 })));
        gates.push(FlatGate::plain(Gate::H { q: 0 }));
        let c = FlatCircuit { num_qubits: 1, num_bits: 0, gates };
        let out = run(&c, &basis(1, 0), 0).unwrap();
        assert!(close(out.amps[0], 1.0, 0.0));
        assert!(close(out.amps[1], 0.0, 0.0));
    }

    #[test]
    fn guarded_gates_respect_measured_bits() {
        // Measure |1>, then x fires only under the matching guard.
        let c = FlatCircuit {
            num_qubits: 2,
            num_bits: 1,
            gates: vec![
                FlatGate::plain(Gate::X { q: 0 }),
                FlatGate::plain(Gate::Measure { q: 0, bit: 0 }),
                FlatGate { gate: Gate::X { q: 1 }, guard: vec![(0, true)] },
                FlatGate { gate: Gate::X { q: 0 }, guard: vec![(0, false)] },
            ],
        };
        let out = run(&c, &basis(2, 0), 7).unwrap();
        assert_eq!(out.bits, vec![true]);
        // Qubit 0 stayed |1> (guard false), qubit 1 flipped.
        assert!(close(out.amps[0b11], 1.0, 0.0));
    }

    #[test]
    fn measurement_collapse_is_seed_stable() {
        let c = FlatCircuit {
            num_qubits: 1,
            num_bits: 1,
            gates: vec![
                FlatGate::plain(Gate::H { q: 0 }),
                FlatGate::plain(Gate::Measure { q: 0, bit: 0 }),
            ],
        };
        for seed in 0..16u64 {
            let a = run(&c, &basis(1, 0), seed).unwrap();
            let b = run(&c, &basis(1, 0), seed).unwrap();
            assert_eq!(a.bits, b.bits);
            let i = usize::from(a.bits[0]);
            assert!((a.amps[i].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_indices_are_rejected() {
        let c = FlatCircuit {
            num_qubits: 1,
            num_bits: 0,
            gates: vec![FlatGate::plain(Gate::Cx { c: 0, t: 1 })],
        };
        assert!(run(&c, &basis(1, 0), 0).is_err());
    }
}
