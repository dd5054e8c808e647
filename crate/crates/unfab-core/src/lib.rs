//! Core model of a quantum SSA IR with first-class uncomputation.
//!
//! The IR describes quantum computations as sequences of single-assignment
//! statements whose operands are split into *conserved* arguments (read but
//! returned unchanged, written in brackets) and *consumed* arguments (used up
//! by the statement, written in parentheses). A declarative `forget` statement
//! marks a variable as safely discardable; the passes in this crate turn those
//! declarations into explicit, provably correct uncomputation circuits.
//!
//! The crate is `no_std` (with `alloc`) so the model and every pass can be
//! embedded in hosts without an operating system. IO, the text format, and the
//! command line live in the companion `unfab` crate.
//!
//! Modules, in dependency order:
//!
//! * [`ir`] - types for programs, functions, statements, operations.
//! * [`verify`] - condition consistency and the forgettability analysis.
//! * [`uncomp`] - synthesis of uncomputation for `forget` statements.
//! * [`adjoint`] - synthesis of classical-only and adjoint variants.
//! * [`garbage`] - garbage-mode variants and erasure of uncomputation.
//! * [`derive`] - on-demand materialization of derived function variants.
//! * [`opt`] - constant propagation, CSE, dead code elimination.
//! * [`lower`] - flattening to gate-level circuits and register allocation.
//! * [`circuit`] - flat circuit type, gate counts, circuit simulation.
//! * [`sim`] - reference statevector semantics for the IR itself.
//! * [`census`] - dynamic call counting used by the scaling benchmarks.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod adjoint;
pub mod census;
pub mod circuit;
pub mod derive;
pub mod garbage;
pub mod ir;
pub mod lower;
pub mod opt;
pub mod sim;
pub mod uncomp;
#[cfg(test)]
pub(crate) mod testfix;
pub mod verify;
