//! Host-side companion to `unfab-core`: the `.uir` text format, OpenQASM 2.0
//! emission and re-parsing, the end-to-end pipeline, and benchmark drivers.

pub mod bench;
pub mod pipeline;
pub mod qasm;
pub mod textfmt;

pub use unfab_core as core;
