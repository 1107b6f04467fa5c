//! A single-pass compiler back-end for SSA IRs.
//!
//! Compilation runs one analysis pass ([`analysis`]) and one code
//! generation pass ([`codegen`]) that performs instruction selection,
//! register allocation and encoding together. The back-end only sees the IR
//! through the [`adapter::IrAdapter`] contract. The bundled seed IR
//! ([`ir`]), its interpreter and the [`vm`] form a differential-testing
//! harness.

pub mod adapter;
pub mod analysis;
pub mod codegen;
pub mod diff;
pub mod ir;
pub mod snippets;
pub mod visa;
pub mod vm;
pub mod trap;

pub use trap::Trap;
