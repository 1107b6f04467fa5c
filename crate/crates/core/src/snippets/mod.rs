//! Snippet encoders: instruction templates written after register
//! allocation, compiled to [`EncoderPlan`]s and expanded by instruction
//! compilers through [`invoke`], which takes care of register allocation,
//! operand folding and move aliasing.

mod invoke;
mod parse;
mod plan;

pub use invoke::{invoke, AddrExpr, AddrReg, AsmOperand};
pub use parse::{
    parse_snippets, Def, FixedDemand, Imm, Param, ParamKind, SnippetDef, SnippetError, TInst, TSrc,
};
pub use plan::{build_plan, Candidate, EncoderPlan};

use std::collections::HashMap;
use std::sync::OnceLock;

/// The snippets shipped for the seed IR.
pub const BUILTIN: &str = include_str!("../../snippets/visa.snip");

/// Snippets the seed IR compilers need.
pub const REQUIRED: &[&str] = &[
    "add64", "sub64", "mul64", "and64", "or64", "xor64", "shl64", "shl64c", "shr64", "udiv64",
    "urem64", "ld64", "st64", "lea64", "add128", "zext128", "trunc",
];

#[derive(Clone, Debug, Default)]
pub struct SnippetSet {
    plans: HashMap<String, EncoderPlan>,
}

impl SnippetSet {
    pub fn parse(text: &str) -> Result<SnippetSet, SnippetError> {
        let plans = parse_snippets(text)?
            .iter()
            .map(|d| (d.name.clone(), build_plan(d)))
            .collect();
        Ok(SnippetSet { plans })
    }

    /// The shipped snippet file, parsed once.
    pub fn builtin() -> &'static SnippetSet {
        static SET: OnceLock<SnippetSet> = OnceLock::new();
        SET.get_or_init(|| SnippetSet::parse(BUILTIN).expect("shipped snippets parse"))
    }

    pub fn get(&self, name: &str) -> Option<&EncoderPlan> {
        self.plans.get(name)
    }

    /// Names from `names` that are missing.
    pub fn missing<'n>(&self, names: &[&'n str]) -> Vec<&'n str> {
        names.iter().copied().filter(|n| !self.plans.contains_key(*n)).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.plans.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}
