//! Compiled snippet templates.

use super::parse::{SnippetDef, TInst, TSrc};
use crate::visa::{AluOp, Reg};

/// Alternative encodings of one template instruction, tried in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Candidate {
    /// `ADD` with a constant fitting 32 bits becomes `ADDI`.
    AddImm,
    /// `CMP` with a constant fitting 32 bits becomes `CMPI`.
    CmpImm,
    /// An address expression becomes the memory operand itself.
    FoldAddr,
    Default,
}

#[derive(Clone, Debug)]
pub struct EncoderPlan {
    pub def: SnippetDef,
    /// Every fixed register of the body, in order of appearance.
    pub prelude: Vec<Reg>,
    /// Index of the last body instruction reading each template register;
    /// `usize::MAX` for outputs.
    pub last_use: Vec<usize>,
    pub candidates: Vec<Vec<Candidate>>,
    /// Whether the flags written by instruction i are read later.
    pub flags_read_after: Vec<bool>,
}

impl EncoderPlan {
    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn is_multi_block(&self) -> bool {
        self.def.is_multi_block()
    }

    /// True if no template register sharing a location with `ts` is read
    /// after instruction `i`.
    pub(super) fn dead_after(&self, ts: impl IntoIterator<Item = usize>, i: usize) -> bool {
        ts.into_iter()
            .all(|t| self.last_use[t] != usize::MAX && self.last_use[t] <= i)
    }
}

fn reads_flags(i: &TInst) -> bool {
    matches!(i, TInst::Alu { op: AluOp::Adc, .. } | TInst::Bcc(..))
}

fn sets_flags(i: &TInst) -> bool {
    match i {
        TInst::Alu { op, .. } => op.sets_flags(),
        TInst::Cmp { .. } => true,
        _ => false,
    }
}

pub fn build_plan(def: &SnippetDef) -> EncoderPlan {
    let mut prelude: Vec<Reg> = Vec::new();
    let mut add = |r: Reg| {
        if !prelude.contains(&r) {
            prelude.push(r);
        }
    };
    for f in &def.fixed {
        add(f.reg);
    }
    for i in &def.body {
        if let Some(r) = i.def().and_then(|d| d.fixed) {
            add(r);
        }
        for s in i.srcs() {
            if let TSrc::Phys(r) = s {
                add(r);
            }
        }
    }
    let mut last_use = vec![0usize; def.tregs.len()];
    for (k, i) in def.body.iter().enumerate() {
        for s in i.srcs() {
            if let TSrc::T(t) = s {
                last_use[t] = k;
            }
        }
    }
    for &o in &def.outputs {
        last_use[o] = usize::MAX;
    }
    if def.is_multi_block() {
        // Values may flow around internal branches; keep everything.
        for l in &mut last_use {
            *l = usize::MAX;
        }
    }

    let mut flags_read_after = vec![false; def.body.len()];
    let mut live = false;
    for (k, i) in def.body.iter().enumerate().rev() {
        flags_read_after[k] = live;
        if sets_flags(i) {
            live = false;
        }
        if reads_flags(i) {
            live = true;
        }
    }

    let candidates = def
        .body
        .iter()
        .map(|i| match i {
            TInst::Alu { op: AluOp::Add, .. } => vec![Candidate::AddImm, Candidate::Default],
            TInst::Cmp { .. } => vec![Candidate::CmpImm, Candidate::Default],
            TInst::Ld { .. } | TInst::St { .. } => vec![Candidate::FoldAddr, Candidate::Default],
            _ => vec![Candidate::Default],
        })
        .collect();

    EncoderPlan {
        def: def.clone(),
        prelude,
        last_use,
        candidates,
        flags_read_after,
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_snippets;
    use super::*;

    fn plan(text: &str) -> EncoderPlan {
        build_plan(&parse_snippets(text).unwrap()[0])
    }

    #[test]
    fn capability_table() {
        let p = plan("snippet add64(a:gp kill, b:gp kill)->(r) { r = ADD tie(a), b }");
        assert_eq!(p.candidates, vec![vec![Candidate::AddImm, Candidate::Default]]);
        let p = plan("snippet ld64(p)->(r) { r = LD [p] }");
        assert_eq!(p.candidates, vec![vec![Candidate::FoldAddr, Candidate::Default]]);
        let p = plan("snippet and64(a, b)->(r) { r = AND tie(a), b }");
        assert_eq!(p.candidates, vec![vec![Candidate::Default]]);
    }

    #[test]
    fn divide_prelude() {
        let p = plan("snippet udiv64(a,b)->(q) { fix r0=a; fix-out r1; q:r0 = DIVMOD b }");
        assert_eq!(p.prelude, vec![Reg::R0, Reg::R1]);
        let p = plan("snippet urem64(a,b)->(r) { fix-out r1; fix r0=a; t:r1 = DIVMOD b; r = MOV t }");
        assert_eq!(p.prelude, vec![Reg::R1, Reg::R0]);
    }

    #[test]
    fn flags_liveness() {
        let p = plan(
            "snippet add128(al, ah, bl, bh) -> (lo, hi) { lo = ADD tie(al), bl; hi = ADC tie(ah), bh }",
        );
        assert_eq!(p.flags_read_after, vec![true, false]);
        assert_eq!(p.last_use[0], 0);
        assert_eq!(p.last_use[3], 1);
        assert_eq!(p.last_use[4], usize::MAX);
    }
}
