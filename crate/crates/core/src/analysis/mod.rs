//! The analysis pass run once per function before code generation: loop
//! forest, block layout and coarse liveness.

mod check;
mod layout;
mod liveness;
mod loops;

use std::fmt::Write as _;

use crate::adapter::{BlockRef, IrAdapter};

pub use check::{exact_liveness, liveness_violations};
pub use layout::compute_block_layout;
pub use liveness::compute_liveness;

const AUX_INDEX_MASK: u64 = 0xffff_ffff;
const AUX_MULTI_PRED: u64 = 1 << 32;
const AUX_VISITED: u64 = 1 << 33;

/// Layout index stored in a block's aux bits by the analysis.
pub fn aux_layout_index(aux: u64) -> u32 {
    (aux & AUX_INDEX_MASK) as u32
}

pub fn aux_multi_pred(aux: u64) -> bool {
    aux & AUX_MULTI_PRED != 0
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopNode {
    /// Parent loop index; the root is its own parent.
    pub parent: u32,
    pub level: u32,
    pub header: BlockRef,
    /// Inclusive layout index range.
    pub span: (u32, u32),
    pub irreducible: bool,
}

impl LoopNode {
    pub fn contains(&self, layout_idx: u32) -> bool {
        self.span.0 <= layout_idx && layout_idx <= self.span.1
    }
}

/// Loop nesting forest. Node 0 is the root pseudo-loop covering the whole
/// function; nodes are ordered by span start, so parents precede children.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopForest {
    pub nodes: Vec<LoopNode>,
    /// Innermost loop per block, indexed by layout index.
    pub block_loop: Vec<u32>,
}

impl LoopForest {
    pub fn innermost(&self, layout_idx: u32) -> u32 {
        self.block_loop[layout_idx as usize]
    }

    /// True if `l` has no child loops.
    pub fn is_innermost(&self, l: u32) -> bool {
        !self.nodes.iter().skip(1).any(|n| n.parent == l)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockOrder {
    pub layout: Vec<BlockRef>,
    /// Indexed by layout index.
    pub multi_pred: Vec<bool>,
}

impl BlockOrder {
    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LiveRange {
    pub first: u32,
    pub last: u32,
    pub ends_at_block_end: bool,
    pub use_count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LivenessInfo {
    pub ranges: Vec<LiveRange>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Analysis {
    pub order: BlockOrder,
    pub forest: LoopForest,
    pub liveness: LivenessInfo,
}

/// Runs all analysis steps on the prepared function. Leaves the layout index
/// and the multi-predecessor flag in each block's aux bits.
pub fn analyze<A: IrAdapter>(adapter: &mut A) -> Analysis {
    let (order, forest) = compute_block_layout(adapter);
    let liveness = compute_liveness(adapter, &order, &forest);
    Analysis {
        order,
        forest,
        liveness,
    }
}

impl Analysis {
    /// Stable text rendering used by `--dump-analysis`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let layout: Vec<String> = self.order.layout.iter().map(|b| b.0.to_string()).collect();
        let _ = writeln!(s, "layout: {}", layout.join(" "));
        for (i, n) in self.forest.nodes.iter().enumerate() {
            let _ = write!(
                s,
                "loop {i}: parent={} level={} header={} span=[{},{}]",
                n.parent, n.level, n.header.0, n.span.0, n.span.1
            );
            if n.irreducible {
                s.push_str(" irreducible");
            }
            s.push('\n');
        }
        for (v, r) in self.liveness.ranges.iter().enumerate() {
            let _ = writeln!(
                s,
                "v{v} [{},{}] end={} uses={}",
                r.first,
                r.last,
                if r.ends_at_block_end { "out" } else { "in" },
                r.use_count
            );
        }
        s
    }
}

#[cfg(test)]
mod tests;
