//! Coarse liveness: one contiguous range of layout indices per value.

use super::{aux_layout_index, BlockOrder, LiveRange, LivenessInfo, LoopForest};
use crate::adapter::{IrAdapter, OperandRef, ValueRef};

const UNDEF: u32 = u32::MAX;

struct Builder<'a> {
    forest: &'a LoopForest,
    ranges: Vec<LiveRange>,
}

impl Builder<'_> {
    fn def(&mut self, v: ValueRef, at: u32) {
        let r = &mut self.ranges[v.index()];
        r.first = at;
        r.last = at;
    }

    fn use_at(&mut self, v: ValueRef, block: u32, at_end: bool) {
        let r = &mut self.ranges[v.index()];
        r.use_count += 1;
        if r.first == UNDEF {
            // Use in code the definition does not reach; nothing to extend.
            return;
        }
        let d = r.first;
        let mut pos = (block, at_end);
        // Outermost loop around the use that does not contain the def: the
        // value stays live across its backedges.
        let mut l = self.forest.innermost(block);
        while l != 0 && !self.forest.nodes[l as usize].contains(d) {
            pos = (self.forest.nodes[l as usize].span.1, true);
            l = self.forest.nodes[l as usize].parent;
        }
        if pos.0 > r.last {
            r.last = pos.0;
            r.ends_at_block_end = pos.1;
        } else if pos.0 == r.last {
            r.ends_at_block_end |= pos.1;
        }
    }
}

/// Requires the layout indices written by [`super::compute_block_layout`].
pub fn compute_liveness<A: IrAdapter>(
    adapter: &A,
    order: &BlockOrder,
    forest: &LoopForest,
) -> LivenessInfo {
    let n = adapter.value_count() as usize;
    let mut b = Builder {
        forest,
        ranges: vec![
            LiveRange {
                first: UNDEF,
                last: UNDEF,
                ends_at_block_end: false,
                use_count: 0,
            };
            n
        ],
    };
    for &a in adapter.args() {
        b.def(a, 0);
    }
    for (i, &blk) in order.layout.iter().enumerate() {
        for &phi in adapter.phis(blk) {
            b.def(phi, i as u32);
        }
        for &inst in adapter.insts(blk) {
            if let Some(r) = adapter.inst_result(inst) {
                b.def(r, i as u32);
            }
        }
    }
    for (i, &blk) in order.layout.iter().enumerate() {
        let i = i as u32;
        for &inst in adapter.insts(blk) {
            for op in adapter.inst_operands(inst) {
                if let OperandRef::Value(v) = op {
                    b.use_at(*v, i, false);
                }
            }
        }
        // One φ use per outgoing edge, at the end of this block.
        for &s in adapter.succs(blk) {
            for &phi in adapter.phis(s) {
                for (from, op) in adapter.phi_incoming(phi) {
                    if *from == blk {
                        if let OperandRef::Value(v) = op {
                            b.use_at(*v, i, true);
                        }
                        break;
                    }
                }
            }
        }
    }
    for r in &mut b.ranges {
        if r.first == UNDEF {
            // Defined only in unreachable code.
            *r = LiveRange {
                first: 0,
                last: 0,
                ends_at_block_end: false,
                use_count: r.use_count,
            };
        }
    }
    debug_assert!(order
        .layout
        .iter()
        .enumerate()
        .all(|(i, &blk)| aux_layout_index(adapter.block_aux(blk)) == i as u32));
    LivenessInfo { ranges: b.ranges }
}
