//! Exact liveness by iterative dataflow, for checking the coarse ranges.

use std::collections::BTreeSet;

use super::{aux_layout_index, Analysis};
use crate::adapter::{IrAdapter, OperandRef};

/// Per-block (live-in, live-out) sets over value numbers, indexed by the
/// position of the block in `ad.blocks()`. φ results count as defined at
/// the top of their block; φ inputs are read at the end of the predecessor.
pub fn exact_liveness<A: IrAdapter>(ad: &A) -> (Vec<BTreeSet<u32>>, Vec<BTreeSet<u32>>) {
    let blocks = ad.blocks();
    let n = blocks.len();
    let pos = |b: crate::adapter::BlockRef| blocks.iter().position(|&x| x == b).unwrap();
    let mut uses = vec![BTreeSet::new(); n];
    let mut defs = vec![BTreeSet::new(); n];
    for (k, &b) in blocks.iter().enumerate() {
        for phi in ad.phis(b) {
            defs[k].insert(phi.0);
        }
        for &i in ad.insts(b) {
            for op in ad.inst_operands(i) {
                if let OperandRef::Value(v) = op {
                    if !defs[k].contains(&v.0) {
                        uses[k].insert(v.0);
                    }
                }
            }
            if let Some(r) = ad.inst_result(i) {
                defs[k].insert(r.0);
            }
        }
        for &s in ad.succs(b) {
            for &phi in ad.phis(s) {
                for (from, op) in ad.phi_incoming(phi) {
                    if let (true, OperandRef::Value(v)) = (*from == b, op) {
                        if !defs[k].contains(&v.0) {
                            uses[k].insert(v.0);
                        }
                    }
                }
            }
        }
    }
    if n > 0 {
        defs[0].extend(ad.args().iter().map(|a| a.0));
    }
    let succs: Vec<Vec<usize>> = blocks
        .iter()
        .map(|&b| ad.succs(b).iter().map(|&s| pos(s)).collect())
        .collect();
    let mut live_in = vec![BTreeSet::new(); n];
    let mut live_out: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for k in (0..n).rev() {
            let mut out = BTreeSet::new();
            for &s in &succs[k] {
                out.extend(live_in[s].iter().copied());
            }
            let mut inn = uses[k].clone();
            inn.extend(out.difference(&defs[k]).copied());
            if out != live_out[k] || inn != live_in[k] {
                live_out[k] = out;
                live_in[k] = inn;
                changed = true;
            }
        }
    }
    (live_in, live_out)
}

/// Checks that every block where a value is live lies inside its range and
/// that a range not marked `ends_at_block_end` is dead after its last
/// block. `ad` must be prepared and analysed with `a`.
pub fn liveness_violations<A: IrAdapter>(ad: &A, a: &Analysis) -> Vec<String> {
    let (live_in, live_out) = exact_liveness(ad);
    // Live-out of a φ input's block is tracked through the use sets above;
    // a value read only by a φ on the edge b→s must also reach the end of b.
    let mut edge_reads = vec![BTreeSet::new(); ad.blocks().len()];
    for (k, &b) in ad.blocks().iter().enumerate() {
        for &s in ad.succs(b) {
            for &phi in ad.phis(s) {
                for (from, op) in ad.phi_incoming(phi) {
                    if let (true, OperandRef::Value(v)) = (*from == b, op) {
                        edge_reads[k].insert(v.0);
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for (k, &b) in ad.blocks().iter().enumerate() {
        if !a.order.layout.contains(&b) {
            continue;
        }
        let i = aux_layout_index(ad.block_aux(b));
        let live: BTreeSet<u32> = live_in[k].union(&live_out[k]).copied().collect();
        for v in live {
            let r = &a.liveness.ranges[v as usize];
            if i < r.first || i > r.last {
                out.push(format!(
                    "v{v} live in block {} (layout {i}) outside [{}, {}]",
                    b.0, r.first, r.last
                ));
            }
        }
        for &v in live_out[k].iter().chain(&edge_reads[k]) {
            let r = &a.liveness.ranges[v as usize];
            if r.last == i && !r.ends_at_block_end {
                out.push(format!("v{v} live out of its last block {} but ends inside it", b.0));
            }
        }
    }
    out
}
