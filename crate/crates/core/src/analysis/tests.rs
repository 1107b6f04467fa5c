use super::*;
use crate::adapter::seed::SeedAdapter;
use crate::adapter::{
    ConstData, FuncRef, Linkage, OperandRef, RegBank, StackVarInfo, ValueRef,
};
use crate::ir::parse_module;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

/// Adapter over a bare CFG with synthetic values.
#[derive(Clone, Debug, Default)]
struct Mock {
    blocks: Vec<BlockRef>,
    succs: Vec<Vec<BlockRef>>,
    phis: Vec<Vec<ValueRef>>,
    insts: Vec<Vec<u32>>,
    inst_ops: Vec<Vec<OperandRef>>,
    inst_res: Vec<Option<ValueRef>>,
    phi_in: Vec<Vec<(BlockRef, OperandRef)>>,
    args: Vec<ValueRef>,
    nvalues: u32,
    aux: Vec<u64>,
}

impl IrAdapter for Mock {
    type Inst = u32;
    fn func_count(&self) -> u32 {
        1
    }
    fn func_name(&self, _f: FuncRef) -> &str {
        "mock"
    }
    fn func_linkage(&self, _f: FuncRef) -> Linkage {
        Linkage::Internal
    }
    fn func_is_definition(&self, _f: FuncRef) -> bool {
        true
    }
    fn prepare(&mut self, _f: FuncRef) {}
    fn args(&self) -> &[ValueRef] {
        &self.args
    }
    fn stack_vars(&self) -> &[StackVarInfo] {
        &[]
    }
    fn blocks(&self) -> &[BlockRef] {
        &self.blocks
    }
    fn succs(&self, b: BlockRef) -> &[BlockRef] {
        &self.succs[b.0 as usize]
    }
    fn phis(&self, b: BlockRef) -> &[ValueRef] {
        &self.phis[b.0 as usize]
    }
    fn insts(&self, b: BlockRef) -> &[u32] {
        &self.insts[b.0 as usize]
    }
    fn block_aux(&self, b: BlockRef) -> u64 {
        self.aux[b.0 as usize]
    }
    fn set_block_aux(&mut self, b: BlockRef, bits: u64) {
        self.aux[b.0 as usize] = bits;
    }
    fn value_count(&self) -> u32 {
        self.nvalues
    }
    fn part_count(&self, _v: ValueRef) -> u32 {
        1
    }
    fn part_size(&self, _v: ValueRef, _p: u32) -> u32 {
        8
    }
    fn part_bank(&self, _v: ValueRef, _p: u32) -> RegBank {
        RegBank::Gp
    }
    fn phi_incoming(&self, phi: ValueRef) -> &[(BlockRef, OperandRef)] {
        &self.phi_in[phi.index()]
    }
    fn inst_operands(&self, inst: u32) -> &[OperandRef] {
        &self.inst_ops[inst as usize]
    }
    fn inst_result(&self, inst: u32) -> Option<ValueRef> {
        self.inst_res[inst as usize]
    }
}

fn reachable(succs: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; succs.len()];
    let mut work = vec![0];
    seen[0] = true;
    while let Some(b) = work.pop() {
        for &s in &succs[b] {
            if !seen[s] {
                seen[s] = true;
                work.push(s);
            }
        }
    }
    seen
}

/// Set-based dominators, entry = 0.
fn dominators(succs: &[Vec<usize>]) -> Vec<BTreeSet<usize>> {
    let n = succs.len();
    let reach = reachable(succs);
    let mut preds = vec![Vec::new(); n];
    for (b, ss) in succs.iter().enumerate() {
        for &s in ss {
            preds[s].push(b);
        }
    }
    let all: BTreeSet<usize> = (0..n).filter(|&b| reach[b]).collect();
    let mut dom = vec![all.clone(); n];
    dom[0] = [0].into();
    let mut changed = true;
    while changed {
        changed = false;
        for b in 1..n {
            if !reach[b] {
                continue;
            }
            let mut new: Option<BTreeSet<usize>> = None;
            for &p in preds[b].iter().filter(|&&p| reach[p]) {
                new = Some(match new {
                    None => dom[p].clone(),
                    Some(s) => s.intersection(&dom[p]).copied().collect(),
                });
            }
            let mut new = new.unwrap_or_default();
            new.insert(b);
            if new != dom[b] {
                dom[b] = new;
                changed = true;
            }
        }
    }
    dom
}

fn random_mock(rng: &mut ChaCha8Rng, max_blocks: usize) -> Mock {
    let n = rng.gen_range(1..=max_blocks);
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for b in 1..n {
        let p = rng.gen_range(0..b);
        succs[p].push(b);
    }
    for _ in 0..rng.gen_range(0..=n) {
        if n > 1 {
            let a = rng.gen_range(0..n);
            succs[a].push(rng.gen_range(1..n));
        }
    }
    for s in &mut succs {
        // Mix declared order.
        if s.len() > 1 && rng.gen_bool(0.5) {
            s.reverse();
        }
    }
    let dom = dominators(&succs);
    let mut m = Mock {
        blocks: (0..n as u32).map(BlockRef).collect(),
        succs: succs
            .iter()
            .map(|s| s.iter().map(|&t| BlockRef(t as u32)).collect())
            .collect(),
        phis: vec![Vec::new(); n],
        insts: vec![Vec::new(); n],
        aux: vec![0; n],
        ..Mock::default()
    };
    let mut preds = vec![Vec::new(); n];
    for (b, ss) in succs.iter().enumerate() {
        for &s in ss {
            if !preds[s].contains(&b) {
                preds[s].push(b);
            }
        }
    }
    let mut def_block: Vec<usize> = Vec::new();
    fn new_value(m: &mut Mock, def_block: &mut Vec<usize>, b: usize) -> ValueRef {
        let v = ValueRef(m.nvalues);
        m.nvalues += 1;
        def_block.push(b);
        v
    }
    for _ in 0..rng.gen_range(0..3) {
        let v = new_value(&mut m, &mut def_block, 0);
        m.args.push(v);
    }
    let mut phi_list = Vec::new();
    for b in 0..n {
        if b > 0 && !preds[b].is_empty() && rng.gen_bool(0.5) {
            for _ in 0..rng.gen_range(1..3) {
                let v = new_value(&mut m, &mut def_block, b);
                m.phis[b].push(v);
                phi_list.push((b, v));
            }
        }
        for _ in 0..rng.gen_range(0..4) {
            // Values available here: defined in a strict dominator, or
            // earlier in this block.
            let avail: Vec<u32> = (0..m.nvalues)
                .filter(|&v| {
                    let d = def_block[v as usize];
                    dom[b].contains(&d)
                })
                .collect();
            let mut ops = Vec::new();
            for _ in 0..rng.gen_range(0..3) {
                if !avail.is_empty() && rng.gen_bool(0.8) {
                    ops.push(OperandRef::Value(ValueRef(avail[rng.gen_range(0..avail.len())])));
                } else {
                    ops.push(OperandRef::Const(ConstData::new(&[7])));
                }
            }
            let res = rng.gen_bool(0.7).then(|| new_value(&mut m, &mut def_block, b));
            let id = m.inst_ops.len() as u32;
            m.inst_ops.push(ops);
            m.inst_res.push(res);
            m.insts[b].push(id);
        }
    }
    m.phi_in = vec![Vec::new(); m.nvalues as usize];
    for (b, phi) in phi_list {
        for &p in &preds[b] {
            let avail: Vec<u32> = (0..m.nvalues)
                .filter(|&v| dom[p].contains(&def_block[v as usize]))
                .collect();
            let op = if !avail.is_empty() && rng.gen_bool(0.8) {
                OperandRef::Value(ValueRef(avail[rng.gen_range(0..avail.len())]))
            } else {
                OperandRef::Const(ConstData::new(&[1]))
            };
            m.phi_in[phi.index()].push((BlockRef(p as u32), op));
        }
    }
    m
}

fn succ_lists(m: &Mock) -> Vec<Vec<usize>> {
    m.succs
        .iter()
        .map(|s| s.iter().map(|b| b.0 as usize).collect())
        .collect()
}

fn tarjan(succs: &[Vec<usize>], allowed: &BTreeSet<usize>) -> Vec<BTreeSet<usize>> {
    struct T<'a> {
        succs: &'a [Vec<usize>],
        allowed: &'a BTreeSet<usize>,
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<BTreeSet<usize>>,
    }
    impl T<'_> {
        fn visit(&mut self, v: usize) {
            self.index[v] = Some(self.next);
            self.low[v] = self.next;
            self.next += 1;
            self.stack.push(v);
            self.on[v] = true;
            for &w in &self.succs[v] {
                if !self.allowed.contains(&w) {
                    continue;
                }
                match self.index[w] {
                    None => {
                        self.visit(w);
                        self.low[v] = self.low[v].min(self.low[w]);
                    }
                    Some(iw) if self.on[w] => self.low[v] = self.low[v].min(iw),
                    _ => {}
                }
            }
            if Some(self.low[v]) == self.index[v] {
                let mut scc = BTreeSet::new();
                loop {
                    let w = self.stack.pop().unwrap();
                    self.on[w] = false;
                    scc.insert(w);
                    if w == v {
                        break;
                    }
                }
                let cyclic = scc.len() > 1 || self.succs[v].contains(&v);
                if cyclic {
                    self.out.push(scc);
                }
            }
        }
    }
    let n = succs.len();
    let mut t = T {
        succs,
        allowed,
        index: vec![None; n],
        low: vec![0; n],
        on: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for &v in allowed {
        if t.index[v].is_none() {
            t.visit(v);
        }
    }
    t.out.sort();
    t.out
}

/// Blocks (temporary numbers) in the subtree of each loop.
fn loop_blocks(a: &Analysis) -> Vec<BTreeSet<usize>> {
    let mut sets = vec![BTreeSet::new(); a.forest.nodes.len()];
    for (i, blk) in a.order.layout.iter().enumerate() {
        let mut l = a.forest.block_loop[i];
        loop {
            sets[l as usize].insert(blk.0 as usize);
            if l == 0 {
                break;
            }
            l = a.forest.nodes[l as usize].parent;
        }
    }
    sets
}

fn check_invariants(m: &Mock, a: &Analysis) {
    let succs = succ_lists(m);
    let reach = reachable(&succs);
    let n = succs.len();
    let nreach = reach.iter().filter(|&&r| r).count();
    let layout_of: Vec<Option<usize>> = (0..n)
        .map(|b| a.order.layout.iter().position(|x| x.0 as usize == b))
        .collect();

    // Layout: entry first, permutation of reachable blocks, aux written.
    assert_eq!(a.order.layout.len(), nreach);
    assert_eq!(a.order.layout[0], BlockRef(0));
    for b in 0..n {
        assert_eq!(layout_of[b].is_some(), reach[b]);
        if let Some(i) = layout_of[b] {
            let aux = m.block_aux(BlockRef(b as u32));
            assert_eq!(aux_layout_index(aux), i as u32);
            assert_eq!(aux & AUX_VISITED, 0);
            let npred: usize = succs.iter().map(|s| s.iter().filter(|&&t| t == b).count()).sum();
            assert_eq!(aux_multi_pred(aux), npred > 1);
            assert_eq!(a.order.multi_pred[i], npred > 1);
        }
    }

    // Forest: loops match the SCC decomposition at every level.
    let sets = loop_blocks(a);
    let root = &a.forest.nodes[0];
    assert_eq!(root.level, 0);
    assert_eq!(root.span, (0, nreach as u32 - 1));
    let reach_set: BTreeSet<usize> = (0..n).filter(|&b| reach[b]).collect();
    for (l, node) in a.forest.nodes.iter().enumerate() {
        // Contiguity.
        assert_eq!(
            (node.span.1 - node.span.0 + 1) as usize,
            sets[l].len(),
            "loop {l} not contiguous"
        );
        for &b in &sets[l] {
            assert!(node.contains(layout_of[b].unwrap() as u32));
        }
        if l > 0 {
            let p = &a.forest.nodes[node.parent as usize];
            assert_eq!(node.level, p.level + 1);
            assert!(p.span.0 <= node.span.0 && node.span.1 <= p.span.1);
        }
        // Children of this loop are the cyclic SCCs of its body without
        // the header.
        let mut body = if l == 0 { reach_set.clone() } else { sets[l].clone() };
        if l > 0 {
            body.remove(&(node.header.0 as usize));
        }
        let expected = tarjan(&succs, &body);
        let mut children: Vec<BTreeSet<usize>> = (1..a.forest.nodes.len())
            .filter(|&c| a.forest.nodes[c].parent as usize == l)
            .map(|c| sets[c].clone())
            .collect();
        children.sort();
        assert_eq!(children, expected, "loop {l}");
    }

    // Backward edges stay inside a loop containing both ends.
    for (u, ss) in succs.iter().enumerate() {
        let Some(lu) = layout_of[u] else { continue };
        for &v in ss {
            let lv = layout_of[v].unwrap();
            if lv <= lu {
                let inside = a.forest.nodes.iter().skip(1).any(|nd| {
                    nd.contains(lu as u32) && nd.contains(lv as u32)
                });
                assert!(inside, "backward edge {u}->{v} outside any loop");
            }
        }
    }

    // Liveness soundness and tail tightness.
    for r in &a.liveness.ranges {
        assert!(r.first <= r.last);
    }
    let violations = liveness_violations(m, a);
    assert!(violations.is_empty(), "{violations:?}");

    // Use counts.
    let mut counts = vec![0u32; m.nvalues as usize];
    for b in (0..n).filter(|&b| reach[b]) {
        for &i in &m.insts[b] {
            for op in &m.inst_ops[i as usize] {
                if let OperandRef::Value(v) = op {
                    counts[v.index()] += 1;
                }
            }
        }
        for s in &m.succs[b] {
            for phi in &m.phis[s.0 as usize] {
                if let Some((_, OperandRef::Value(v))) =
                    m.phi_in[phi.index()].iter().find(|(f, _)| f.0 as usize == b)
                {
                    counts[v.index()] += 1;
                }
            }
        }
    }
    let got: Vec<u32> = a.liveness.ranges.iter().map(|r| r.use_count).collect();
    assert_eq!(got, counts);
}

#[test]
fn random_cfgs_satisfy_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..600 {
        let mut m = random_mock(&mut rng, 40);
        let a = analyze(&mut m);
        check_invariants(&m, &a);
    }
}

#[test]
fn analysis_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let m = random_mock(&mut rng, 40);
        let (mut m1, mut m2) = (m.clone(), m);
        assert_eq!(analyze(&mut m1).dump(), analyze(&mut m2).dump());
        assert_eq!(m1.aux, m2.aux);
    }
}

fn analyze_src(src: &str) -> (Analysis, Vec<String>) {
    let module = parse_module(src).unwrap();
    let mut ad = SeedAdapter::new(&module);
    ad.prepare(FuncRef(0));
    let a = analyze(&mut ad);
    let f = &module.functions[0];
    let labels = a
        .order
        .layout
        .iter()
        .map(|b| f.blocks[b.0 as usize].label.clone())
        .collect();
    (a, labels)
}

#[test]
fn straight_line_has_only_the_root() {
    let (a, labels) = analyze_src("func @f() -> i64 { a: br b b: br c c: ret 0 }");
    assert_eq!(labels, ["a", "b", "c"]);
    assert_eq!(a.forest.nodes.len(), 1);
    assert!(a.forest.block_loop.iter().all(|&l| l == 0));
}

#[test]
fn diamond_follows_declared_order() {
    let (_, labels) = analyze_src(
        "func @f(%x: i64) -> i64 { a: condbr %x, b, c b: br d c: br d d: ret 0 }",
    );
    assert_eq!(labels, ["a", "b", "c", "d"]);
}

#[test]
fn loop_body_is_pulled_before_exit() {
    let (a, labels) = analyze_src(
        "func @f(%x: i64) -> i64 { a: br b b: condbr %x, d, c c: br b d: ret 0 }",
    );
    assert_eq!(labels, ["a", "b", "c", "d"]);
    assert_eq!(a.forest.nodes.len(), 2);
    let l = &a.forest.nodes[1];
    assert_eq!((l.level, l.parent, l.span), (1, 0, (1, 2)));
    assert!(!l.irreducible);
}

#[test]
fn irreducible_region_is_one_loop() {
    let (a, labels) = analyze_src(
        "func @f(%x: i64) -> i64 {
         a: condbr %x, b, c
         b: condbr %x, c, d
         c: br b
         d: ret 0 }",
    );
    assert_eq!(labels, ["a", "b", "c", "d"]);
    assert_eq!(a.forest.nodes.len(), 2);
    assert_eq!(a.forest.nodes[1].span, (1, 2));
    assert!(a.forest.nodes[1].irreducible);
}

#[test]
fn single_block() {
    let (a, labels) = analyze_src("func @f() -> i64 { a: ret 0 }");
    assert_eq!(labels, ["a"]);
    assert_eq!(a.forest.nodes[0].span, (0, 0));
}

#[test]
fn liveness_examples() {
    let (a, _) = analyze_src(
        "func @f(%n: i64, %unused: i64) -> i64 {
         a: %v = add %n, 1
            br b
         b: condbr %n, d, c
         c: %w = add %v, 1
            br b
         d: %z = add %n, 2
            ret %z }",
    );
    let r = |v: usize| a.liveness.ranges[v];
    // %v: defined before the loop, used inside it.
    assert_eq!(r(2), LiveRange { first: 0, last: 2, ends_at_block_end: true, use_count: 1 });
    // %unused
    assert_eq!(r(1), LiveRange { first: 0, last: 0, ends_at_block_end: false, use_count: 0 });
    // %z is local.
    assert_eq!(r(4), LiveRange { first: 3, last: 3, ends_at_block_end: false, use_count: 1 });
    assert!(a.dump().contains("v2 [0,2] end=out uses=1\n"));
}
