//! Block layout: reverse post-order in which every loop occupies a
//! contiguous range.
//!
//! Each loop is laid out by an RPO over its collapsed body, where direct
//! child loops appear as single nodes that are expanded recursively.

use super::loops::{find_loops, LoopTags};
use super::{BlockOrder, LoopForest, LoopNode, AUX_INDEX_MASK, AUX_MULTI_PRED, AUX_VISITED};
use crate::adapter::{BlockRef, IrAdapter};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Node {
    Block(u32),
    Loop(u32),
}

struct Forest {
    /// Header block per loop (temporary numbering); loop 0 is the root.
    header: Vec<u32>,
    parent: Vec<u32>,
    irreducible: Vec<bool>,
    /// Innermost loop per block.
    block_loop: Vec<u32>,
    /// Direct member blocks per loop, ascending.
    members: Vec<Vec<u32>>,
    /// All blocks in the subtree, ascending.
    subtree: Vec<Vec<u32>>,
}

fn build_forest(tags: &LoopTags, entry: u32) -> Forest {
    let n = tags.is_header.len();
    let mut headers: Vec<u32> = (0..n as u32)
        .filter(|&b| tags.is_header[b as usize])
        .collect();
    // Outer headers are visited first, so parents get lower indices.
    headers.sort_by_key(|&h| tags.preorder[h as usize]);
    let mut loop_of_header = vec![u32::MAX; n];
    for (i, &h) in headers.iter().enumerate() {
        loop_of_header[h as usize] = i as u32 + 1;
    }
    let mut header = vec![entry];
    let mut parent = vec![0];
    let mut irreducible = vec![false];
    for &h in &headers {
        header.push(h);
        parent.push(tags.header_of(h).map_or(0, |p| loop_of_header[p as usize]));
        irreducible.push(tags.irreducible[h as usize]);
    }
    let block_loop: Vec<u32> = (0..n as u32)
        .map(|b| {
            if tags.is_header[b as usize] {
                loop_of_header[b as usize]
            } else {
                tags.header_of(b).map_or(0, |h| loop_of_header[h as usize])
            }
        })
        .collect();
    let nl = header.len();
    let mut members = vec![Vec::new(); nl];
    let mut subtree = vec![Vec::new(); nl];
    for b in 0..n as u32 {
        if tags.preorder[b as usize] == u32::MAX {
            continue;
        }
        let l = block_loop[b as usize];
        members[l as usize].push(b);
        let mut cur = l;
        loop {
            subtree[cur as usize].push(b);
            if cur == 0 {
                break;
            }
            cur = parent[cur as usize];
        }
    }
    Forest {
        header,
        parent,
        irreducible,
        block_loop,
        members,
        subtree,
    }
}

impl Forest {
    /// The node of loop `l` that contains block `b`, or None if `b` lies
    /// outside `l`.
    fn rep(&self, l: u32, b: u32) -> Option<Node> {
        let mut cur = self.block_loop[b as usize];
        if cur == l {
            return Some(Node::Block(b));
        }
        while cur != 0 {
            let p = self.parent[cur as usize];
            if p == l {
                return Some(Node::Loop(cur));
            }
            cur = p;
        }
        None
    }
}

struct Layouter<'a, A: IrAdapter> {
    adapter: &'a mut A,
    blocks: Vec<BlockRef>,
    succs: Vec<Vec<u32>>,
    forest: Forest,
    out: Vec<u32>,
}

impl<A: IrAdapter> Layouter<'_, A> {
    fn visited(&self, b: u32) -> bool {
        self.adapter.block_aux(self.blocks[b as usize]) & AUX_VISITED != 0
    }

    fn mark(&mut self, b: u32) {
        let br = self.blocks[b as usize];
        let aux = self.adapter.block_aux(br);
        self.adapter.set_block_aux(br, aux | AUX_VISITED);
    }

    /// Successors of `node` in the collapsed body of loop `l`, declared order.
    fn node_succs(&self, l: u32, node: Node) -> Vec<Node> {
        let (srcs, inner): (&[u32], Option<u32>) = match node {
            Node::Block(ref b) => (std::slice::from_ref(b), None),
            Node::Loop(c) => (&self.forest.subtree[c as usize], Some(c)),
        };
        let mut out = Vec::new();
        for &b in srcs {
            for &s in &self.succs[b as usize] {
                let Some(r) = self.forest.rep(l, s) else { continue };
                if Some(r) == inner.map(Node::Loop) {
                    continue;
                }
                out.push(r);
            }
        }
        out
    }

    fn node_visited(&self, n: Node) -> bool {
        match n {
            Node::Block(b) => self.visited(b),
            Node::Loop(c) => self.visited(self.forest.header[c as usize]),
        }
    }

    fn node_mark(&mut self, n: Node) {
        match n {
            Node::Block(b) => self.mark(b),
            Node::Loop(c) => self.mark(self.forest.header[c as usize]),
        }
    }

    /// Post-order DFS over the collapsed body of `l` from `start`.
    fn dfs(&mut self, l: u32, start: Node, post: &mut Vec<Node>) {
        self.node_mark(start);
        // Pending successors are popped from the back: visiting the last one
        // first puts the first one first in RPO.
        let mut stack = vec![(start, self.node_succs(l, start))];
        while let Some((node, pending)) = stack.last_mut() {
            let node = *node;
            if let Some(next) = pending.pop() {
                if !self.node_visited(next) {
                    self.node_mark(next);
                    let s = self.node_succs(l, next);
                    stack.push((next, s));
                }
            } else {
                post.push(node);
                stack.pop();
            }
        }
    }

    /// Emits loop `l` starting at `start`.
    fn layout_loop(&mut self, l: u32, start: Node) {
        let mut trees = Vec::new();
        let mut post = Vec::new();
        self.dfs(l, start, &mut post);
        trees.push(post);
        // Members not reachable from the start inside the body.
        let mut rest: Vec<Node> = self.forest.members[l as usize]
            .iter()
            .map(|&b| Node::Block(b))
            .collect();
        rest.extend(
            (1..self.forest.header.len() as u32)
                .filter(|&c| self.forest.parent[c as usize] == l && c != l)
                .map(Node::Loop),
        );
        for n in rest {
            if !self.node_visited(n) {
                let mut post = Vec::new();
                self.dfs(l, n, &mut post);
                trees.push(post);
            }
        }
        for post in trees {
            for node in post.into_iter().rev() {
                match node {
                    Node::Block(b) => self.out.push(b),
                    Node::Loop(c) => {
                        let h = self.forest.header[c as usize];
                        self.layout_loop(c, Node::Block(h));
                    }
                }
            }
        }
    }
}

/// Builds the loop forest and the block layout, and writes the layout index
/// and multi-predecessor flag into aux storage. Unreachable blocks are not
/// laid out.
pub fn compute_block_layout<A: IrAdapter>(adapter: &mut A) -> (BlockOrder, LoopForest) {
    let blocks = adapter.blocks().to_vec();
    // Temporary numbering.
    for (i, &b) in blocks.iter().enumerate() {
        adapter.set_block_aux(b, i as u64);
    }
    let mut pred_edges = vec![0u32; blocks.len()];
    let succs: Vec<Vec<u32>> = blocks
        .iter()
        .map(|&b| {
            adapter
                .succs(b)
                .iter()
                .map(|&s| {
                    let t = (adapter.block_aux(s) & AUX_INDEX_MASK) as u32;
                    pred_edges[t as usize] += 1;
                    t
                })
                .collect()
        })
        .collect();
    let tags = find_loops(&succs, 0);
    let forest = build_forest(&tags, 0);

    let mut lay = Layouter {
        adapter,
        blocks,
        succs,
        forest,
        out: Vec::new(),
    };
    let start = lay.forest.rep(0, 0).expect("entry is in the root");
    lay.layout_loop(0, start);

    let Layouter {
        adapter,
        blocks,
        forest,
        out,
        ..
    } = lay;
    let mut layout_of = vec![u32::MAX; blocks.len()];
    for (i, &b) in out.iter().enumerate() {
        layout_of[b as usize] = i as u32;
    }
    for (t, &b) in blocks.iter().enumerate() {
        let idx = layout_of[t];
        let mut aux = if idx == u32::MAX { AUX_INDEX_MASK } else { idx as u64 };
        if pred_edges[t] > 1 {
            aux |= AUX_MULTI_PRED;
        }
        adapter.set_block_aux(b, aux);
    }

    // Loop nodes renumbered by span start.
    let nl = forest.header.len();
    let mut spans = vec![(u32::MAX, 0u32); nl];
    for l in 0..nl {
        for &b in &forest.subtree[l] {
            let i = layout_of[b as usize];
            spans[l].0 = spans[l].0.min(i);
            spans[l].1 = spans[l].1.max(i);
        }
    }
    let mut perm: Vec<u32> = (0..nl as u32).collect();
    // Stable on ties: a parent and its first child can start at the same
    // index, and parents have lower indices.
    perm.sort_by_key(|&l| spans[l as usize].0);
    let mut new_of = vec![0u32; nl];
    for (new, &old) in perm.iter().enumerate() {
        new_of[old as usize] = new as u32;
    }
    let mut nodes: Vec<LoopNode> = Vec::with_capacity(nl);
    for &old in &perm {
        let o = old as usize;
        let parent = new_of[forest.parent[o] as usize];
        let level = if old == 0 { 0 } else { nodes[parent as usize].level + 1 };
        nodes.push(LoopNode {
            parent,
            level,
            header: blocks[forest.header[o] as usize],
            span: spans[o],
            irreducible: forest.irreducible[o],
        });
    }
    let block_loop = out
        .iter()
        .map(|&b| new_of[forest.block_loop[b as usize] as usize])
        .collect();
    let multi_pred = out.iter().map(|&b| pred_edges[b as usize] > 1).collect();
    let layout = out.iter().map(|&b| blocks[b as usize]).collect();
    (
        BlockOrder { layout, multi_pred },
        LoopForest { nodes, block_loop },
    )
}
