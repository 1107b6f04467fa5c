//! Random SSA function generator.
//!
//! Control flow is built from nested structured regions (sequences,
//! diamonds, triangles and loops); values are then placed so that every use
//! is dominated by its definition and join blocks merge values through φs.
//! Loops count iterations in a private stack slot that is reset before each
//! loop entry, so every generated program terminates.

use std::fmt::Write as _;

use onepass::ir::{parse_module, Module};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative frequency of each instruction family.
#[derive(Clone, Debug)]
pub struct OpWeights {
    pub arith: u32,
    pub divide: u32,
    pub compare: u32,
    pub memory: u32,
    pub wide: u32,
    pub call: u32,
}

impl Default for OpWeights {
    fn default() -> Self {
        OpWeights {
            arith: 10,
            divide: 2,
            compare: 3,
            memory: 3,
            wide: 2,
            call: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FuzzConfig {
    pub seed: u64,
    pub max_blocks: usize,
    pub max_insts: usize,
    pub weights: OpWeights,
    pub loop_prob: f64,
    pub wide_prob: f64,
    /// Add side entries into loop bodies.
    pub irreducible: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            seed: 1,
            max_blocks: 24,
            max_insts: 8,
            weights: OpWeights::default(),
            loop_prob: 0.3,
            wide_prob: 0.15,
            irreducible: false,
        }
    }
}

/// Name of the generated entry function.
pub const ENTRY: &str = "f";

const DATA_BYTES: u32 = 64;
const EDGE_VALUES: [u64; 10] = [
    0,
    1,
    2,
    63,
    64,
    0x7fff_ffff,
    0x8000_0000,
    u64::MAX,
    1 << 63,
    0xffff_ffff,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ty {
    I64,
    I128,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::I64 => "i64",
            Ty::I128 => "i128",
        }
    }
}

#[derive(Clone, Debug)]
enum Term {
    Open,
    Br(usize),
    CondBr(usize, usize),
    /// Back edge guarded by the loop's counter slot.
    Latch { header: usize, exit: usize, slot: u32, trips: u64 },
    Ret,
}

#[derive(Clone, Debug)]
struct GBlock {
    term: Term,
    /// Counter slot reset at the end of this block (loop preheaders).
    resets: Vec<u32>,
    phis: Vec<(usize, Vec<(usize, String)>)>,
    body: Vec<String>,
    defs: Vec<usize>,
}

impl GBlock {
    fn new() -> Self {
        GBlock {
            term: Term::Open,
            resets: Vec::new(),
            phis: Vec::new(),
            body: Vec::new(),
            defs: Vec::new(),
        }
    }

    fn succs(&self) -> Vec<usize> {
        match self.term {
            Term::Open | Term::Ret => vec![],
            Term::Br(t) => vec![t],
            Term::CondBr(a, b) => vec![a, b],
            Term::Latch { header, exit, .. } => vec![header, exit],
        }
    }
}

struct Gen<'c> {
    cfg: &'c FuzzConfig,
    rng: ChaCha8Rng,
    blocks: Vec<GBlock>,
    values: Vec<Ty>,
    slots: u32,
    depth: u32,
}

/// Deterministic per-function RNG.
fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

impl<'c> Gen<'c> {
    fn new_block(&mut self) -> usize {
        self.blocks.push(GBlock::new());
        self.blocks.len() - 1
    }

    fn budget_left(&self) -> bool {
        self.blocks.len() + 3 < self.cfg.max_blocks
    }

    /// Grows a region from the open block `b`; returns the region's open
    /// exit block.
    fn region(&mut self, mut b: usize) -> usize {
        self.depth += 1;
        while self.budget_left() && self.rng.gen_bool(0.7) {
            let roll: f64 = self.rng.gen();
            if self.depth <= 3 && roll < self.cfg.loop_prob {
                b = self.lp(b);
            } else if self.depth <= 4 && roll < self.cfg.loop_prob + 0.35 {
                b = self.diamond(b);
            } else {
                let n = self.new_block();
                self.blocks[b].term = Term::Br(n);
                b = n;
            }
        }
        self.depth -= 1;
        b
    }

    fn diamond(&mut self, b: usize) -> usize {
        let then = self.new_block();
        if self.rng.gen_bool(0.3) {
            // Triangle: the skip edge is critical.
            let t_end = self.region(then);
            let join = self.new_block();
            self.blocks[b].term = Term::CondBr(then, join);
            self.blocks[t_end].term = Term::Br(join);
            return join;
        }
        let els = self.new_block();
        self.blocks[b].term = Term::CondBr(then, els);
        let t_end = self.region(then);
        let e_end = self.region(els);
        let join = self.new_block();
        self.blocks[t_end].term = Term::Br(join);
        self.blocks[e_end].term = Term::Br(join);
        join
    }

    fn lp(&mut self, b: usize) -> usize {
        let slot = self.slots;
        self.slots += 1;
        self.blocks[b].resets.push(slot);
        let header = self.new_block();
        let body = self.new_block();
        if self.cfg.irreducible && self.rng.gen_bool(0.5) {
            self.blocks[b].term = Term::CondBr(header, body);
        } else {
            self.blocks[b].term = Term::Br(header);
        }
        let early_exit = self.rng.gen_bool(0.3);
        let latch = self.region(body);
        let exit = self.new_block();
        self.blocks[header].term = if early_exit {
            Term::CondBr(body, exit)
        } else {
            Term::Br(body)
        };
        let trips = self.rng.gen_range(1..=5);
        self.blocks[latch].term = Term::Latch {
            header,
            exit,
            slot,
            trips,
        };
        exit
    }

    fn preds(&self) -> Vec<Vec<usize>> {
        let mut p = vec![Vec::new(); self.blocks.len()];
        for (i, b) in self.blocks.iter().enumerate() {
            for s in b.succs() {
                p[s].push(i);
            }
        }
        p
    }

    /// Reverse post-order and immediate dominators.
    fn dominators(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.blocks.len();
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut stack = vec![(0usize, 0usize)];
        seen[0] = true;
        while let Some(&mut (b, ref mut k)) = stack.last_mut() {
            let succs = self.blocks[b].succs();
            if *k < succs.len() {
                let s = succs[*k];
                *k += 1;
                if !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                order.push(b);
                stack.pop();
            }
        }
        order.reverse();
        let mut rpo_idx = vec![usize::MAX; n];
        for (i, &b) in order.iter().enumerate() {
            rpo_idx[b] = i;
        }
        let preds = self.preds();
        let mut idom = vec![usize::MAX; n];
        idom[0] = 0;
        let mut changed = true;
        while changed {
            changed = false;
            for &b in order.iter().skip(1) {
                let mut new = usize::MAX;
                for &p in &preds[b] {
                    if idom[p] == usize::MAX {
                        continue;
                    }
                    new = if new == usize::MAX {
                        p
                    } else {
                        let (mut x, mut y) = (p, new);
                        while x != y {
                            while rpo_idx[x] > rpo_idx[y] {
                                x = idom[x];
                            }
                            while rpo_idx[y] > rpo_idx[x] {
                                y = idom[y];
                            }
                        }
                        x
                    };
                }
                if idom[b] != new {
                    idom[b] = new;
                    changed = true;
                }
            }
        }
        (order, idom)
    }

    fn value(&mut self, ty: Ty) -> usize {
        self.values.push(ty);
        self.values.len() - 1
    }

    fn konst(&mut self) -> String {
        match self.rng.gen_range(0..4) {
            0 => self.rng.gen_range(0..16u64).to_string(),
            1 => (self.rng.gen_range(-100_000i64..100_000)).to_string(),
            2 => format!("{:#x}", self.rng.gen::<u64>()),
            _ => EDGE_VALUES.choose(&mut self.rng).unwrap().to_string(),
        }
    }

    fn wide_konst(&mut self) -> String {
        let lo = self.konst();
        let hi = self.konst();
        format!("i128({lo}, {hi})")
    }

    fn pick(&mut self, avail: &[usize], ty: Ty) -> Option<usize> {
        let c: Vec<usize> = avail.iter().copied().filter(|&v| self.values[v] == ty).collect();
        c.choose(&mut self.rng).copied()
    }

    fn operand(&mut self, avail: &[usize], ty: Ty) -> String {
        if self.rng.gen_bool(0.75) {
            if let Some(v) = self.pick(avail, ty) {
                return format!("%v{v}");
            }
        }
        match ty {
            Ty::I64 => self.konst(),
            Ty::I128 => self.wide_konst(),
        }
    }

    /// Value operand if any exists; constants only as a fallback.
    fn value_operand(&mut self, avail: &[usize], ty: Ty) -> String {
        match self.pick(avail, ty) {
            Some(v) => format!("%v{v}"),
            None => self.operand(avail, ty),
        }
    }

    fn def(&mut self, b: usize, avail: &mut Vec<usize>, ty: Ty, rhs: String) -> usize {
        let v = self.value(ty);
        self.blocks[b].body.push(format!("%v{v} = {rhs}"));
        self.blocks[b].defs.push(v);
        avail.push(v);
        v
    }

    /// Defines a value that is never offered as an operand. Addresses differ
    /// between the interpreter and compiled code, so they must not leak
    /// into arithmetic.
    fn def_hidden(&mut self, b: usize, rhs: String) -> usize {
        let v = self.value(Ty::I64);
        self.blocks[b].body.push(format!("%v{v} = {rhs}"));
        v
    }

    fn address(&mut self, b: usize, avail: &mut Vec<usize>) -> String {
        let p = self.def_hidden(b, "alloca_ref 0".into());
        let scale = *[1u32, 2, 4, 8].choose(&mut self.rng).unwrap();
        let max_disp = DATA_BYTES - 8 - 7 * scale;
        let disp = self.rng.gen_range(0..=max_disp);
        let index = if self.rng.gen_bool(0.6) {
            let x = self.value_operand(avail, Ty::I64);
            let i = self.def(b, avail, Ty::I64, format!("and {x}, 7"));
            format!("%v{i}")
        } else {
            self.rng.gen_range(0..8u32).to_string()
        };
        if index == "0" && disp == 0 && self.rng.gen() {
            return format!("%v{p}");
        }
        let a = self.def_hidden(b, format!("addr %v{p}, {index}, {scale}, {disp}"));
        format!("%v{a}")
    }

    fn inst(&mut self, b: usize, avail: &mut Vec<usize>) {
        let w = &self.cfg.weights;
        let table = [w.arith, w.divide, w.compare, w.memory, w.wide, w.call];
        let total: u32 = table.iter().sum();
        let mut roll = self.rng.gen_range(0..total.max(1));
        let mut family = 0;
        for (k, &t) in table.iter().enumerate() {
            if roll < t {
                family = k;
                break;
            }
            roll -= t;
        }
        match family {
            0 => {
                let op = *["add", "sub", "mul", "and", "or", "xor", "shl", "shr"]
                    .choose(&mut self.rng)
                    .unwrap();
                let a = self.value_operand(avail, Ty::I64);
                let c = self.operand(avail, Ty::I64);
                self.def(b, avail, Ty::I64, format!("{op} {a}, {c}"));
            }
            1 => {
                let op = if self.rng.gen() { "udiv" } else { "urem" };
                let a = self.operand(avail, Ty::I64);
                let d = if self.rng.gen_bool(0.9) {
                    let x = self.value_operand(avail, Ty::I64);
                    let nz = self.def(b, avail, Ty::I64, format!("or {x}, 1"));
                    format!("%v{nz}")
                } else {
                    self.operand(avail, Ty::I64)
                };
                self.def(b, avail, Ty::I64, format!("{op} {a}, {d}"));
            }
            2 => {
                let op = *["cmp.eq", "cmp.ne", "cmp.ult", "cmp.slt"].choose(&mut self.rng).unwrap();
                let a = self.value_operand(avail, Ty::I64);
                let c = self.operand(avail, Ty::I64);
                self.def(b, avail, Ty::I64, format!("{op} {a}, {c}"));
            }
            3 => {
                let a = self.address(b, avail);
                if self.rng.gen() {
                    let v = self.operand(avail, Ty::I64);
                    self.blocks[b].body.push(format!("store {a}, {v}"));
                } else {
                    self.def(b, avail, Ty::I64, format!("load {a}"));
                }
            }
            4 => match self.rng.gen_range(0..3) {
                0 => {
                    let a = self.operand(avail, Ty::I64);
                    self.def(b, avail, Ty::I128, format!("zext128 {a}"));
                }
                1 => {
                    let a = self.value_operand(avail, Ty::I128);
                    let c = self.operand(avail, Ty::I128);
                    self.def(b, avail, Ty::I128, format!("add128 {a}, {c}"));
                }
                _ => {
                    if self.pick(avail, Ty::I128).is_some() {
                        let a = self.value_operand(avail, Ty::I128);
                        self.def(b, avail, Ty::I64, format!("trunc {a}"));
                    }
                }
            },
            _ => {
                if self.rng.gen_bool(0.7) {
                    let x = self.operand(avail, Ty::I64);
                    let y = self.operand(avail, Ty::I64);
                    self.def(b, avail, Ty::I64, format!("call @h({x}, {y})"));
                } else {
                    let x = self.operand(avail, Ty::I128);
                    let y = self.operand(avail, Ty::I64);
                    self.def(b, avail, Ty::I128, format!("call @w({x}, {y})"));
                }
            }
        }
    }

    fn condition(&mut self, b: usize, avail: &mut Vec<usize>) -> String {
        if self.rng.gen_bool(0.7) {
            let op = *["cmp.eq", "cmp.ne", "cmp.ult", "cmp.slt"].choose(&mut self.rng).unwrap();
            let a = self.value_operand(avail, Ty::I64);
            let c = self.operand(avail, Ty::I64);
            let v = self.def(b, avail, Ty::I64, format!("{op} {a}, {c}"));
            format!("%v{v}")
        } else {
            self.value_operand(avail, Ty::I64)
        }
    }

    fn ty(&mut self) -> Ty {
        if self.rng.gen_bool(self.cfg.wide_prob) {
            Ty::I128
        } else {
            Ty::I64
        }
    }
}

/// Returns the generated module text for function `index`.
pub fn generate_text(cfg: &FuzzConfig, index: u64) -> String {
    let mut g = Gen {
        cfg,
        rng: rng_for(cfg.seed, index),
        blocks: Vec::new(),
        values: Vec::new(),
        slots: 1,
        depth: 0,
    };
    let nparams = g.rng.gen_range(1..=4);
    // The calling convention passes at most six argument slots.
    let mut slots = 0;
    let params: Vec<(usize, Ty)> = (0..nparams)
        .map(|k| {
            let mut ty = if k > 0 { g.ty() } else { Ty::I64 };
            if ty == Ty::I128 && slots + 2 > 6 - (nparams - k - 1) {
                ty = Ty::I64;
            }
            slots += if ty == Ty::I128 { 2 } else { 1 };
            (g.value(ty), ty)
        })
        .collect();
    let ret = g.ty();

    let entry = g.new_block();
    let exit = g.region(entry);
    g.blocks[exit].term = Term::Ret;

    let (order, idom) = g.dominators();
    let preds = g.preds();

    // φs at every join.
    for b in 0..g.blocks.len() {
        if preds[b].len() > 1 {
            for _ in 0..g.rng.gen_range(0..=3) {
                let ty = g.ty();
                let v = g.value(ty);
                g.blocks[b].phis.push((v, Vec::new()));
                g.blocks[b].defs.push(v);
            }
        }
    }

    // Blocks are filled in RPO so that each block starts from what its
    // immediate dominator leaves available.
    let mut end_avail: Vec<Vec<usize>> = vec![Vec::new(); g.blocks.len()];
    for &b in &order {
        let mut avail = if b == 0 {
            params.iter().map(|&(v, _)| v).collect()
        } else {
            end_avail[idom[b]].clone()
        };
        avail.extend(g.blocks[b].defs.clone());
        let n = g.rng.gen_range(0..=cfg.max_insts);
        for _ in 0..n {
            g.inst(b, &mut avail);
        }
        let term = g.blocks[b].term.clone();
        let line = match term {
            Term::Open => unreachable!("unterminated block"),
            Term::Br(t) => format!("br b{t}"),
            Term::CondBr(t, f) => {
                let c = g.condition(b, &mut avail);
                format!("condbr {c}, b{t}, b{f}")
            }
            Term::Latch {
                header,
                exit,
                slot,
                trips,
            } => {
                let p = g.def_hidden(b, format!("alloca_ref {slot}"));
                let n = g.def(b, &mut avail, Ty::I64, format!("load %v{p}"));
                let n1 = g.def(b, &mut avail, Ty::I64, format!("add %v{n}, 1"));
                g.blocks[b].body.push(format!("store %v{p}, %v{n1}"));
                let c = g.def(b, &mut avail, Ty::I64, format!("cmp.ult %v{n1}, {trips}"));
                format!("condbr %v{c}, b{header}, b{exit}")
            }
            Term::Ret => {
                let v = g.operand(&avail, ret);
                format!("ret {v}")
            }
        };
        for slot in g.blocks[b].resets.clone() {
            let p = g.def_hidden(b, format!("alloca_ref {slot}"));
            g.blocks[b].body.push(format!("store %v{p}, 0"));
        }
        g.blocks[b].body.push(line);
        end_avail[b] = avail;
    }

    // φ inputs: anything available at the end of the predecessor.
    for b in 0..g.blocks.len() {
        for k in 0..g.blocks[b].phis.len() {
            let ty = g.values[g.blocks[b].phis[k].0];
            let incoming: Vec<(usize, String)> = preds[b]
                .iter()
                .map(|&p| (p, g.operand(&end_avail[p], ty)))
                .collect();
            g.blocks[b].phis[k].1 = incoming;
        }
    }

    let mut out = String::new();
    out.push_str(HELPERS);
    let plist: Vec<String> = params
        .iter()
        .map(|&(v, t)| format!("%v{v}: {}", t.name()))
        .collect();
    let _ = writeln!(out, "func @{ENTRY}({}) -> {} {{", plist.join(", "), ret.name());
    let _ = writeln!(out, "  stack {DATA_BYTES} align 8");
    for _ in 1..g.slots {
        let _ = writeln!(out, "  stack 8 align 8");
    }
    for (i, b) in g.blocks.iter().enumerate() {
        let _ = writeln!(out, "b{i}:");
        for (v, inc) in &b.phis {
            let list: Vec<String> = inc.iter().map(|(p, op)| format!("[{op}, b{p}]")).collect();
            let _ = writeln!(out, "  %v{v} = phi {} {}", g.values[*v].name(), list.join(", "));
        }
        for l in &b.body {
            let _ = writeln!(out, "  {l}");
        }
    }
    out.push_str("}\n");
    out
}

const HELPERS: &str = "\
func @h(%x: i64, %y: i64) -> i64 {
entry:
  %c = cmp.ult %x, %y
  condbr %c, lt, ge
lt:
  %d = sub %y, %x
  br done
ge:
  %e = xor %x, %y
  br done
done:
  %r = phi i64 [%d, lt], [%e, ge]
  %s = mul %r, 3
  ret %s
}
func @w(%a: i128, %b: i64) -> i128 {
entry:
  %z = zext128 %b
  %s = add128 %a, %z
  ret %s
}
";

pub fn generate(cfg: &FuzzConfig, index: u64) -> Module {
    let text = generate_text(cfg, index);
    parse_module(&text).unwrap_or_else(|e| panic!("generator produced invalid text: {e}\n{text}"))
}

/// Argument vectors for function `index`: edge values mixed with random
/// words, one slot per 64-bit part.
pub fn arg_vectors(cfg: &FuzzConfig, index: u64, m: &Module, count: usize) -> Vec<Vec<u64>> {
    let mut rng = rng_for(cfg.seed ^ 0xa5a5, index);
    let slots = m.function(ENTRY).map(|(_, f)| f.arg_slots()).unwrap_or(0);
    (0..count)
        .map(|_| {
            (0..slots)
                .map(|_| match rng.gen_range(0..3) {
                    0 => *EDGE_VALUES.choose(&mut rng).unwrap(),
                    1 => rng.gen_range(0..100),
                    _ => rng.gen(),
                })
                .collect()
        })
        .collect()
}

/// Hash of the texts of functions `0..count`; equal for equal configs.
pub fn corpus_hash(cfg: &FuzzConfig, count: u64) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for i in 0..count {
        generate_text(cfg, i).hash(&mut h);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use onepass::ir::validate;

    #[test]
    fn generated_modules_validate() {
        for irreducible in [false, true] {
            let cfg = FuzzConfig {
                irreducible,
                ..FuzzConfig::default()
            };
            for i in 0..200 {
                let m = generate(&cfg, i);
                if let Err(v) = validate(&m) {
                    panic!("{v:?}\n{}", generate_text(&cfg, i));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_text() {
        let cfg = FuzzConfig::default();
        assert_eq!(generate_text(&cfg, 17), generate_text(&cfg, 17));
        assert_ne!(generate_text(&cfg, 17), generate_text(&cfg, 18));
    }
}
