//! Structural and strict-SSA validation.

use std::fmt;

use super::{BlockId, Function, Module, Opcode, Operand, Type, ValueId};

/// One rule violation. `rule` is a stable, machine-matchable name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub function: String,
    pub block: Option<String>,
    pub value: Option<String>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in @{}", self.rule, self.function)?;
        if let Some(b) = &self.block {
            write!(f, ", block '{b}'")?;
        }
        if let Some(v) = &self.value {
            write!(f, ", value '%{v}'")?;
        }
        Ok(())
    }
}

/// Immediate dominators over the reachable part of the CFG, using the
/// iterative algorithm of Cooper, Harvey and Kennedy.
pub(crate) struct Dominators {
    idom: Vec<Option<usize>>,
    rpo_index: Vec<usize>,
}

impl Dominators {
    pub(crate) fn compute(succs: &[Vec<usize>], entry: usize) -> Self {
        let n = succs.len();
        let mut post = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut stack = vec![(entry, 0usize)];
        seen[entry] = true;
        while let Some((b, i)) = stack.last_mut() {
            if let Some(&s) = succs[*b].get(*i) {
                *i += 1;
                if !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                post.push(*b);
                stack.pop();
            }
        }
        let mut rpo_index = vec![usize::MAX; n];
        for (i, &b) in post.iter().rev().enumerate() {
            rpo_index[b] = i;
        }
        let mut preds = vec![Vec::new(); n];
        for (b, ss) in succs.iter().enumerate() {
            if seen[b] {
                for &s in ss {
                    preds[s].push(b);
                }
            }
        }
        let mut idom = vec![None; n];
        idom[entry] = Some(entry);
        let mut changed = true;
        while changed {
            changed = false;
            for &b in post.iter().rev().skip(1) {
                let mut new = None;
                for &p in &preds[b] {
                    if idom[p].is_none() {
                        continue;
                    }
                    new = Some(match new {
                        None => p,
                        Some(cur) => {
                            let (mut x, mut y) = (p, cur);
                            while x != y {
                                while rpo_index[x] > rpo_index[y] {
                                    x = idom[x].unwrap();
                                }
                                while rpo_index[y] > rpo_index[x] {
                                    y = idom[y].unwrap();
                                }
                            }
                            x
                        }
                    });
                }
                if new.is_some() && idom[b] != new {
                    idom[b] = new;
                    changed = true;
                }
            }
        }
        Dominators { idom, rpo_index }
    }

    pub(crate) fn reachable(&self, b: usize) -> bool {
        self.idom[b].is_some()
    }

    /// Whether `a` dominates `b` (reflexive).
    pub(crate) fn dominates(&self, a: usize, mut b: usize) -> bool {
        if !self.reachable(a) || !self.reachable(b) {
            return false;
        }
        loop {
            if a == b {
                return true;
            }
            let up = self.idom[b].unwrap();
            if up == b || self.rpo_index[b] < self.rpo_index[a] {
                return false;
            }
            b = up;
        }
    }
}

struct Checker<'a> {
    f: &'a Function,
    out: Vec<Violation>,
}

impl Checker<'_> {
    fn report(&mut self, rule: &'static str, block: Option<BlockId>, value: Option<ValueId>) {
        let f = self.f;
        let value = value.map(|v| {
            f.values
                .get(v.0 as usize)
                .map(|i| i.name.clone())
                .unwrap_or_else(|| format!("#{}", v.0))
        });
        self.out.push(Violation {
            rule,
            function: f.name.clone(),
            block: block.map(|b| f.blocks[b.0 as usize].label.clone()),
            value,
        });
    }
}

fn check_function(m: &Module, f: &Function) -> Vec<Violation> {
    let mut c = Checker { f, out: Vec::new() };
    let nb = f.blocks.len();
    let nv = f.values.len();
    if nb == 0 {
        c.report("no blocks", None, None);
        return c.out;
    }

    for sv in &f.stack_vars {
        if !sv.align.is_power_of_two() || sv.align > 16 {
            c.report("bad stack alignment", None, None);
        }
    }

    // Definition sites: (block, position) with position 0 for φs and
    // params, i + 1 for the i-th instruction.
    let mut def_site: Vec<Option<(usize, usize)>> = vec![None; nv];
    let mut define = |c: &mut Checker, v: ValueId, site: (usize, usize)| {
        if v.0 as usize >= nv {
            c.report("undefined value", Some(BlockId(site.0 as u32)), None);
            return;
        }
        if def_site[v.0 as usize].replace(site).is_some() {
            c.report("multiple definitions", Some(BlockId(site.0 as u32)), Some(v));
        }
    };
    for &p in &f.params {
        define(&mut c, p, (0, 0));
    }
    for (bi, b) in f.blocks.iter().enumerate() {
        for phi in &b.phis {
            define(&mut c, phi.result, (bi, 0));
        }
        for (ii, inst) in b.insts.iter().enumerate() {
            if let Some(r) = inst.result {
                define(&mut c, r, (bi, ii + 1));
            }
        }
    }

    let mut succs = vec![Vec::new(); nb];
    for (bi, b) in f.blocks.iter().enumerate() {
        let blk = Some(BlockId(bi as u32));
        match b.insts.last() {
            Some(t) if t.op.is_terminator() => {
                let want = match t.op {
                    Opcode::Br => 1,
                    Opcode::CondBr => 2,
                    _ => 0,
                };
                if t.targets.len() != want || t.targets.iter().any(|x| x.0 as usize >= nb) {
                    c.report("malformed terminator", blk, None);
                } else {
                    succs[bi] = t.targets.iter().map(|x| x.0 as usize).collect();
                }
            }
            _ => c.report("missing terminator", blk, None),
        }
        if b.insts.iter().rev().skip(1).any(|i| i.op.is_terminator()) {
            c.report("terminator in the middle of a block", blk, None);
        }
    }

    let dom = Dominators::compute(&succs, 0);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); nb];
    for (bi, ss) in succs.iter().enumerate() {
        for &s in ss {
            if !preds[s].contains(&bi) {
                preds[s].push(bi);
            }
        }
    }
    if !preds[0].is_empty() {
        c.report("entry has predecessors", Some(BlockId(0)), None);
    }
    if !f.blocks[0].phis.is_empty() {
        c.report("entry has phi", Some(BlockId(0)), None);
    }
    for bi in 0..nb {
        if !dom.reachable(bi) {
            c.report("unreachable block", Some(BlockId(bi as u32)), None);
        }
    }

    let ty_of = |op: &Operand| match op {
        Operand::Value(v) => f.values.get(v.0 as usize).map(|i| i.ty),
        Operand::Const(_) => None,
    };
    // Checks that `op` used at (block, pos) is dominated by its definition.
    let check_use = |c: &mut Checker, op: &Operand, bi: usize, pos: usize| {
        let Operand::Value(v) = op else { return };
        let Some(site) = def_site.get(v.0 as usize).copied().flatten() else {
            c.report("undefined value", Some(BlockId(bi as u32)), Some(*v));
            return;
        };
        let ok = if site.0 == bi {
            site.1 < pos || (pos == usize::MAX)
        } else {
            dom.dominates(site.0, bi)
        };
        if !ok && dom.reachable(bi) {
            c.report("use not dominated", Some(BlockId(bi as u32)), Some(*v));
        }
    };

    for (bi, b) in f.blocks.iter().enumerate() {
        let blk = Some(BlockId(bi as u32));
        for phi in &b.phis {
            for &p in &preds[bi] {
                let inc: Vec<_> = phi.incoming.iter().filter(|(ib, _)| ib.0 as usize == p).collect();
                if inc.is_empty() {
                    c.report("phi incomplete", blk, Some(phi.result));
                } else if inc.len() > 1 {
                    c.report("conflicting multi-edge", blk, Some(phi.result));
                }
            }
            for (ib, op) in &phi.incoming {
                if ib.0 as usize >= nb || !preds[bi].contains(&(ib.0 as usize)) {
                    c.report("phi incoming from non-predecessor", blk, Some(phi.result));
                    continue;
                }
                if let Some(t) = ty_of(op) {
                    if t != phi.ty {
                        c.report("type mismatch", blk, Some(phi.result));
                    }
                }
                // Used at the end of the incoming block.
                check_use(&mut c, op, ib.0 as usize, usize::MAX);
            }
        }
        for (ii, inst) in b.insts.iter().enumerate() {
            for op in &inst.args {
                check_use(&mut c, op, bi, ii + 1);
            }
            let expect: Vec<Option<Type>> = match inst.op {
                Opcode::Call => {
                    let Some(callee) = inst.callee.and_then(|id| m.functions.get(id.0 as usize)) else {
                        c.report("call to unknown function", blk, None);
                        continue;
                    };
                    if callee.params.len() != inst.args.len() {
                        c.report("call arity mismatch", blk, None);
                        continue;
                    }
                    if inst.result.is_some() && callee.ret.is_none() {
                        c.report("type mismatch", blk, inst.result);
                    }
                    callee.params.iter().map(|&p| Some(callee.value_type(p))).collect()
                }
                Opcode::Ret => {
                    if inst.args.len() != f.ret.is_some() as usize {
                        c.report("return type mismatch", blk, None);
                        continue;
                    }
                    f.ret.map(Some).into_iter().collect()
                }
                Opcode::Addr => {
                    match inst.args.get(2) {
                        Some(Operand::Const(s)) if matches!(s.lo, 1 | 2 | 4 | 8) => {}
                        _ => c.report("bad addr scale", blk, inst.result),
                    }
                    match inst.args.get(3) {
                        Some(Operand::Const(d)) if i32::try_from(d.lo as i64).is_ok() => {}
                        _ => c.report("bad addr displacement", blk, inst.result),
                    }
                    vec![Some(Type::I64), Some(Type::I64), None, None]
                }
                Opcode::AllocaRef => {
                    match inst.args.first() {
                        Some(Operand::Const(i)) if (i.lo as usize) < f.stack_vars.len() => {}
                        _ => c.report("stack variable out of range", blk, inst.result),
                    }
                    vec![None]
                }
                Opcode::Trunc => vec![Some(Type::I128)],
                Opcode::Add128 => vec![Some(Type::I128); 2],
                Opcode::Load | Opcode::Zext128 | Opcode::CondBr => vec![Some(Type::I64)],
                Opcode::Br => vec![],
                _ => vec![Some(Type::I64); 2],
            };
            if expect.len() != inst.args.len() {
                c.report("operand count mismatch", blk, inst.result);
                continue;
            }
            for (op, want) in inst.args.iter().zip(&expect) {
                match (ty_of(op), want) {
                    (Some(t), Some(w)) if t != *w => c.report("type mismatch", blk, inst.result),
                    (Some(_), None) => c.report("expected constant", blk, inst.result),
                    _ => {}
                }
            }
        }
    }
    c.out
}

/// Validates every function of the module. Returns all violations found.
pub fn validate(m: &Module) -> Result<(), Vec<Violation>> {
    let v: Vec<Violation> = m.functions.iter().flat_map(|f| check_function(m, f)).collect();
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}
