//! Greedy reduction of failing modules.
//!
//! Each step deletes one instruction, one φ or one conditional edge, keeps
//! the module valid, and is accepted only if the failure persists.

use onepass::ir::{validate, BlockId, Const, Function, Module, Opcode, Operand, Type, ValueId};

fn zero(ty: Type) -> Operand {
    match ty {
        Type::I64 => Operand::Const(Const::i64(0)),
        Type::I128 => Operand::Const(Const { lo: 0, hi: 0 }),
    }
}

fn replace_uses(f: &mut Function, v: ValueId, with: Operand) {
    let sub = |op: &mut Operand| {
        if *op == Operand::Value(v) {
            *op = with;
        }
    };
    for b in &mut f.blocks {
        for phi in &mut b.phis {
            for (_, op) in &mut phi.incoming {
                sub(op);
            }
        }
        for inst in &mut b.insts {
            for op in &mut inst.args {
                sub(op);
            }
        }
    }
}

/// Drops blocks unreachable from the entry and renumbers the rest.
fn prune(f: &mut Function) {
    let n = f.blocks.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(b) = stack.pop() {
        for s in f.blocks[b].succs() {
            let s = s.0 as usize;
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    if seen.iter().all(|&s| s) {
        return;
    }
    let mut map = vec![None; n];
    let mut k = 0;
    for b in 0..n {
        if seen[b] {
            map[b] = Some(BlockId(k));
            k += 1;
        }
    }
    // Values defined in dropped blocks can only be used by dropped blocks
    // or by φ inputs on edges from them, which go away too.
    let old = std::mem::take(&mut f.blocks);
    for (b, mut block) in old.into_iter().enumerate() {
        if !seen[b] {
            continue;
        }
        for phi in &mut block.phis {
            phi.incoming.retain(|(p, _)| seen[p.0 as usize]);
            for (p, _) in &mut phi.incoming {
                *p = map[p.0 as usize].unwrap();
            }
        }
        for inst in &mut block.insts {
            for t in &mut inst.targets {
                *t = map[t.0 as usize].unwrap();
            }
        }
        f.blocks.push(block);
    }
}

fn finish(mut f: Function) -> Function {
    prune(&mut f);
    f.renumber();
    f
}

/// Folds the sole successor of block `bi` into it when `bi` is that
/// block's only predecessor.
fn merge_into(f: &Function, bi: usize) -> Option<Function> {
    let t = f.blocks[bi].terminator().filter(|t| t.op == Opcode::Br)?;
    let c = t.targets[0].0 as usize;
    let preds = f.preds();
    if c == 0 || c == bi || preds[c].len() != 1 {
        return None;
    }
    let mut g = f.clone();
    let absorbed = std::mem::replace(
        &mut g.blocks[c],
        onepass::ir::Block {
            label: f.blocks[c].label.clone(),
            phis: vec![],
            insts: vec![],
        },
    );
    g.blocks[bi].insts.pop();
    g.blocks[bi].insts.extend(absorbed.insts);
    for phi in absorbed.phis {
        replace_uses(&mut g, phi.result, phi.incoming[0].1);
    }
    for b in &mut g.blocks {
        for phi in &mut b.phis {
            for (p, _) in &mut phi.incoming {
                if p.0 as usize == c {
                    *p = BlockId(bi as u32);
                }
            }
        }
    }
    Some(g)
}

/// All single-step reductions of function `fi`.
fn candidates(m: &Module, fi: usize) -> Vec<Function> {
    let f = &m.functions[fi];
    let mut out = Vec::new();
    for (bi, b) in f.blocks.iter().enumerate() {
        // Turn a conditional branch into a jump to either side.
        if let Some(t) = b.terminator().filter(|t| t.op == Opcode::CondBr) {
            for keep in 0..2 {
                let (kept, dropped) = (t.targets[keep], t.targets[1 - keep]);
                let mut g = f.clone();
                let term = g.blocks[bi].insts.last_mut().unwrap();
                term.op = Opcode::Br;
                term.args.clear();
                term.targets = vec![kept];
                for phi in &mut g.blocks[dropped.0 as usize].phis {
                    phi.incoming.retain(|(p, _)| p.0 as usize != bi);
                }
                out.push(finish(g));
            }
        }
        if let Some(g) = merge_into(f, bi) {
            out.push(finish(g));
        }
        for k in 0..b.phis.len() {
            let mut g = f.clone();
            let phi = g.blocks[bi].phis.remove(k);
            replace_uses(&mut g, phi.result, zero(phi.ty));
            out.push(finish(g));
        }
        for k in 0..b.insts.len().saturating_sub(1) {
            let mut g = f.clone();
            let inst = g.blocks[bi].insts.remove(k);
            if let Some(r) = inst.result {
                let ty = g.value_type(r);
                replace_uses(&mut g, r, zero(ty));
            }
            out.push(finish(g));
        }
    }
    out
}

/// Shrinks `m` while `fails` keeps returning true. Every intermediate
/// module passes validation.
pub fn minimize(m: &Module, fails: impl Fn(&Module) -> bool) -> Module {
    let mut cur = m.clone();
    loop {
        let mut progress = false;
        for fi in 0..cur.functions.len() {
            for g in candidates(&cur, fi) {
                let mut next = cur.clone();
                next.functions[fi] = g;
                if validate(&next).is_ok() && fails(&next) {
                    cur = next;
                    progress = true;
                    break;
                }
            }
        }
        if !progress {
            return cur;
        }
    }
}

pub fn size(m: &Module) -> usize {
    m.functions
        .iter()
        .flat_map(|f| &f.blocks)
        .map(|b| b.phis.len() + b.insts.len())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use onepass::ir::parse_module;

    #[test]
    fn shrinks_to_the_failing_instruction() {
        let m = parse_module(
            "func @f(%a: i64) -> i64 {
             entry:
               %x = add %a, 1
               %c = cmp.ult %x, 5
               condbr %c, l, r
             l:
               %y = mul %x, 3
               br j
             r:
               %z = udiv %x, %a
               br j
             j:
               %p = phi i64 [%y, l], [%z, r]
               ret %p
             }",
        )
        .unwrap();
        let has_udiv = |m: &Module| {
            m.functions[0]
                .blocks
                .iter()
                .flat_map(|b| &b.insts)
                .any(|i| i.op == Opcode::Udiv)
        };
        let small = minimize(&m, has_udiv);
        assert!(has_udiv(&small));
        assert!(validate(&small).is_ok());
        assert!(size(&small) < size(&m));
        assert!(size(&small) <= 3, "{}", onepass::ir::print_module(&small));
    }
}
