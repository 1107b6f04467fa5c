//! Instruction compilers for the seed IR.

use std::collections::HashMap;

use super::{InstRef, SeedAdapter};
use crate::adapter::{BlockRef, IrAdapter, OperandRef, ValueRef};
use crate::codegen::{BranchCond, Lowering, RegSet, Session, ValHandle};
use crate::ir::{self, Opcode};
use crate::snippets::{invoke, AddrExpr, AddrReg, AsmOperand, SnippetSet};
use crate::visa::{Cond, Inst};

type S<'s, 'm> = Session<'s, SeedAdapter<'m>>;

pub struct SeedLowering<'p> {
    snippets: &'p SnippetSet,
    /// Compare results consumed only by the block's branch.
    fused_cmp: HashMap<u32, InstRef>,
    /// Address results folded into their loads and stores: (inst, users left).
    fused_addr: HashMap<u32, (InstRef, u32)>,
}

fn cmp_cond(op: Opcode) -> Option<Cond> {
    Some(match op {
        Opcode::CmpEq => Cond::Eq,
        Opcode::CmpNe => Cond::Ne,
        Opcode::CmpUlt => Cond::Ult,
        Opcode::CmpSlt => Cond::Slt,
        _ => return None,
    })
}

fn snippet_for(op: Opcode) -> Option<&'static str> {
    Some(match op {
        Opcode::Add => "add64",
        Opcode::Sub => "sub64",
        Opcode::Mul => "mul64",
        Opcode::And => "and64",
        Opcode::Or => "or64",
        Opcode::Xor => "xor64",
        Opcode::Shl => "shl64",
        Opcode::Shr => "shr64",
        Opcode::Udiv => "udiv64",
        Opcode::Urem => "urem64",
        _ => return None,
    })
}

fn asm(h: ValHandle, part: u32) -> AsmOperand {
    match h {
        ValHandle::Const(c) => AsmOperand::Const(c.part(part)),
        h => AsmOperand::Value(h, part),
    }
}

impl<'p> SeedLowering<'p> {
    pub fn new(snippets: &'p SnippetSet) -> Self {
        SeedLowering {
            snippets,
            fused_cmp: HashMap::new(),
            fused_addr: HashMap::new(),
        }
    }

    fn run(
        &self,
        s: &mut S,
        name: &str,
        inputs: &[AsmOperand],
        result: Option<ValueRef>,
        handles: Vec<ValHandle>,
    ) -> Result<(), String> {
        let plan = self
            .snippets
            .get(name)
            .ok_or_else(|| format!("snippet `{name}` is not defined"))?;
        let outs = invoke(plan, s, inputs);
        for h in handles {
            s.release(h);
        }
        let outs = outs?;
        if let Some(v) = result {
            for (p, r) in outs.into_iter().enumerate() {
                s.set_value(v, p as u32, r);
            }
        }
        Ok(())
    }

    /// Register operand of an address; constants go to a scratch register.
    fn addr_reg(s: &mut S, h: ValHandle) -> AddrReg {
        match h {
            ValHandle::Const(c) => {
                let r = s.alloc_scratch(RegSet::EMPTY);
                s.emit_const(r, c.part(0));
                AddrReg::Reg(r)
            }
            h => AddrReg::Value(h),
        }
    }

    /// Builds the address computed by `addr` instruction `i`.
    fn addr_expr(s: &mut S, i: InstRef, counted: bool, handles: &mut Vec<ValHandle>) -> AddrExpr {
        let ops = s.adapter.inst_operands(i).to_vec();
        let mut take = |s: &mut S, op: OperandRef| {
            let h = if counted { s.val_ref(op) } else { s.val_ref_uncounted(op) };
            handles.push(h);
            h
        };
        let konst = |op: OperandRef| match op {
            OperandRef::Const(c) => c.part(0),
            OperandRef::Value(_) => unreachable!("validated constant operand"),
        };
        let scale = konst(ops[2]) as u8;
        let mut disp = konst(ops[3]) as i64;
        let base = take(s, ops[0]);
        let base = Self::addr_reg(s, base);
        let index = match ops[1] {
            OperandRef::Const(c) => {
                let folded = (c.part(0) as i64)
                    .checked_mul(scale as i64)
                    .and_then(|x| x.checked_add(disp))
                    .filter(|&d| i32::try_from(d).is_ok());
                match folded {
                    Some(d) => {
                        disp = d;
                        None
                    }
                    None => {
                        let h = take(s, ops[1]);
                        Some((Self::addr_reg(s, h), scale))
                    }
                }
            }
            op => {
                let h = take(s, op);
                Some((AddrReg::Value(h), scale))
            }
        };
        let disp = match i32::try_from(disp) {
            Ok(d) => d,
            Err(_) => {
                // Too far for a displacement: add it to the base.
                let r = s.alloc_scratch(RegSet::EMPTY);
                match base {
                    AddrReg::Value(h) => s.copy_into(&h, 0, r),
                    AddrReg::Reg(b) => s.emit(Inst::Mov { dst: r, src: b }),
                }
                let k = s.alloc_scratch(RegSet::EMPTY);
                s.emit_const(k, disp as u64);
                s.emit(Inst::Alu { op: crate::visa::AluOp::Add, dst: r, src: k });
                return AddrExpr { base: Some(AddrReg::Reg(r)), index, disp: 0 };
            }
        };
        AddrExpr { base: Some(base), index, disp }
    }

    /// The pointer operand of a load or store.
    fn pointer(&mut self, s: &mut S, op: OperandRef, handles: &mut Vec<ValHandle>) -> AsmOperand {
        if let OperandRef::Value(v) = op {
            if let Some((ai, left)) = self.fused_addr.get_mut(&v.0) {
                *left -= 1;
                let (ai, last) = (*ai, *left == 0);
                return AsmOperand::Addr(Self::addr_expr(s, ai, last, handles));
            }
        }
        let h = s.val_ref(op);
        handles.push(h);
        asm(h, 0)
    }

    fn compare(&self, s: &mut S, cond: Cond, ops: &[OperandRef], result: ValueRef) {
        let hl = s.val_ref(ops[0]);
        let hr = s.val_ref(ops[1]);
        let l = s.load_any(&hl, 0);
        match hr {
            ValHandle::Const(c) if s.fold() && c.part(0) as i64 == c.part(0) as i32 as i64 => {
                s.emit(Inst::Cmpi { lhs: l, imm: c.part(0) as i32 })
            }
            _ => {
                let r = s.load_any(&hr, 0);
                s.emit(Inst::Cmp { lhs: l, rhs: r });
            }
        }
        let d = s.alloc_scratch(RegSet::EMPTY);
        s.emit(Inst::Setcc { dst: d, cond });
        s.release(hl);
        s.release(hr);
        s.set_value(result, 0, d);
    }
}

impl<'m> Lowering<SeedAdapter<'m>> for SeedLowering<'_> {
    fn begin_block(&mut self, s: &mut S, block: BlockRef) {
        self.fused_cmp.clear();
        self.fused_addr.clear();
        if !s.fold() {
            return;
        }
        let a = s.adapter;
        let insts = a.insts(block);
        let Some(&term) = insts.last() else { return };
        if a.inst(term).op == Opcode::CondBr {
            if let OperandRef::Value(c) = a.inst_operands(term)[0] {
                if let Some(&ci) = insts.iter().find(|&&i| a.inst_result(i) == Some(c)) {
                    if cmp_cond(a.inst(ci).op).is_some() && s.use_count(c) == 1 {
                        self.fused_cmp.insert(c.0, ci);
                    }
                }
            }
        }
        // Address results used only as pointers in this block.
        let mut ptr_uses: HashMap<u32, u32> = HashMap::new();
        let mut other_uses: HashMap<u32, u32> = HashMap::new();
        for &i in insts {
            let op = a.inst(i).op;
            for (k, o) in a.inst_operands(i).iter().enumerate() {
                if let OperandRef::Value(v) = o {
                    let is_ptr = k == 0 && matches!(op, Opcode::Load | Opcode::Store);
                    *if is_ptr { &mut ptr_uses } else { &mut other_uses }
                        .entry(v.0)
                        .or_default() += 1;
                }
            }
        }
        for &i in insts {
            if a.inst(i).op != Opcode::Addr {
                continue;
            }
            let v = a.inst_result(i).expect("addr has a result");
            let n = ptr_uses.get(&v.0).copied().unwrap_or(0);
            if n > 0 && n == s.use_count(v) && !other_uses.contains_key(&v.0) {
                self.fused_addr.insert(v.0, (i, n));
            }
        }
    }

    fn lower(&mut self, s: &mut S, i: InstRef) -> Result<(), String> {
        let a = s.adapter;
        let inst: &ir::Inst = a.inst(i);
        let ops = a.inst_operands(i).to_vec();
        let result = a.inst_result(i);
        match inst.op {
            op if snippet_for(op).is_some() => {
                let h0 = s.val_ref(ops[0]);
                let h1 = s.val_ref(ops[1]);
                let (name, second) = match (op, h1) {
                    (Opcode::Shl, ValHandle::Const(c)) if s.fold() => {
                        ("shl64c", AsmOperand::Const(c.part(0) & 63))
                    }
                    _ => (snippet_for(op).unwrap(), asm(h1, 0)),
                };
                self.run(s, name, &[asm(h0, 0), second], result, vec![h0, h1])
            }
            op if cmp_cond(op).is_some() => {
                let r = result.expect("compare has a result");
                if !self.fused_cmp.contains_key(&r.0) {
                    self.compare(s, cmp_cond(op).unwrap(), &ops, r);
                }
                Ok(())
            }
            Opcode::Addr => {
                let r = result.expect("addr has a result");
                if self.fused_addr.contains_key(&r.0) {
                    return Ok(());
                }
                let mut handles = Vec::new();
                let e = Self::addr_expr(s, i, true, &mut handles);
                self.run(s, "lea64", &[AsmOperand::Addr(e)], result, handles)
            }
            Opcode::Load => {
                let mut handles = Vec::new();
                let p = self.pointer(s, ops[0], &mut handles);
                self.run(s, "ld64", &[p], result, handles)
            }
            Opcode::Store => {
                let mut handles = Vec::new();
                let p = self.pointer(s, ops[0], &mut handles);
                let hv = s.val_ref(ops[1]);
                handles.push(hv);
                self.run(s, "st64", &[p, asm(hv, 0)], None, handles)
            }
            Opcode::AllocaRef => {
                let idx = match ops[0] {
                    OperandRef::Const(c) => c.part(0) as usize,
                    OperandRef::Value(_) => unreachable!("validated constant operand"),
                };
                s.define_frame_addr(result.expect("alloca_ref has a result"), idx);
                Ok(())
            }
            Opcode::Trunc => {
                let h = s.val_ref(ops[0]);
                self.run(s, "trunc", &[asm(h, 0)], result, vec![h])
            }
            Opcode::Zext128 => {
                let h = s.val_ref(ops[0]);
                self.run(s, "zext128", &[asm(h, 0)], result, vec![h])
            }
            Opcode::Add128 => {
                let h0 = s.val_ref(ops[0]);
                let h1 = s.val_ref(ops[1]);
                let inputs = [asm(h0, 0), asm(h0, 1), asm(h1, 0), asm(h1, 1)];
                self.run(s, "add128", &inputs, result, vec![h0, h1])
            }
            Opcode::Call => {
                let callee = inst.callee.expect("call has a callee").0;
                s.call(callee, &ops, result)
            }
            Opcode::Br => {
                s.branch(BlockRef(inst.targets[0].0));
                Ok(())
            }
            Opcode::CondBr => {
                let cond = match ops[0] {
                    OperandRef::Value(c) if self.fused_cmp.contains_key(&c.0) => {
                        let ci = self.fused_cmp[&c.0];
                        let cops = a.inst_operands(ci);
                        BranchCond::Compare {
                            cond: cmp_cond(a.inst(ci).op).unwrap(),
                            lhs: cops[0],
                            rhs: cops[1],
                        }
                    }
                    op => BranchCond::NonZero(op),
                };
                s.cond_branch(cond, BlockRef(inst.targets[0].0), BlockRef(inst.targets[1].0));
                Ok(())
            }
            Opcode::Ret => s.ret(&ops),
            op => Err(format!("no instruction compiler for `{}`", op.name())),
        }
    }

    fn describe(&self, s: &S, i: InstRef) -> String {
        let a = s.adapter;
        ir::print_inst(a.module(), a.function(), a.inst(i))
    }
}
