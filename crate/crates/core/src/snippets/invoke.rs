//! Running an [`EncoderPlan`] against a code generation session.

use super::parse::{Imm, ParamKind, TInst, TSrc};
use super::plan::{Candidate, EncoderPlan};
use crate::adapter::IrAdapter;
use crate::codegen::{RegSet, Session, Src, ValHandle};
use crate::visa::{AluOp, Inst, Label, Mem, Reg};

/// Register operand of an address expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddrReg {
    /// Part 0 of a value.
    Value(ValHandle),
    Reg(Reg),
}

/// `base + index*scale + disp`; no base means fp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddrExpr {
    pub base: Option<AddrReg>,
    pub index: Option<(AddrReg, u8)>,
    pub disp: i32,
}

/// Snippet input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsmOperand {
    /// A part of a value; the handle stays owned by the caller.
    Value(ValHandle, u32),
    /// A scratch register the snippet may overwrite. Must not be one of the
    /// snippet's fixed registers.
    Scratch(Reg),
    /// A register that is read only.
    Raw(Reg),
    Const(u64),
    Addr(AddrExpr),
}

impl AsmOperand {
    fn values(&self) -> impl Iterator<Item = u32> {
        let v = |a: &AddrReg| match a {
            AddrReg::Value(ValHandle::Value { v, .. }) => Some(*v),
            _ => None,
        };
        let list = match self {
            AsmOperand::Value(ValHandle::Value { v, .. }, _) => [Some(*v), None],
            AsmOperand::Addr(e) => [e.base.as_ref().and_then(v), e.index.as_ref().and_then(|i| v(&i.0))],
            _ => [None, None],
        };
        list.into_iter().flatten()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bind {
    Unset,
    /// Not yet materialized input.
    In(usize),
    Reg {
        r: Reg,
        /// The snippet may overwrite and free the register.
        owned: bool,
        input: Option<usize>,
    },
}

struct Exec<'x, 'a, A: IrAdapter> {
    plan: &'x EncoderPlan,
    s: &'x mut Session<'a, A>,
    inputs: &'x [AsmOperand],
    bind: Vec<Bind>,
    labels: Vec<Label>,
    fold: bool,
    /// Preassigned registers of defined template registers.
    pre: Vec<Option<Reg>>,
}

fn log2_scale(scale: u8) -> u8 {
    match scale {
        1 => 0,
        2 => 1,
        4 => 2,
        8 => 3,
        _ => panic!("internal error: address scale {scale}"),
    }
}

impl<A: IrAdapter> Exec<'_, '_, A> {
    fn caller_scratch(&self, r: Reg) -> bool {
        self.inputs.contains(&AsmOperand::Scratch(r))
    }

    fn addr_reg(&mut self, a: AddrReg) -> Reg {
        match a {
            AddrReg::Value(h) => self.s.load_any(&h, 0),
            AddrReg::Reg(r) => r,
        }
    }

    /// Memory operand for `e` displaced by `extra`, if the displacement fits.
    fn addr_mem(&mut self, e: AddrExpr, extra: i32) -> Option<Mem> {
        let mut disp = e.disp as i64 + extra as i64;
        let base = match e.base {
            None => Reg::FP,
            Some(AddrReg::Value(h)) => match self.s.location(&h, 0) {
                Src::FrameAddr(off) => {
                    disp -= off as i64;
                    Reg::FP
                }
                _ => self.s.load_any(&h, 0),
            },
            Some(AddrReg::Reg(r)) => r,
        };
        let index = e.index.map(|(i, sc)| (self.addr_reg(i), sc));
        let disp = i32::try_from(disp).ok()?;
        Some(Mem { base, index, disp })
    }

    /// Computes `e` into a fresh scratch register.
    fn addr_into_reg(&mut self, e: AddrExpr) -> Reg {
        let d = self.s.alloc_scratch(RegSet::EMPTY);
        match e.base {
            None => self.s.emit(Inst::Mov { dst: d, src: Reg::FP }),
            Some(AddrReg::Value(h)) => self.s.copy_into(&h, 0, d),
            Some(AddrReg::Reg(r)) => self.s.emit(Inst::Mov { dst: d, src: r }),
        }
        if let Some((i, scale)) = e.index {
            let ri = self.addr_reg(i);
            if scale == 1 {
                self.s.emit(Inst::Alu { op: AluOp::Add, dst: d, src: ri });
            } else {
                let t = self.s.alloc_scratch(RegSet::EMPTY);
                let k = self.s.alloc_scratch(RegSet::EMPTY);
                self.s.emit(Inst::Mov { dst: t, src: ri });
                self.s.emit(Inst::Movi { dst: k, imm: log2_scale(scale) as i32 });
                self.s.emit(Inst::Alu { op: AluOp::Shl, dst: t, src: k });
                self.s.emit(Inst::Alu { op: AluOp::Add, dst: d, src: t });
                self.s.free_scratch(t);
                self.s.free_scratch(k);
            }
        }
        if e.disp != 0 {
            self.s.emit(Inst::Addi { dst: d, imm: e.disp });
        }
        d
    }

    /// Places input `k` in a register: (register, owned).
    fn materialize(&mut self, k: usize) -> (Reg, bool) {
        match self.inputs[k] {
            AsmOperand::Value(h, p) => (self.s.load_any(&h, p), false),
            AsmOperand::Scratch(r) => (r, true),
            AsmOperand::Raw(r) => (r, false),
            AsmOperand::Const(c) => {
                let r = self.s.alloc_scratch(RegSet::EMPTY);
                self.s.emit_const(r, c);
                (r, true)
            }
            AsmOperand::Addr(e) => (self.addr_into_reg(e), true),
        }
    }

    fn resolve(&mut self, t: usize) -> Reg {
        match self.bind[t] {
            Bind::Reg { r, .. } => r,
            Bind::In(k) => {
                let (r, owned) = self.materialize(k);
                for b in &mut self.bind {
                    if *b == Bind::In(k) {
                        *b = Bind::Reg { r, owned, input: Some(k) };
                    }
                }
                r
            }
            Bind::Unset => panic!(
                "internal error: snippet `{}` reads dead `{}`",
                self.plan.name(),
                self.plan.def.tregs[t]
            ),
        }
    }

    fn src(&mut self, s: TSrc) -> Reg {
        match s {
            TSrc::T(t) => self.resolve(t),
            TSrc::Phys(r) => r,
        }
    }

    fn const_of(&self, s: TSrc) -> Option<u64> {
        match s {
            TSrc::T(t) => match self.bind[t] {
                Bind::In(k) => match self.inputs[k] {
                    AsmOperand::Const(c) => Some(c),
                    _ => None,
                },
                _ => None,
            },
            TSrc::Phys(_) => None,
        }
    }

    fn imm(&self, i: Imm) -> u64 {
        match i {
            Imm::Lit(v) => v as i64 as u64,
            Imm::Param(k) => match self.inputs[k] {
                AsmOperand::Const(c) => c,
                o => panic!("internal error: immediate parameter bound to {o:?}"),
            },
        }
    }

    /// Template registers sharing register `r`, plus those of inputs that
    /// refer to value `v`.
    fn sharers(&self, r: Reg, v: Option<u32>) -> Vec<usize> {
        let related = |k: usize| v.is_some_and(|v| self.inputs[k].values().any(|x| x == v));
        (0..self.bind.len())
            .filter(|&t| match self.bind[t] {
                Bind::Reg { r: x, input, .. } => x == r || input.is_some_and(related),
                Bind::In(k) => related(k),
                Bind::Unset => false,
            })
            .collect()
    }

    /// A register holding template register `t` that may be overwritten by
    /// instruction `i`: the register itself when `t` dies there, else a copy.
    fn writable(&mut self, t: usize, i: usize) -> Reg {
        let r = self.resolve(t);
        let Bind::Reg { owned, input, .. } = self.bind[t] else {
            unreachable!()
        };
        if owned && !self.plan.prelude.contains(&r) {
            if self.plan.dead_after(self.sharers(r, None), i) {
                return r;
            }
        } else if let Some(k) = input {
            if let AsmOperand::Value(h @ ValHandle::Value { v, .. }, p) = self.inputs[k] {
                let sharers = self.sharers(r, Some(v));
                if self.plan.def.params[k].kill
                    && self.plan.dead_after(sharers.iter().copied(), i)
                    && self.s.can_take_over(&h, p)
                {
                    self.s.take_over(&h, p);
                    for t in sharers {
                        if let Bind::Reg { r: x, ref mut owned, .. } = self.bind[t] {
                            if x == r {
                                *owned = true;
                            }
                        }
                    }
                    return r;
                }
            }
        }
        let n = self.s.alloc_scratch(RegSet::EMPTY);
        self.s.emit(Inst::Mov { dst: n, src: r });
        n
    }

    fn dest(&mut self, t: usize) -> Reg {
        match self.pre[t] {
            Some(r) => r,
            None => self.s.alloc_scratch(RegSet::EMPTY),
        }
    }

    fn define(&mut self, d: super::parse::Def, r: Reg) {
        let r = match d.fixed {
            Some(f) if f != r => {
                self.s.emit(Inst::Mov { dst: f, src: r });
                f
            }
            _ => r,
        };
        self.bind[d.t] = Bind::Reg { r, owned: true, input: None };
    }

    /// Memory operand for `[addr + disp]`.
    fn mem(&mut self, i: usize, addr: TSrc, disp: i32) -> Mem {
        if self.fold && self.plan.candidates[i].contains(&Candidate::FoldAddr) {
            if let TSrc::T(t) = addr {
                if let Bind::In(k) = self.bind[t] {
                    match self.inputs[k] {
                        AsmOperand::Addr(e) => {
                            if let Some(m) = self.addr_mem(e, disp) {
                                return m;
                            }
                        }
                        AsmOperand::Value(h, 0) => {
                            if let Src::FrameAddr(off) = self.s.location(&h, 0) {
                                if let Ok(d) = i32::try_from(disp as i64 - off as i64) {
                                    return Mem::base_disp(Reg::FP, d);
                                }
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        let base = self.src(addr);
        Mem::base_disp(base, disp)
    }

    fn step(&mut self, i: usize, inst: TInst) {
        let multi = self.plan.is_multi_block();
        match inst {
            TInst::Alu { op, dst, lhs, rhs } => {
                let imm = self
                    .const_of(rhs)
                    .filter(|&c| {
                        self.fold
                            && op == AluOp::Add
                            && !self.plan.flags_read_after[i]
                            && c as i64 == c as i32 as i64
                    })
                    .map(|c| c as i32);
                let rr = if imm.is_none() { Some(self.src(rhs)) } else { None };
                let TSrc::T(lt) = lhs else { unreachable!() };
                let d = if multi {
                    let d = self.dest(dst.t);
                    let l = self.resolve(lt);
                    if d != l {
                        self.s.emit(Inst::Mov { dst: d, src: l });
                    }
                    d
                } else {
                    self.writable(lt, i)
                };
                match (imm, rr) {
                    (Some(imm), _) => self.s.emit(Inst::Addi { dst: d, imm }),
                    (None, Some(src)) => self.s.emit(Inst::Alu { op, dst: d, src }),
                    _ => unreachable!(),
                }
                self.define(dst, d);
            }
            TInst::Mov { dst, src } => {
                if multi || dst.fixed.is_some() {
                    let r = self.src(src);
                    let d = match dst.fixed {
                        Some(f) => f,
                        None => self.dest(dst.t),
                    };
                    self.s.emit(Inst::Mov { dst: d, src: r });
                    self.bind[dst.t] = Bind::Reg { r: d, owned: true, input: None };
                } else {
                    // Alias: both names share one location until one of
                    // them is overwritten.
                    self.bind[dst.t] = match src {
                        TSrc::T(t) => self.bind[t],
                        TSrc::Phys(r) => Bind::Reg { r, owned: true, input: None },
                    };
                }
            }
            TInst::Movi { dst, imm } => {
                let d = self.dest(dst.t);
                let v = self.imm(imm);
                self.s.emit_const(d, v);
                self.define(dst, d);
            }
            TInst::Ld { dst, addr, disp } => {
                let mem = self.mem(i, addr, disp);
                let d = self.dest(dst.t);
                self.s.emit(Inst::Ld { dst: d, mem });
                self.define(dst, d);
            }
            TInst::St { addr, disp, src } => {
                let r = self.src(src);
                let mem = self.mem(i, addr, disp);
                self.s.emit(Inst::St { src: r, mem });
            }
            TInst::Cmp { lhs, rhs } => {
                let l = self.src(lhs);
                match self.const_of(rhs).filter(|&c| self.fold && c as i64 == c as i32 as i64) {
                    Some(c) => self.s.emit(Inst::Cmpi { lhs: l, imm: c as i32 }),
                    None => {
                        let r = self.src(rhs);
                        self.s.emit(Inst::Cmp { lhs: l, rhs: r });
                    }
                }
            }
            TInst::DivMod { dst, divisor } => {
                let d = self.src(divisor);
                self.s.emit(Inst::DivMod { divisor: d });
                let f = dst.fixed.expect("validated by the parser");
                self.bind[dst.t] = Bind::Reg { r: f, owned: true, input: None };
            }
            TInst::Jmp(l) => self.s.jump(self.labels[l]),
            TInst::Bcc(c, l) => self.s.branch_if(c, self.labels[l]),
            TInst::Label(l) => self.s.bind_label(self.labels[l]),
        }
        if !multi {
            self.free_dead(i);
        }
    }

    /// Returns registers whose template registers all died at `i`.
    fn free_dead(&mut self, i: usize) {
        for t in 0..self.bind.len() {
            if let Bind::Reg { r, owned: true, .. } = self.bind[t] {
                if self.plan.prelude.contains(&r) || self.caller_scratch(r) {
                    continue;
                }
                let sharers = self.sharers(r, None);
                if self.plan.dead_after(sharers.iter().copied(), i) {
                    self.s.free_scratch(r);
                    for t in sharers {
                        self.bind[t] = Bind::Unset;
                    }
                }
            }
        }
    }

    fn output(&mut self, t: usize, taken: &[Reg]) -> Reg {
        let r = self.resolve(t);
        let Bind::Reg { owned, input, .. } = self.bind[t] else {
            unreachable!()
        };
        if taken.contains(&r) {
            // Two outputs alias one register.
        } else if owned {
            return r;
        } else if let Some(k) = input {
            if let AsmOperand::Value(h, p) = self.inputs[k] {
                if self.plan.def.params[k].kill && self.s.can_take_over(&h, p) {
                    return self.s.take_over(&h, p);
                }
            }
        }
        let n = self.s.alloc_scratch(RegSet::EMPTY);
        self.s.emit(Inst::Mov { dst: n, src: r });
        n
    }
}

/// Emits the code of `plan` for `inputs` and returns one scratch register per
/// output, ready for [`Session::set_value`].
pub fn invoke<A: IrAdapter>(
    plan: &EncoderPlan,
    s: &mut Session<'_, A>,
    inputs: &[AsmOperand],
) -> Result<Vec<Reg>, String> {
    let def = &plan.def;
    if inputs.len() != def.params.len() {
        return Err(format!(
            "snippet `{}` takes {} operands, got {}",
            def.name,
            def.params.len(),
            inputs.len()
        ));
    }
    for (p, op) in def.params.iter().zip(inputs) {
        if p.kind == ParamKind::Imm && !matches!(op, AsmOperand::Const(_)) {
            return Err(format!("snippet `{}`: `{}` needs a constant", def.name, p.name));
        }
    }
    let fold = s.fold();
    let labels = def.labels.iter().map(|l| s.new_label(l)).collect();
    let mut bind = vec![Bind::Unset; def.tregs.len()];
    for (k, b) in bind.iter_mut().enumerate().take(def.params.len()) {
        *b = Bind::In(k);
    }
    let mut x = Exec {
        plan,
        s,
        inputs,
        bind,
        labels,
        fold,
        pre: vec![None; def.tregs.len()],
    };

    // Fixed registers first; locked values living there move elsewhere.
    let fixed = RegSet::of(&plan.prelude);
    for &r in &plan.prelude {
        x.s.claim_reg(r, fixed);
    }
    for f in &def.fixed {
        if let Some(k) = f.input {
            match inputs[k] {
                AsmOperand::Value(h, p) => x.s.copy_into(&h, p, f.reg),
                AsmOperand::Const(c) => x.s.emit_const(f.reg, c),
                AsmOperand::Scratch(r) | AsmOperand::Raw(r) => {
                    x.s.emit(Inst::Mov { dst: f.reg, src: r })
                }
                AsmOperand::Addr(e) => {
                    let r = x.addr_into_reg(e);
                    x.s.emit(Inst::Mov { dst: f.reg, src: r });
                }
            }
        }
    }

    if plan.is_multi_block() {
        // Nothing may be allocated once control flow splits.
        for (k, p) in def.params.iter().enumerate() {
            if p.kind == ParamKind::Gp {
                x.resolve(k);
            }
        }
        for inst in &def.body {
            if let Some(d) = inst.def() {
                if x.pre[d.t].is_none() {
                    x.pre[d.t] = Some(match d.fixed {
                        Some(f) => f,
                        None => x.s.alloc_scratch(fixed),
                    });
                }
            }
        }
    }

    for (i, &inst) in def.body.iter().enumerate() {
        x.step(i, inst);
    }

    let mut outs = Vec::with_capacity(def.outputs.len());
    for &t in &def.outputs {
        let r = x.output(t, &outs);
        outs.push(r);
    }
    Ok(outs)
}
