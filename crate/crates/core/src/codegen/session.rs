//! Per-function code generation state and the services instruction
//! compilers build on: value handles, register allocation, spilling and
//! moves.

use std::collections::HashMap;

use super::assignment::{flags, AssignmentTable, PartState};
use super::parallel::{sequentialize, Loc, Move, Src};
use super::regfile::{Choice, RegFile, RegSet, RegState, ALLOCATABLE};
use super::{CompileOptions, Event, Fault, FunctionArtifact};
use crate::adapter::{ConstData, IrAdapter, OperandRef, ValueRef};
use crate::analysis::Analysis;
use crate::visa::{
    emit_epilogue, emit_prologue, finalize_frame, format_inst, materialize, CodeBuffer, Cond,
    FrameLayout, Inst, Label, Mem, PatchPoint, PrologueSlots, Reg, ARG_REGS, CALLER_SAVED,
    RET_REGS, SAVE_SLOTS,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub spills: u32,
    pub reloads: u32,
    pub evictions: u32,
    pub moves: u32,
}

/// A use of an operand. Value handles lock every part of the value until
/// released; a counted handle also consumes one use on release.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValHandle {
    Const(ConstData),
    Value { v: u32, counted: bool },
}

pub enum BranchCond {
    /// Taken if the operand is nonzero.
    NonZero(OperandRef),
    /// Taken if `lhs cond rhs`.
    Compare {
        cond: Cond,
        lhs: OperandRef,
        rhs: OperandRef,
    },
}

pub(super) struct Binding {
    pub reg: Reg,
    pub v: u32,
    pub part: u32,
}

#[derive(Default)]
pub(super) struct LoopState {
    pub bound: bool,
    pub bindings: Vec<Binding>,
    /// Values defined in the loop that live across more than one block.
    pub candidates: Vec<u32>,
    pub bindable: bool,
}

pub struct Session<'a, A: IrAdapter> {
    pub adapter: &'a A,
    pub analysis: &'a Analysis,
    pub(super) opts: &'a CompileOptions,
    pub(super) name: String,
    pub(super) buf: CodeBuffer,
    prologue: Option<PrologueSlots>,
    pub(super) epilogues: Vec<PatchPoint>,
    pub(super) frame: FrameLayout,
    vars_end: u32,
    pub(super) regs: RegFile,
    pub(super) asg: AssignmentTable,
    /// Values defined so far and possibly still live.
    pub(super) live: Vec<u32>,
    pub(super) cur: u32,
    pub(super) labels: Vec<Label>,
    /// Whether block i keeps the register state left by block i-1.
    pub(super) carry: Vec<bool>,
    pub(super) loops: Vec<LoopState>,
    pub(super) active_loops: Vec<u32>,
    pub(super) fixed_home: HashMap<(u32, u32), Reg>,
    pub(super) inst_scratch: Vec<Reg>,
    locks_held: u32,
    pub(super) stats: SessionStats,
    pub(super) events: Vec<Event>,
    pub(super) audit_failures: Vec<String>,
}

const ALL_REGS: RegSet = RegSet((1 << ALLOCATABLE) - 1);

pub(super) fn fits_i32(v: u64) -> bool {
    v as i64 == v as i32 as i64
}

impl<'a, A: IrAdapter> Session<'a, A> {
    pub(super) fn new(
        adapter: &'a A,
        analysis: &'a Analysis,
        opts: &'a CompileOptions,
        name: String,
    ) -> Self {
        let n = adapter.value_count();
        let asg = AssignmentTable::new((0..n).map(|v| adapter.part_count(ValueRef(v))));
        let frame = FrameLayout::new(adapter.stack_vars().iter().map(|s| (s.size, s.align)));
        let mut buf = CodeBuffer::new();
        let layout = &analysis.order.layout;
        let labels = (0..layout.len()).map(|i| buf.new_label(format!("b{i}"))).collect();
        let carry = (0..layout.len())
            .map(|i| {
                i == 0
                    || (!analysis.order.multi_pred[i]
                        && adapter.succs(layout[i - 1]).contains(&layout[i]))
            })
            .collect();
        let forest = &analysis.forest;
        let mut loops: Vec<LoopState> = forest
            .nodes
            .iter()
            .enumerate()
            .map(|(l, node)| LoopState {
                bindable: l != 0 && !node.irreducible,
                ..LoopState::default()
            })
            .collect();
        for node in forest.nodes.iter().skip(1) {
            loops[node.parent as usize].bindable = false;
        }
        // Header φs first: they carry values around the back edge even when
        // the loop is a single block.
        for (l, node) in forest.nodes.iter().enumerate() {
            if loops[l].bindable {
                loops[l].candidates = adapter.phis(node.header).iter().map(|p| p.0).collect();
            }
        }
        for (v, r) in analysis.liveness.ranges.iter().enumerate() {
            if r.last > r.first && !forest.block_loop.is_empty() {
                let l = forest.innermost(r.first) as usize;
                let header = forest.nodes[l].header;
                let is_header_phi = adapter.phis(header).iter().any(|p| p.index() == v);
                if loops[l].bindable && !is_header_phi {
                    loops[l].candidates.push(v as u32);
                }
            }
        }
        Session {
            adapter,
            analysis,
            opts,
            name,
            buf,
            prologue: None,
            epilogues: Vec::new(),
            vars_end: frame.watermark(),
            frame,
            regs: RegFile::default(),
            asg,
            live: Vec::new(),
            cur: 0,
            labels,
            carry,
            loops,
            active_loops: Vec::new(),
            fixed_home: HashMap::new(),
            inst_scratch: Vec::new(),
            locks_held: 0,
            stats: SessionStats::default(),
            events: Vec::new(),
            audit_failures: Vec::new(),
        }
    }

    pub fn fold(&self) -> bool {
        self.opts.fold
    }

    pub fn function_name(&self) -> &str {
        &self.name
    }

    /// Layout index of the block being compiled.
    pub fn current_block(&self) -> u32 {
        self.cur
    }

    pub fn use_count(&self, v: ValueRef) -> u32 {
        self.analysis.liveness.ranges[v.index()].use_count
    }

    pub fn registers(&self) -> &RegFile {
        &self.regs
    }

    pub fn assignment(&self, v: u32) -> &super::Assignment {
        self.asg.get(v)
    }

    pub fn part_state(&self, v: u32, part: u32) -> PartState {
        *self.asg.part(v, part)
    }

    pub(super) fn event(&mut self, e: impl FnOnce() -> Event) {
        if self.opts.record_events {
            self.events.push(e());
        }
    }

    pub(super) fn audit_fail(&mut self, msg: String) {
        self.audit_failures.push(format!("'@{}': {msg}", self.name));
    }

    // Emission.

    pub fn emit(&mut self, inst: Inst) {
        self.emit_audited(inst, true)
    }

    /// Emits a sequence whose later instructions read registers the earlier
    /// ones wrote.
    fn emit_seq(&mut self, insts: impl IntoIterator<Item = Inst>) {
        for (k, i) in insts.into_iter().enumerate() {
            self.emit_audited(i, k == 0);
        }
    }

    fn emit_audited(&mut self, inst: Inst, audit: bool) {
        if self.opts.audit && audit {
            for r in inst.regs_read().into_iter().flatten() {
                if self.regs.state(r) == RegState::Free {
                    let msg = format!(
                        "word {}: `{}` reads free register {r}",
                        self.buf.pos(),
                        format_inst(&inst)
                    );
                    self.audit_fail(msg);
                }
            }
        }
        let word = self.buf.pos();
        self.event(|| Event::Emit {
            word,
            text: format_inst(&inst),
        });
        self.buf.emit(inst);
    }

    pub fn emit_const(&mut self, dst: Reg, value: u64) {
        self.emit_seq(materialize(dst, value));
    }

    /// `dst ← fp - offset` without touching the flags.
    pub fn emit_frame_addr(&mut self, dst: Reg, offset: u32) {
        self.emit_seq([
            Inst::Mov { dst, src: Reg::FP },
            Inst::Addi {
                dst,
                imm: -(offset as i32),
            },
        ]);
    }

    pub fn new_label(&mut self, name: &str) -> Label {
        self.buf.new_label(name)
    }

    pub fn bind_label(&mut self, l: Label) {
        self.buf
            .bind(l)
            .unwrap_or_else(|e| panic!("internal error: {e}"));
    }

    pub fn jump(&mut self, l: Label) {
        let word = self.buf.pos();
        self.event(|| Event::Emit {
            word,
            text: "jmp".into(),
        });
        self.buf.emit_jmp(l);
    }

    pub fn branch_if(&mut self, cond: Cond, l: Label) {
        let word = self.buf.pos();
        self.event(|| Event::Emit {
            word,
            text: format!("b{}", cond.name()),
        });
        self.buf.emit_bcc(cond, l);
    }

    // Function and instruction boundaries.

    pub(super) fn begin_function(&mut self) -> Result<(), String> {
        self.prologue = Some(emit_prologue(&mut self.buf));
        let args = self.adapter.args();
        let slots: u32 = args.iter().map(|&a| self.adapter.part_count(a)).sum();
        if slots as usize > ARG_REGS.len() {
            return Err(format!(
                "parameters need {slots} argument slots, at most {} supported",
                ARG_REGS.len()
            ));
        }
        let mut k = 0;
        for &a in args {
            self.define(a.0);
            for p in 0..self.adapter.part_count(a) {
                self.bind_reg(a.0, p, ARG_REGS[k]);
                k += 1;
            }
        }
        // Stack variables start zeroed.
        if self.vars_end > SAVE_SLOTS * 8 {
            let t = self.alloc_scratch(RegSet::EMPTY);
            self.emit(Inst::Movi { dst: t, imm: 0 });
            let end = self.vars_end.div_ceil(8) * 8;
            for off in (SAVE_SLOTS * 8 + 8..=end).step_by(8) {
                self.emit(Inst::St {
                    src: t,
                    mem: Mem::base_disp(Reg::FP, -(off as i32)),
                });
            }
            self.free_scratch(t);
        }
        for &a in args {
            self.maybe_free(a.0);
        }
        Ok(())
    }

    pub(super) fn begin_inst(&mut self) {
        debug_assert!(self.inst_scratch.is_empty());
    }

    pub(super) fn end_inst(&mut self, result: Option<ValueRef>) {
        for r in std::mem::take(&mut self.inst_scratch) {
            if self.regs.state(r) == RegState::Scratch {
                self.regs.set(r, RegState::Free);
            }
        }
        if self.opts.audit && self.locks_held != 0 {
            let msg = format!("{} value locks still held after an instruction", self.locks_held);
            self.audit_fail(msg);
            self.locks_held = 0;
        }
        if let Some(v) = result {
            if self.asg.get(v.0).is_live() {
                self.maybe_free(v.0);
            }
        }
    }

    pub(super) fn finish(mut self) -> Result<FunctionArtifact, String> {
        let clobbered = self.regs.clobbered();
        let size = self.frame.size(clobbered.len());
        let snapshot = self
            .opts
            .capture_snapshot
            .then(|| self.buf.bytes().to_vec());
        let prologue = self.prologue.expect("prologue emitted");
        finalize_frame(&mut self.buf, &prologue, &self.epilogues, size, &clobbered);
        let patch_points = self.buf.patch_points().to_vec();
        let patch_log = self.buf.patch_log().to_vec();
        let code = self.buf.finish().map_err(|e| format!("internal error: {e}"))?;
        Ok(FunctionArtifact {
            name: self.name,
            code,
            frame_size: size,
            patch_points,
            patch_log,
            snapshot,
            clobbered,
            stats: self.stats,
            inst_count: 0,
            compile_nanos: 0,
            events: self.events,
            audit_failures: self.audit_failures,
        })
    }

    // Value lifetime.

    /// Starts the live range of `v` at the current position.
    pub(super) fn define(&mut self, v: u32) {
        let r = self.analysis.liveness.ranges[v as usize];
        for p in 0..self.asg.get(v).part_count as u32 {
            *self.asg.part_mut(v, p) = PartState::default();
        }
        let a = self.asg.get_mut(v);
        a.flags = (a.flags & flags::PHI)
            | flags::LIVE
            | if r.ends_at_block_end {
                flags::ENDS_AT_END
            } else {
                0
            };
        a.remaining_uses = r.use_count;
        a.last = r.last;
        self.live.push(v);
    }

    /// Defines `v` as the address of stack variable `var`.
    pub fn define_frame_addr(&mut self, v: ValueRef, var: usize) {
        self.define(v.0);
        let off = self.frame.var_offset(var);
        self.asg.get_mut(v.0).frame_slot = off;
        self.asg.part_mut(v.0, 0).set_recomputable(true);
    }

    pub(super) fn dies_here(&self, v: u32) -> bool {
        let a = self.asg.get(v);
        a.last < self.cur || (a.last == self.cur && !a.ends_at_end())
    }

    pub(super) fn maybe_free(&mut self, v: u32) {
        let a = self.asg.get(v);
        if !a.is_live() || a.remaining_uses != 0 || !self.dies_here(v) {
            return;
        }
        if (0..a.part_count as u32).any(|p| self.asg.part(v, p).lock_count > 0) {
            return;
        }
        self.free(v);
    }

    pub(super) fn free(&mut self, v: u32) {
        let pc = self.asg.get(v).part_count as u32;
        let recomputable = self.asg.part(v, 0).recomputable();
        for p in 0..pc {
            let ps = *self.asg.part(v, p);
            if let Some(r) = ps.reg() {
                if !ps.fixed() && self.regs.state(r) == (RegState::Value { v, part: p }) {
                    self.regs.set(r, RegState::Free);
                }
            }
            *self.asg.part_mut(v, p) = PartState::default();
        }
        let a = self.asg.get_mut(v);
        if a.frame_slot != 0 && !a.is_phi() && !recomputable {
            self.frame.free_slot(a.frame_slot, 8 * pc);
            a.frame_slot = 0;
        }
        a.flags &= flags::PHI;
        self.event(|| Event::Free { v });
    }

    // Handles.

    fn acquire(&mut self, op: OperandRef, counted: bool) -> ValHandle {
        match op {
            OperandRef::Const(c) => ValHandle::Const(c),
            OperandRef::Value(vr) => {
                let v = vr.0;
                assert!(
                    self.asg.get(v).is_live(),
                    "internal error: use of dead value v{v} in '@{}'",
                    self.name
                );
                for p in 0..self.asg.get(v).part_count as u32 {
                    let ps = self.asg.part_mut(v, p);
                    ps.lock_count += 1;
                    let count = ps.lock_count;
                    self.locks_held += 1;
                    self.event(|| Event::Lock { v, part: p, count });
                }
                ValHandle::Value { v, counted }
            }
        }
    }

    /// A use of `op` that counts toward its remaining uses.
    pub fn val_ref(&mut self, op: OperandRef) -> ValHandle {
        self.acquire(op, true)
    }

    /// Locks `op` without consuming a use.
    pub fn val_ref_uncounted(&mut self, op: OperandRef) -> ValHandle {
        self.acquire(op, false)
    }

    pub fn release(&mut self, h: ValHandle) {
        let ValHandle::Value { v, counted } = h else {
            return;
        };
        for p in 0..self.asg.get(v).part_count as u32 {
            let ps = self.asg.part_mut(v, p);
            ps.lock_count -= 1;
            let count = ps.lock_count;
            self.locks_held = self.locks_held.saturating_sub(1);
            self.event(|| Event::Unlock { v, part: p, count });
        }
        if counted {
            let a = self.asg.get_mut(v);
            a.remaining_uses = a
                .remaining_uses
                .checked_sub(1)
                .expect("internal error: more uses than counted by liveness");
        }
        self.maybe_free(v);
    }

    pub fn part_count(&self, h: &ValHandle) -> u32 {
        match h {
            ValHandle::Const(c) => c.part_count(),
            ValHandle::Value { v, .. } => self.asg.get(*v).part_count as u32,
        }
    }

    /// Where a part can be read right now.
    pub fn location(&mut self, h: &ValHandle, part: u32) -> Src {
        match *h {
            ValHandle::Const(c) => Src::Const(c.part(part)),
            ValHandle::Value { v, .. } => self.value_src(v, part),
        }
    }

    pub(super) fn value_src(&mut self, v: u32, part: u32) -> Src {
        let ps = *self.asg.part(v, part);
        if let Some(r) = ps.reg() {
            Src::Loc(Loc::Reg(r))
        } else if ps.recomputable() {
            Src::FrameAddr(self.asg.get(v).frame_slot)
        } else if ps.stack_valid() {
            Src::Loc(Loc::Stack(self.part_offset(v, part)))
        } else {
            panic!("internal error: v{v}.{part} has no location in '@{}'", self.name)
        }
    }

    // Registers.

    pub(super) fn bind_reg(&mut self, v: u32, part: u32, r: Reg) {
        self.asg.part_mut(v, part).set_reg(Some(r));
        self.regs.set(r, RegState::Value { v, part });
        self.event(|| Event::Alloc { reg: r, v, part });
    }

    /// A register outside `exclude`, evicting an unlocked value if needed.
    pub(super) fn alloc_reg(&mut self, exclude: RegSet) -> Reg {
        let asg = &self.asg;
        match self
            .regs
            .choose(exclude, |v, p| asg.part(v, p).lock_count > 0)
        {
            Some(Choice::Free(r)) => r,
            Some(Choice::Evict(r, v, p)) => {
                self.evict(r, v, p);
                r
            }
            None => panic!(
                "internal error: no allocatable register left in '@{}'",
                self.name
            ),
        }
    }

    pub(super) fn evict(&mut self, r: Reg, v: u32, part: u32) {
        let ps = *self.asg.part(v, part);
        if !ps.stack_valid() && !ps.recomputable() {
            if self.opts.fault == Some(Fault::SkipEvictionSpill) {
                self.asg.part_mut(v, part).set_stack_valid(true);
                self.ensure_slot(v);
            } else {
                self.spill_part(v, part);
            }
        }
        self.asg.part_mut(v, part).set_reg(None);
        self.regs.set(r, RegState::Free);
        self.stats.evictions += 1;
        self.event(|| Event::Evict { reg: r, v, part });
    }

    pub(super) fn ensure_slot(&mut self, v: u32) -> u32 {
        let a = self.asg.get(v);
        if a.frame_slot == 0 {
            let size = 8 * a.part_count as u32;
            let off = self.frame.alloc_slot(size);
            self.asg.get_mut(v).frame_slot = off;
        }
        self.asg.get(v).frame_slot
    }

    pub(super) fn part_offset(&mut self, v: u32, part: u32) -> u32 {
        self.ensure_slot(v) - 8 * part
    }

    pub(super) fn spill_part(&mut self, v: u32, part: u32) {
        let r = self
            .asg
            .part(v, part)
            .reg()
            .expect("spilled part is in a register");
        let offset = self.part_offset(v, part);
        self.emit(Inst::St {
            src: r,
            mem: Mem::base_disp(Reg::FP, -(offset as i32)),
        });
        self.asg.part_mut(v, part).set_stack_valid(true);
        self.stats.spills += 1;
        self.event(|| Event::Spill { v, part, offset });
    }

    pub(super) fn mark_scratch(&mut self, r: Reg) {
        self.regs.set(r, RegState::Scratch);
        self.inst_scratch.push(r);
        self.event(|| Event::Scratch { reg: r });
    }

    /// An unevictable register for the current instruction, released at its
    /// end unless handed to [`Session::set_value`].
    pub fn alloc_scratch(&mut self, exclude: RegSet) -> Reg {
        let r = self.alloc_reg(exclude);
        self.mark_scratch(r);
        r
    }

    pub fn free_scratch(&mut self, r: Reg) {
        debug_assert_eq!(self.regs.state(r), RegState::Scratch);
        self.regs.set(r, RegState::Free);
        self.inst_scratch.retain(|&x| x != r);
    }

    /// Makes the specific register `r` a scratch register. A locked value in
    /// `r` is moved to a register outside `exclude` and its assignment
    /// follows it; an unlocked value is evicted.
    pub fn claim_reg(&mut self, r: Reg, exclude: RegSet) {
        match self.regs.state(r) {
            RegState::Free => {}
            RegState::Value { v, part } => {
                if self.asg.part(v, part).lock_count > 0 {
                    let mut ex = exclude;
                    ex.insert(r);
                    let n = self.alloc_reg(ex);
                    self.emit(Inst::Mov { dst: n, src: r });
                    self.bind_reg(v, part, n);
                } else {
                    self.evict(r, v, part);
                }
            }
            s => panic!("internal error: cannot claim {r} in state {s:?}"),
        }
        self.mark_scratch(r);
    }

    /// True if the register of this part may be taken over by the result:
    /// this is the only handle and the value dies with this use.
    pub fn can_take_over(&self, h: &ValHandle, part: u32) -> bool {
        let ValHandle::Value { v, counted: true } = *h else {
            return false;
        };
        let ps = self.asg.part(v, part);
        ps.reg().is_some()
            && !ps.fixed()
            && ps.lock_count == 1
            && self.asg.get(v).remaining_uses == 1
            && self.dies_here(v)
    }

    /// Turns the register of a dying part into a scratch register.
    pub fn take_over(&mut self, h: &ValHandle, part: u32) -> Reg {
        debug_assert!(self.can_take_over(h, part));
        let ValHandle::Value { v, .. } = *h else {
            unreachable!()
        };
        let r = self.asg.part(v, part).reg().unwrap();
        self.asg.part_mut(v, part).set_reg(None);
        self.mark_scratch(r);
        r
    }

    /// Places the part in a register from `feasible` and returns it. Values
    /// keep the register; constants get a fresh scratch register.
    pub fn load_to_reg(&mut self, h: &ValHandle, part: u32, feasible: RegSet) -> Reg {
        let exclude = RegSet(!feasible.0 & ALL_REGS.0);
        match *h {
            ValHandle::Const(c) => {
                let r = self.alloc_scratch(exclude);
                self.emit_const(r, c.part(part));
                r
            }
            ValHandle::Value { v, .. } => {
                let ps = *self.asg.part(v, part);
                if let Some(r) = ps.reg() {
                    if feasible.contains(r) {
                        return r;
                    }
                    let n = self.alloc_reg(exclude);
                    self.emit(Inst::Mov { dst: n, src: r });
                    if ps.fixed() {
                        self.mark_scratch(n);
                    } else {
                        self.regs.set(r, RegState::Free);
                        self.bind_reg(v, part, n);
                    }
                    return n;
                }
                let n = self.alloc_reg(exclude);
                if ps.recomputable() {
                    let off = self.asg.get(v).frame_slot;
                    self.emit_frame_addr(n, off);
                } else {
                    let src = self.value_src(v, part);
                    self.emit_move(Move { dst: Loc::Reg(n), src }, None);
                    self.stats.reloads += 1;
                    self.event(|| Event::Reload { v, part, reg: n });
                }
                self.bind_reg(v, part, n);
                n
            }
        }
    }

    pub fn load_any(&mut self, h: &ValHandle, part: u32) -> Reg {
        self.load_to_reg(h, part, ALL_REGS)
    }

    /// Copies the part into the scratch register `dst`.
    pub fn copy_into(&mut self, h: &ValHandle, part: u32, dst: Reg) {
        let src = self.location(h, part);
        self.emit_move(Move { dst: Loc::Reg(dst), src }, None);
    }

    /// Transfers scratch register `r` to part `part` of the result `v`.
    pub fn set_value(&mut self, v: ValueRef, part: u32, r: Reg) {
        let v = v.0;
        if !self.asg.get(v).is_live() {
            self.define(v);
        }
        debug_assert_eq!(self.regs.state(r), RegState::Scratch);
        self.inst_scratch.retain(|&x| x != r);
        if let Some(&f) = self.fixed_home.get(&(v, part)) {
            if f != r {
                self.emit(Inst::Mov { dst: f, src: r });
                self.regs.set(r, RegState::Free);
            }
            let ps = self.asg.part_mut(v, part);
            ps.set_reg(Some(f));
            ps.set_fixed(true);
            return;
        }
        self.bind_reg(v, part, r);
    }

    // Moves.

    pub(super) fn emit_move(&mut self, mv: Move, mem_temp: Option<Reg>) {
        self.stats.moves += 1;
        let fp = |o: u32| Mem::base_disp(Reg::FP, -(o as i32));
        match (mv.dst, mv.src) {
            (Loc::Reg(d), Src::Loc(Loc::Reg(s))) => self.emit(Inst::Mov { dst: d, src: s }),
            (Loc::Reg(d), Src::Loc(Loc::Stack(o))) => self.emit(Inst::Ld { dst: d, mem: fp(o) }),
            (Loc::Reg(d), Src::Const(c)) => self.emit_const(d, c),
            (Loc::Reg(d), Src::FrameAddr(o)) => self.emit_frame_addr(d, o),
            (Loc::Stack(o), Src::Loc(Loc::Reg(s))) => self.emit(Inst::St { src: s, mem: fp(o) }),
            (Loc::Stack(o), src) => {
                let m = mem_temp.expect("internal error: memory move without a temporary");
                self.emit_move(Move { dst: Loc::Reg(m), src }, None);
                self.emit(Inst::St { src: m, mem: fp(o) });
            }
        }
    }

    pub(super) fn emit_moves(&mut self, moves: &[Move], temp: Option<Reg>, mem_temp: Option<Reg>) {
        let seq = sequentialize(moves, temp)
            .expect("internal error: cyclic parallel move without a temporary");
        for mv in seq {
            self.emit_move(mv, mem_temp);
        }
    }

    /// Takes `r` for an outgoing value. Whatever value it held is either
    /// dead after this instruction or already in memory.
    fn claim_clean(&mut self, r: Reg) {
        match self.regs.state(r) {
            RegState::Free => {}
            RegState::Value { v, part } => self.asg.part_mut(v, part).set_reg(None),
            s => panic!("internal error: cannot claim {r} in state {s:?}"),
        }
        self.mark_scratch(r);
    }

    /// Loads operand parts into consecutive registers of `dsts`.
    fn move_operands(&mut self, handles: &[ValHandle], dsts: &[Reg]) -> Result<(), String> {
        let slots: Vec<(usize, u32)> = handles
            .iter()
            .enumerate()
            .flat_map(|(i, h)| (0..self.part_count(h)).map(move |p| (i, p)))
            .collect();
        if slots.len() > dsts.len() {
            return Err(format!(
                "{} value slots, at most {} supported",
                slots.len(),
                dsts.len()
            ));
        }
        let dst_set = RegSet::of(&dsts[..slots.len()]);
        let temp = (slots.len() > 1).then(|| self.alloc_scratch(dst_set));
        let moves: Vec<Move> = slots
            .iter()
            .zip(dsts)
            .map(|(&(i, p), &d)| Move {
                dst: Loc::Reg(d),
                src: self.location(&handles[i], p),
            })
            .collect();
        for &d in &dsts[..slots.len()] {
            self.claim_clean(d);
        }
        self.emit_moves(&moves, temp, None);
        Ok(())
    }

    /// True if `v` is needed after the current instruction, given that
    /// `handles` hold its remaining uses in this instruction.
    fn needed_after(&self, v: u32, handles: &[ValHandle]) -> bool {
        let here = handles
            .iter()
            .filter(|h| matches!(h, ValHandle::Value { v: x, counted: true } if *x == v))
            .count() as u32;
        self.asg.get(v).remaining_uses > here || !self.dies_here(v)
    }

    /// Calls function `func` of the image with `args`; the result, if any,
    /// is defined from the return registers.
    pub fn call(
        &mut self,
        func: u32,
        args: &[OperandRef],
        result: Option<ValueRef>,
    ) -> Result<(), String> {
        let handles: Vec<ValHandle> = args.iter().map(|&op| self.val_ref(op)).collect();
        // Caller-saved registers do not survive the call.
        for r in CALLER_SAVED {
            if let RegState::Value { v, part } = self.regs.state(r) {
                let ps = *self.asg.part(v, part);
                if !ps.stack_valid() && !ps.recomputable() && self.needed_after(v, &handles) {
                    self.spill_part(v, part);
                }
            }
        }
        let moved = self.move_operands(&handles, &ARG_REGS);
        if moved.is_ok() {
            self.emit(Inst::Call { func });
        }
        for h in handles {
            self.release(h);
        }
        moved?;
        for r in CALLER_SAVED {
            match self.regs.state(r) {
                RegState::Value { v, part } => {
                    let ps = *self.asg.part(v, part);
                    if !ps.stack_valid() && !ps.recomputable() {
                        let msg = format!("v{v}.{part} lost in {r} across a call");
                        self.audit_fail(msg);
                    }
                    self.asg.part_mut(v, part).set_reg(None);
                    self.regs.set(r, RegState::Free);
                }
                RegState::Scratch => self.free_scratch(r),
                _ => {}
            }
        }
        if let Some(res) = result {
            for p in 0..self.adapter.part_count(res) {
                let r = RET_REGS[p as usize];
                self.mark_scratch(r);
                self.set_value(res, p, r);
            }
        }
        Ok(())
    }

    /// Returns `values` from the function.
    pub fn ret(&mut self, values: &[OperandRef]) -> Result<(), String> {
        let handles: Vec<ValHandle> = values.iter().map(|&op| self.val_ref(op)).collect();
        let moved = self.move_operands(&handles, &RET_REGS);
        if moved.is_ok() {
            let ep = emit_epilogue(&mut self.buf);
            self.epilogues.push(ep);
        }
        for h in handles {
            self.release(h);
        }
        moved
    }
}
