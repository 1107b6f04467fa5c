//! Block boundaries: entry state, loop-fixed registers, φ moves and branch
//! emission.

use super::parallel::{Loc, Move, Src};
use super::regfile::{RegSet, RegState, ALLOCATABLE};
use super::session::{fits_i32, Binding, BranchCond, Session, ValHandle};
use super::Event;
use crate::adapter::{BlockRef, IrAdapter, OperandRef};
use crate::analysis::aux_layout_index;
use crate::visa::{Cond, Inst, Mem, Reg, CALLEE_SAVED};

/// Code for one control-flow edge, planned before any of it is emitted.
struct EdgePlan {
    target: u32,
    /// Loop-fixed registers written back on loop exit: (reg, offset).
    stores: Vec<(Reg, u32)>,
    moves: Vec<Move>,
}

impl EdgePlan {
    fn is_empty(&self) -> bool {
        self.stores.is_empty() && self.moves.iter().all(|m| m.src == Src::Loc(m.dst))
    }
}

impl<A: IrAdapter> Session<'_, A> {
    fn layout_index(&self, b: BlockRef) -> u32 {
        aux_layout_index(self.adapter.block_aux(b))
    }

    pub(super) fn begin_block(&mut self, idx: u32) {
        self.cur = idx;
        let carried = self.carry[idx as usize];
        self.release_finished_loops(idx, carried);
        let mut unplaced = Vec::new();
        if !carried {
            for i in 0..ALLOCATABLE {
                let r = Reg::new(i);
                match self.regs.state(r) {
                    RegState::Value { v, part } => {
                        let ps = self.asg.part_mut(v, part);
                        ps.set_reg(None);
                        if !ps.stack_valid() && !ps.recomputable() && !unplaced.contains(&v) {
                            unplaced.push(v);
                        }
                        self.regs.set(r, RegState::Free);
                    }
                    RegState::Scratch => panic!("internal error: scratch {r} across blocks"),
                    _ => {}
                }
            }
        }
        let multi_pred = self.analysis.order.multi_pred[idx as usize];
        if self.opts.audit && !unplaced.is_empty() {
            let msg = format!("block {idx}: values without a location on entry: {unplaced:?}");
            self.audit_fail(msg);
        }
        self.event(|| Event::Block {
            index: idx,
            multi_pred,
            carried,
            unplaced,
        });
        let label = self.labels[idx as usize];
        self.bind_label(label);

        let blk = self.analysis.order.layout[idx as usize];
        let phis = self.adapter.phis(blk);
        for &phi in phis {
            let v = phi.0;
            let homes: Vec<Loc> = (0..self.asg.get(v).part_count as u32)
                .map(|p| self.phi_home(v, p))
                .collect();
            self.define(v);
            for (p, home) in homes.into_iter().enumerate() {
                let ps = self.asg.part_mut(v, p as u32);
                match home {
                    Loc::Reg(f) => {
                        ps.set_reg(Some(f));
                        ps.set_fixed(true);
                    }
                    Loc::Stack(_) => ps.set_stack_valid(true),
                }
            }
        }
        for &phi in phis {
            self.maybe_free(phi.0);
        }
    }

    pub(super) fn end_block(&mut self) {
        let cur = self.cur;
        let asg = &self.asg;
        let mut dead = Vec::new();
        self.live.retain(|&v| {
            let a = asg.get(v);
            if !a.is_live() {
                false
            } else if a.last <= cur {
                dead.push(v);
                false
            } else {
                true
            }
        });
        for v in dead {
            self.free(v);
        }
    }

    /// Where every incoming value of a φ part is written: its loop-fixed
    /// register or a frame slot reserved for the whole function.
    fn phi_home(&mut self, v: u32, part: u32) -> Loc {
        if let Some(&f) = self.fixed_home.get(&(v, part)) {
            return Loc::Reg(f);
        }
        self.asg.get_mut(v).flags |= super::flags::PHI;
        Loc::Stack(self.part_offset(v, part))
    }

    /// Unbinds fixed registers of loops that ended before block `idx`.
    fn release_finished_loops(&mut self, idx: u32, carried: bool) {
        let nodes = &self.analysis.forest.nodes;
        let (done, active): (Vec<u32>, Vec<u32>) = self
            .active_loops
            .iter()
            .partition(|&&l| nodes[l as usize].span.1 < idx);
        self.active_loops = active;
        for l in done {
            for Binding { reg, v, part } in std::mem::take(&mut self.loops[l as usize].bindings) {
                self.fixed_home.remove(&(v, part));
                let ps = *self.asg.part(v, part);
                let keeps = self.asg.get(v).is_live() && ps.reg() == Some(reg);
                self.regs.set(reg, RegState::Free);
                if keeps {
                    let ps = self.asg.part_mut(v, part);
                    ps.set_fixed(false);
                    // Exit edges stored the register.
                    ps.set_stack_valid(true);
                    if carried {
                        self.regs.set(reg, RegState::Value { v, part });
                    } else {
                        self.asg.part_mut(v, part).set_reg(None);
                    }
                }
                self.event(|| Event::Unfix { reg, v, part });
            }
        }
    }

    /// Before a branch to blocks that drop the register state: every dirty
    /// live-out value goes to memory.
    fn spill_before_branch(&mut self) {
        for i in 0..ALLOCATABLE {
            let r = Reg::new(i);
            if let RegState::Value { v, part } = self.regs.state(r) {
                let ps = *self.asg.part(v, part);
                if self.asg.get(v).last > self.cur && !ps.stack_valid() && !ps.recomputable() {
                    self.spill_part(v, part);
                }
            }
        }
    }

    /// On entry into an innermost reducible loop, pins callee-saved
    /// registers to values defined in the loop, one register kept free.
    fn bind_loop(&mut self, target: BlockRef) {
        let t = self.layout_index(target);
        let l = self.analysis.forest.innermost(t);
        let node = &self.analysis.forest.nodes[l as usize];
        let st = &self.loops[l as usize];
        if l == 0 || st.bound || !st.bindable || node.header != target || node.contains(self.cur) {
            return;
        }
        self.loops[l as usize].bound = true;
        let free: Vec<Reg> = CALLEE_SAVED
            .into_iter()
            .filter(|&r| match self.regs.state(r) {
                RegState::Free => true,
                RegState::Value { v, part } => self.asg.part(v, part).lock_count == 0,
                _ => false,
            })
            .collect();
        let cap = free.len().saturating_sub(1);
        let mut taken = 0;
        for v in std::mem::take(&mut self.loops[l as usize].candidates) {
            let pc = self.asg.get(v).part_count as usize;
            if taken + pc > cap {
                break;
            }
            for part in 0..pc as u32 {
                let reg = free[taken];
                taken += 1;
                if let RegState::Value { v: w, part: q } = self.regs.state(reg) {
                    self.evict(reg, w, q);
                }
                self.regs.set(reg, RegState::Fixed { v, part });
                self.fixed_home.insert((v, part), reg);
                self.loops[l as usize].bindings.push(Binding { reg, v, part });
                self.event(|| Event::Fix { reg, v, part });
            }
        }
        self.active_loops.push(l);
    }

    fn plan_edge(&mut self, target: BlockRef) -> EdgePlan {
        let t = self.layout_index(target);
        let mut stores = Vec::new();
        let nodes = &self.analysis.forest.nodes;
        let exits: Vec<u32> = self
            .active_loops
            .iter()
            .copied()
            .filter(|&l| {
                let n = &nodes[l as usize];
                n.contains(self.cur) && !n.contains(t)
            })
            .collect();
        for l in exits {
            let span_end = nodes[l as usize].span.1;
            let fixed: Vec<(Reg, u32, u32)> = self.loops[l as usize]
                .bindings
                .iter()
                .map(|b| (b.reg, b.v, b.part))
                .collect();
            for (reg, v, part) in fixed {
                let a = self.asg.get(v);
                if a.is_live() && a.last > span_end && self.asg.part(v, part).reg() == Some(reg) {
                    stores.push((reg, self.part_offset(v, part)));
                }
            }
        }
        let from = self.analysis.order.layout[self.cur as usize];
        let mut moves = Vec::new();
        for &phi in self.adapter.phis(target) {
            let op = self
                .adapter
                .phi_incoming(phi)
                .iter()
                .find(|(b, _)| *b == from)
                .map(|&(_, op)| op)
                .expect("φ has an incoming value for every predecessor");
            for p in 0..self.adapter.part_count(phi) {
                let dst = self.phi_home(phi.0, p);
                let src = match op {
                    OperandRef::Const(c) => Src::Const(c.part(p)),
                    OperandRef::Value(x) => self.value_src(x.0, p),
                };
                moves.push(Move { dst, src });
            }
            if let OperandRef::Value(x) = op {
                let a = self.asg.get_mut(x.0);
                a.remaining_uses = a
                    .remaining_uses
                    .checked_sub(1)
                    .expect("internal error: more uses than counted by liveness");
            }
        }
        EdgePlan { target: t, stores, moves }
    }

    /// Temporaries for the moves of `plans`: one to break cycles and one for
    /// memory-to-memory moves.
    fn edge_temps(&mut self, plans: &[EdgePlan]) -> (Option<Reg>, Option<Reg>) {
        let cyc = plans.iter().any(|p| p.moves.len() > 1);
        let t = cyc.then(|| self.alloc_scratch(RegSet::EMPTY));
        let mem = plans.iter().flat_map(|p| &p.moves).any(|m| {
            matches!(m.dst, Loc::Stack(_)) && !matches!(m.src, Src::Loc(Loc::Reg(_)))
        });
        let m = mem.then(|| self.alloc_scratch(RegSet::EMPTY));
        (t, m)
    }

    /// Sources in registers may have been evicted while allocating
    /// temporaries; re-resolve them.
    fn refresh_sources(&mut self, plan: &mut EdgePlan, snapshot: &[(Reg, RegState)]) {
        for m in &mut plan.moves {
            if let Src::Loc(Loc::Reg(r)) = m.src {
                if let Some((_, RegState::Value { v, part })) =
                    snapshot.iter().find(|(x, _)| *x == r)
                {
                    if self.asg.part(*v, *part).reg() != Some(r) {
                        m.src = self.value_src(*v, *part);
                    }
                }
            }
        }
    }

    fn emit_edge(&mut self, plan: &EdgePlan, t: Option<Reg>, m: Option<Reg>) {
        for &(r, off) in &plan.stores {
            self.emit(Inst::St {
                src: r,
                mem: Mem::base_disp(Reg::FP, -(off as i32)),
            });
        }
        self.emit_moves(&plan.moves, t, m);
    }

    fn plan_edges(&mut self, targets: &[BlockRef]) -> (Vec<EdgePlan>, Option<Reg>, Option<Reg>) {
        let mut plans: Vec<EdgePlan> = targets.iter().map(|&b| self.plan_edge(b)).collect();
        let before: Vec<(Reg, RegState)> = self.regs.regs().collect();
        let (t, m) = self.edge_temps(&plans);
        for p in &mut plans {
            self.refresh_sources(p, &before);
        }
        // A refreshed source may now need the memory temporary.
        let m = match m {
            None if plans.iter().flat_map(|p| &p.moves).any(|mv| {
                matches!(mv.dst, Loc::Stack(_)) && !matches!(mv.src, Src::Loc(Loc::Reg(_)))
            }) =>
            {
                let mut ex = RegSet::EMPTY;
                for mv in plans.iter().flat_map(|p| &p.moves) {
                    if let Src::Loc(Loc::Reg(r)) = mv.src {
                        ex.insert(r);
                    }
                }
                Some(self.alloc_scratch(ex))
            }
            m => m,
        };
        (plans, t, m)
    }

    /// Unconditional branch ending the current block.
    pub fn branch(&mut self, target: BlockRef) {
        let t = self.layout_index(target);
        let next = self.cur + 1;
        if !(t == next && self.carry[t as usize]) {
            self.spill_before_branch();
        }
        self.bind_loop(target);
        let (plans, tmp, mem) = self.plan_edges(&[target]);
        self.emit_edge(&plans[0], tmp, mem);
        if t != next {
            self.jump(self.labels[t as usize]);
        }
    }

    /// Two-way branch ending the current block.
    pub fn cond_branch(&mut self, cond: BranchCond, taken: BlockRef, not_taken: BlockRef) {
        // Of two distinct edges at most one can keep the register state.
        self.spill_before_branch();
        self.bind_loop(taken);
        self.bind_loop(not_taken);
        let (handles, cmp, c) = match cond {
            BranchCond::NonZero(op) => {
                let h = self.val_ref(op);
                let r = self.load_any(&h, 0);
                (vec![h], Inst::Cmpi { lhs: r, imm: 0 }, Cond::Ne)
            }
            BranchCond::Compare { cond, lhs, rhs } => {
                let hl = self.val_ref(lhs);
                let hr = self.val_ref(rhs);
                let rl = self.load_any(&hl, 0);
                let inst = match hr {
                    ValHandle::Const(k) if self.fold() && fits_i32(k.part(0)) => Inst::Cmpi {
                        lhs: rl,
                        imm: k.part(0) as i32,
                    },
                    _ => Inst::Cmp {
                        lhs: rl,
                        rhs: self.load_any(&hr, 0),
                    },
                };
                (vec![hl, hr], inst, cond)
            }
        };
        let next = self.cur + 1;
        // The edge emitted last may fall through.
        let (first, second, c_first) = if self.layout_index(taken) == next {
            (not_taken, taken, c.invert())
        } else {
            (taken, not_taken, c)
        };
        let (plans, tmp, mem) = self.plan_edges(&[first, second]);
        self.emit(cmp);
        for h in handles {
            self.release(h);
        }
        let (p1, p2) = (&plans[0], &plans[1]);
        if p1.is_empty() {
            self.branch_if(c_first, self.labels[p1.target as usize]);
        } else {
            let skip = self.new_label("skip");
            self.branch_if(c_first.invert(), skip);
            self.emit_edge(p1, tmp, mem);
            self.jump(self.labels[p1.target as usize]);
            self.bind_label(skip);
        }
        self.emit_edge(p2, tmp, mem);
        if p2.target != next {
            self.jump(self.labels[p2.target as usize]);
        }
    }
}
