//! Stack frame layout, prologue and epilogue.
//!
//! ```text
//! fp + 8    return address
//! fp        saved fp
//! fp - 8    callee-saved save area (6 slots)
//! fp - 48
//!           stack variables, then spill slots
//! sp        fp - frame size
//! ```
//!
//! The frame size and the set of callee-saved registers are only known once
//! the whole function is compiled, so the prologue and every epilogue reserve
//! fixed slots that are patched at the end.

use super::{CodeBuffer, Inst, Mem, PatchPoint, PatchPurpose, Reg};

pub const SAVE_SLOTS: u32 = 6;
const SAVE_AREA: u32 = SAVE_SLOTS * 8;

fn align_up(v: u32, a: u32) -> u32 {
    v.div_ceil(a) * a
}

/// Offsets are positive distances below fp: an object at offset `o` lives at
/// `fp - o`.
#[derive(Clone, Debug)]
pub struct FrameLayout {
    watermark: u32,
    var_offsets: Vec<u32>,
    free: Vec<(u32, u32)>,
}

impl FrameLayout {
    /// Lays out stack variables given as (size, align).
    pub fn new(vars: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut f = FrameLayout {
            watermark: SAVE_AREA,
            var_offsets: Vec::new(),
            free: Vec::new(),
        };
        for (size, align) in vars {
            let off = f.alloc(size, align.max(1));
            f.var_offsets.push(off);
        }
        f
    }

    fn alloc(&mut self, size: u32, align: u32) -> u32 {
        let off = align_up(self.watermark + size, align);
        self.watermark = off;
        off
    }

    pub fn var_offset(&self, i: usize) -> u32 {
        self.var_offsets[i]
    }

    /// A spill slot of `size` bytes, reusing a freed one of equal size.
    pub fn alloc_slot(&mut self, size: u32) -> u32 {
        if let Some(i) = self.free.iter().position(|&(_, s)| s == size) {
            return self.free.swap_remove(i).0;
        }
        self.alloc(size, 8)
    }

    pub fn free_slot(&mut self, off: u32, size: u32) {
        debug_assert!(!self.free.iter().any(|&(o, _)| o == off));
        self.free.push((off, size));
    }

    /// Bytes used below fp by stack variables and spill slots.
    pub fn watermark(&self) -> u32 {
        self.watermark
    }

    /// Final frame size, 16-byte aligned.
    pub fn size(&self, clobbered: usize) -> u32 {
        let used = if self.watermark > SAVE_AREA {
            self.watermark
        } else {
            8 * clobbered as u32
        };
        align_up(used, 16)
    }

    pub fn save_offset(j: usize) -> u32 {
        8 * (j as u32 + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrologueSlots {
    pub frame_size: PatchPoint,
    pub saves: PatchPoint,
}

/// `PUSH fp; MOV fp, sp; ADDI sp, 0; NOP x6`, nine words.
pub fn emit_prologue(buf: &mut CodeBuffer) -> PrologueSlots {
    buf.emit(Inst::Push { src: Reg::FP });
    buf.emit(Inst::Mov {
        dst: Reg::FP,
        src: Reg::SP,
    });
    let frame_size = buf.reserve(
        1,
        Inst::Addi {
            dst: Reg::SP,
            imm: 0,
        },
        PatchPurpose::FrameSize,
    );
    let saves = buf.reserve(SAVE_SLOTS, Inst::Nop, PatchPurpose::SaveSlots);
    PrologueSlots { frame_size, saves }
}

/// `NOP x6; MOV sp, fp; POP fp; RET`.
pub fn emit_epilogue(buf: &mut CodeBuffer) -> PatchPoint {
    let restores = buf.reserve(SAVE_SLOTS, Inst::Nop, PatchPurpose::RestoreSlots);
    buf.emit(Inst::Mov {
        dst: Reg::SP,
        src: Reg::FP,
    });
    buf.emit(Inst::Pop { dst: Reg::FP });
    buf.emit(Inst::Ret);
    restores
}

/// Patches the frame size and the save/restore slots. `clobbered` lists the
/// callee-saved registers written by the function; the j-th is saved at
/// `fp - 8(j+1)` and restores run in reverse order.
pub fn finalize_frame(
    buf: &mut CodeBuffer,
    prologue: &PrologueSlots,
    epilogues: &[PatchPoint],
    frame_size: u32,
    clobbered: &[Reg],
) {
    assert!(
        clobbered.len() <= SAVE_SLOTS as usize,
        "internal error: more clobbered registers than save slots"
    );
    if frame_size != 0 {
        buf.patch(
            prologue.frame_size.word,
            Inst::Addi {
                dst: Reg::SP,
                imm: -(frame_size as i32),
            },
        );
    }
    for (j, &r) in clobbered.iter().enumerate() {
        let mem = Mem::base_disp(Reg::FP, -(FrameLayout::save_offset(j) as i32));
        buf.patch(prologue.saves.word + j as u32, Inst::St { src: r, mem });
    }
    for ep in epilogues {
        for (k, (j, &r)) in clobbered.iter().enumerate().rev().enumerate() {
            let mem = Mem::base_disp(Reg::FP, -(FrameLayout::save_offset(j) as i32));
            buf.patch(ep.word + k as u32, Inst::Ld { dst: r, mem });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visa::WORD;

    fn words(b: &[u8]) -> Vec<Inst> {
        b.chunks(WORD).map(|w| Inst::decode(w).unwrap()).collect()
    }

    #[test]
    fn prologue_is_nine_words() {
        let mut b = CodeBuffer::new();
        emit_prologue(&mut b);
        assert_eq!(b.bytes().len(), 72);
    }

    #[test]
    fn empty_frame_leaves_slots_alone() {
        let mut b = CodeBuffer::new();
        let p = emit_prologue(&mut b);
        let e = emit_epilogue(&mut b);
        let before = b.bytes().to_vec();
        finalize_frame(&mut b, &p, &[e], 0, &[]);
        assert_eq!(b.bytes(), &before[..]);
        assert_eq!(words(b.bytes())[2], Inst::Addi { dst: Reg::SP, imm: 0 });
    }

    #[test]
    fn two_clobbers_patch_two_slots_symmetrically() {
        let (r8, r9) = (Reg::new(8), Reg::new(9));
        let mut b = CodeBuffer::new();
        let p = emit_prologue(&mut b);
        b.emit(Inst::Movi { dst: r8, imm: 1 });
        let e1 = emit_epilogue(&mut b);
        let e2 = emit_epilogue(&mut b);
        let before = b.bytes().to_vec();
        let frame = FrameLayout::new([]);
        let size = frame.size(2);
        assert_eq!(size, 16);
        finalize_frame(&mut b, &p, &[e1, e2], size, &[r8, r9]);
        let w = words(b.bytes());
        assert_eq!(w[2], Inst::Addi { dst: Reg::SP, imm: -16 });
        assert_eq!(w[3], Inst::St { src: r8, mem: Mem::base_disp(Reg::FP, -8) });
        assert_eq!(w[4], Inst::St { src: r9, mem: Mem::base_disp(Reg::FP, -16) });
        assert!(w[5..9].iter().all(|i| *i == Inst::Nop));
        for ep in [e1, e2] {
            let s = ep.word as usize;
            assert_eq!(w[s], Inst::Ld { dst: r9, mem: Mem::base_disp(Reg::FP, -16) });
            assert_eq!(w[s + 1], Inst::Ld { dst: r8, mem: Mem::base_disp(Reg::FP, -8) });
            assert!(w[s + 2..s + 6].iter().all(|i| *i == Inst::Nop));
        }
        // Only patch regions changed.
        let regions = b.patch_points().to_vec();
        for (i, (x, y)) in before.chunks(WORD).zip(b.bytes().chunks(WORD)).enumerate() {
            let i = i as u32;
            if x != y {
                assert!(regions.iter().any(|p| p.word <= i && i < p.word + p.len));
            }
        }
    }

    #[test]
    fn frame_with_one_clobber_and_spills() {
        let mut f = FrameLayout::new([]);
        assert_eq!(f.alloc_slot(8), 56);
        assert_eq!(f.size(1), 64);
        let mut f = FrameLayout::new([(8, 8)]);
        assert_eq!(f.var_offset(0), 56);
        let s = f.alloc_slot(16);
        assert_eq!(s, 72);
        f.free_slot(s, 16);
        assert_eq!(f.alloc_slot(8), 80);
        assert_eq!(f.alloc_slot(16), 72);
    }

    #[test]
    fn aligned_variables() {
        let f = FrameLayout::new([(1, 1), (16, 16)]);
        assert_eq!(f.var_offset(0), 49);
        assert_eq!(f.var_offset(1), 80);
        assert_eq!(f.size(0), 80);
    }
}
