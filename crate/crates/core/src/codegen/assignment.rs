//! Per-value assignments: where each part of a live value currently is.

use crate::visa::Reg;

/// State of one value part, two bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[repr(C)]
pub struct PartState {
    bits: u8,
    pub lock_count: u8,
}

const REG_MASK: u8 = 0x0f;
const HAS_REG: u8 = 1 << 4;
const STACK_VALID: u8 = 1 << 5;
const RECOMPUTABLE: u8 = 1 << 6;
const FIXED: u8 = 1 << 7;

impl PartState {
    pub fn reg(&self) -> Option<Reg> {
        (self.bits & HAS_REG != 0).then(|| Reg::new(self.bits & REG_MASK))
    }

    pub fn set_reg(&mut self, r: Option<Reg>) {
        self.bits &= !(REG_MASK | HAS_REG);
        if let Some(r) = r {
            self.bits |= HAS_REG | r.id();
        }
    }

    fn flag(&self, f: u8) -> bool {
        self.bits & f != 0
    }

    fn set_flag(&mut self, f: u8, on: bool) {
        if on {
            self.bits |= f;
        } else {
            self.bits &= !f;
        }
    }

    pub fn stack_valid(&self) -> bool {
        self.flag(STACK_VALID)
    }

    pub fn set_stack_valid(&mut self, on: bool) {
        self.set_flag(STACK_VALID, on)
    }

    /// The part is a frame address and never needs a spill.
    pub fn recomputable(&self) -> bool {
        self.flag(RECOMPUTABLE)
    }

    pub fn set_recomputable(&mut self, on: bool) {
        self.set_flag(RECOMPUTABLE, on)
    }

    /// The register is pinned for a loop and immune to eviction.
    pub fn fixed(&self) -> bool {
        self.flag(FIXED)
    }

    pub fn set_fixed(&mut self, on: bool) {
        self.set_flag(FIXED, on)
    }
}

/// Flags of an [`Assignment`].
pub mod flags {
    pub const LIVE: u8 = 1 << 0;
    pub const ENDS_AT_END: u8 = 1 << 1;
    pub const PHI: u8 = 1 << 2;
}

/// Assignment of one value. Part 0 is stored inline; further parts live in
/// a side table addressed by value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[repr(C)]
pub struct Assignment {
    /// Offset below fp of the spill slot (or frame address for recomputable
    /// values); 0 means none.
    pub frame_slot: u32,
    pub remaining_uses: u32,
    /// Layout index of the last block of the live range.
    pub last: u32,
    pub part_count: u8,
    pub flags: u8,
    pub part0: PartState,
}

const _: () = assert!(std::mem::size_of::<Assignment>() <= 16);
const _: () = assert!(std::mem::size_of::<PartState>() <= 2);

impl Assignment {
    pub fn is_live(&self) -> bool {
        self.flags & flags::LIVE != 0
    }

    pub fn ends_at_end(&self) -> bool {
        self.flags & flags::ENDS_AT_END != 0
    }

    pub fn is_phi(&self) -> bool {
        self.flags & flags::PHI != 0
    }
}

/// All assignments of the function being compiled.
#[derive(Clone, Debug, Default)]
pub struct AssignmentTable {
    assignments: Vec<Assignment>,
    /// Index of the first extra part in `extra`, per value.
    extra_base: Vec<u32>,
    extra: Vec<PartState>,
}

impl AssignmentTable {
    pub fn new(part_counts: impl IntoIterator<Item = u32>) -> Self {
        let mut t = AssignmentTable::default();
        for pc in part_counts {
            t.extra_base.push(t.extra.len() as u32);
            t.extra
                .extend(std::iter::repeat(PartState::default()).take(pc as usize - 1));
            t.assignments.push(Assignment {
                part_count: pc as u8,
                ..Assignment::default()
            });
        }
        t
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn get(&self, v: u32) -> &Assignment {
        &self.assignments[v as usize]
    }

    pub fn get_mut(&mut self, v: u32) -> &mut Assignment {
        &mut self.assignments[v as usize]
    }

    pub fn part(&self, v: u32, p: u32) -> &PartState {
        if p == 0 {
            &self.assignments[v as usize].part0
        } else {
            &self.extra[(self.extra_base[v as usize] + p - 1) as usize]
        }
    }

    pub fn part_mut(&mut self, v: u32, p: u32) -> &mut PartState {
        if p == 0 {
            &mut self.assignments[v as usize].part0
        } else {
            &mut self.extra[(self.extra_base[v as usize] + p - 1) as usize]
        }
    }

    /// Clears all parts and flags but keeps the frame slot.
    pub fn reset(&mut self, v: u32) {
        let a = &mut self.assignments[v as usize];
        let pc = a.part_count;
        for p in 0..pc as u32 {
            *self.part_mut(v, p) = PartState::default();
        }
        let a = &mut self.assignments[v as usize];
        a.flags = 0;
        a.remaining_uses = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footprint() {
        assert_eq!(std::mem::size_of::<Assignment>(), 16);
        assert_eq!(std::mem::size_of::<PartState>(), 2);
    }

    #[test]
    fn part_bits_round_trip() {
        let mut p = PartState::default();
        assert_eq!(p.reg(), None);
        p.set_reg(Some(Reg::new(13)));
        p.set_stack_valid(true);
        p.set_fixed(true);
        assert_eq!(p.reg(), Some(Reg::new(13)));
        assert!(p.stack_valid() && p.fixed() && !p.recomputable());
        p.set_reg(Some(Reg::new(0)));
        assert_eq!(p.reg(), Some(Reg::new(0)));
        p.set_reg(None);
        assert_eq!(p.reg(), None);
        assert!(p.stack_valid());
    }

    #[test]
    fn extra_parts_are_separate() {
        let mut t = AssignmentTable::new([1, 2, 1, 2]);
        t.part_mut(1, 1).set_reg(Some(Reg::new(4)));
        t.part_mut(3, 1).set_reg(Some(Reg::new(5)));
        assert_eq!(t.part(1, 1).reg(), Some(Reg::new(4)));
        assert_eq!(t.part(3, 1).reg(), Some(Reg::new(5)));
        assert_eq!(t.part(1, 0).reg(), None);
    }
}
