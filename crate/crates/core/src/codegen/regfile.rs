//! Register file state and the allocation policy.

use crate::visa::Reg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegState {
    Free,
    /// Holds a value part; evictable unless the part is locked.
    Value { v: u32, part: u32 },
    /// Temporarily owned by an instruction compiler; never evicted.
    Scratch,
    /// Pinned to a value part for a loop; never evicted. The value need not
    /// be defined yet.
    Fixed { v: u32, part: u32 },
}

/// Set of registers as a bit mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RegSet(pub u16);

impl RegSet {
    pub const EMPTY: RegSet = RegSet(0);

    pub fn of(regs: &[Reg]) -> RegSet {
        RegSet(regs.iter().fold(0, |m, r| m | 1 << r.id()))
    }

    pub fn contains(self, r: Reg) -> bool {
        self.0 & (1 << r.id()) != 0
    }

    pub fn insert(&mut self, r: Reg) {
        self.0 |= 1 << r.id();
    }

    pub fn union(self, o: RegSet) -> RegSet {
        RegSet(self.0 | o.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Reg> {
        (0..16u8).filter(move |i| self.0 & (1 << i) != 0).map(Reg::new)
    }
}

/// Registers r0..r13; fp and sp are never allocated.
pub const ALLOCATABLE: u8 = 14;

#[derive(Clone, Debug)]
pub struct RegFile {
    state: [RegState; 16],
    clobbered: RegSet,
    cursor: u8,
}

impl Default for RegFile {
    fn default() -> Self {
        RegFile {
            state: [RegState::Free; 16],
            clobbered: RegSet::EMPTY,
            cursor: 0,
        }
    }
}

/// Outcome of choosing a register.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice {
    Free(Reg),
    /// The register holds this value part, which must be evicted first.
    Evict(Reg, u32, u32),
}

impl RegFile {
    pub fn state(&self, r: Reg) -> RegState {
        self.state[r.id() as usize]
    }

    pub fn set(&mut self, r: Reg, s: RegState) {
        if s != RegState::Free && r.is_callee_saved() {
            self.clobbered.insert(r);
        }
        self.state[r.id() as usize] = s;
    }

    /// Callee-saved registers written at any point so far, ascending.
    pub fn clobbered(&self) -> Vec<Reg> {
        self.clobbered.iter().collect()
    }

    pub fn cursor(&self) -> Reg {
        Reg::new(self.cursor)
    }

    /// Lowest-numbered free register outside `exclude`; otherwise the next
    /// evictable register at or after the round-robin cursor.
    pub fn choose(&mut self, exclude: RegSet, locked: impl Fn(u32, u32) -> bool) -> Option<Choice> {
        for i in 0..ALLOCATABLE {
            let r = Reg::new(i);
            if !exclude.contains(r) && self.state(r) == RegState::Free {
                return Some(Choice::Free(r));
            }
        }
        for k in 0..ALLOCATABLE {
            let i = (self.cursor + k) % ALLOCATABLE;
            let r = Reg::new(i);
            if exclude.contains(r) {
                continue;
            }
            if let RegState::Value { v, part } = self.state(r) {
                if !locked(v, part) {
                    self.cursor = (i + 1) % ALLOCATABLE;
                    return Some(Choice::Evict(r, v, part));
                }
            }
        }
        None
    }

    pub fn regs(&self) -> impl Iterator<Item = (Reg, RegState)> + '_ {
        (0..16u8).map(|i| (Reg::new(i), self.state[i as usize]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowest_free_register_wins() {
        let mut rf = RegFile::default();
        for i in 0..ALLOCATABLE {
            if i != 3 && i != 5 {
                rf.set(Reg::new(i), RegState::Scratch);
            }
        }
        assert_eq!(rf.choose(RegSet::EMPTY, |_, _| false), Some(Choice::Free(Reg::new(3))));
    }

    #[test]
    fn round_robin_eviction_progresses() {
        let mut rf = RegFile::default();
        for i in 0..ALLOCATABLE {
            rf.set(Reg::new(i), RegState::Value { v: i as u32, part: 0 });
        }
        let picks: Vec<_> = (0..3)
            .map(|_| match rf.choose(RegSet::EMPTY, |_, _| false) {
                Some(Choice::Evict(r, ..)) => r.id(),
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(picks, [0, 1, 2]);
        assert_eq!(rf.cursor(), Reg::new(3));
    }

    #[test]
    fn locked_fixed_and_scratch_are_skipped() {
        let mut rf = RegFile::default();
        for i in 0..ALLOCATABLE {
            rf.set(Reg::new(i), RegState::Value { v: i as u32, part: 0 });
        }
        rf.set(Reg::new(0), RegState::Fixed { v: 0, part: 0 });
        rf.set(Reg::new(1), RegState::Scratch);
        // v2 is locked.
        let c = rf.choose(RegSet::EMPTY, |v, _| v == 2);
        assert_eq!(c, Some(Choice::Evict(Reg::new(3), 3, 0)));
    }

    #[test]
    fn only_callee_saved_registers_count_as_clobbered() {
        let mut rf = RegFile::default();
        rf.set(Reg::new(2), RegState::Scratch);
        rf.set(Reg::new(9), RegState::Scratch);
        rf.set(Reg::new(9), RegState::Free);
        assert_eq!(rf.clobbered(), vec![Reg::new(9)]);
    }

    #[test]
    fn nothing_evictable() {
        let mut rf = RegFile::default();
        for i in 0..ALLOCATABLE {
            rf.set(Reg::new(i), RegState::Scratch);
        }
        assert_eq!(rf.choose(RegSet::EMPTY, |_, _| false), None);
    }
}
