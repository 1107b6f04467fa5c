//! Append-only code buffer with labels, branch fixups and patch regions.

use super::{Cond, Inst, WORD};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Label(u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchPurpose {
    FrameSize,
    SaveSlots,
    RestoreSlots,
    BranchFixup,
}

/// A region of words that may be rewritten after emission.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchPoint {
    pub word: u32,
    pub len: u32,
    pub purpose: PatchPurpose,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("label '{0}' is never bound")]
    UnboundLabel(String),
    #[error("label '{0}' is bound twice")]
    Rebound(String),
}

#[derive(Clone, Debug, Default)]
pub struct CodeBuffer {
    bytes: Vec<u8>,
    labels: Vec<(String, Option<u32>)>,
    /// (word of the branch, target label)
    fixups: Vec<(u32, Label)>,
    patches: Vec<PatchPoint>,
    /// Words already rewritten; each patchable word may change only once.
    patched: std::collections::HashSet<u32>,
    /// Every rewrite in order: (word, purpose of the enclosing region).
    patch_log: Vec<(u32, PatchPurpose)>,
}

impl CodeBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current position in words.
    pub fn pos(&self) -> u32 {
        (self.bytes.len() / WORD) as u32
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn patch_points(&self) -> &[PatchPoint] {
        &self.patches
    }

    pub fn patch_log(&self) -> &[(u32, PatchPurpose)] {
        &self.patch_log
    }

    pub fn emit(&mut self, inst: Inst) {
        let w = inst
            .encode()
            .unwrap_or_else(|e| panic!("internal error: cannot encode {inst:?}: {e}"));
        self.bytes.extend_from_slice(&w);
    }

    pub fn new_label(&mut self, name: impl Into<String>) -> Label {
        self.labels.push((name.into(), None));
        Label(self.labels.len() as u32 - 1)
    }

    pub fn label_pos(&self, l: Label) -> Option<u32> {
        self.labels[l.0 as usize].1
    }

    /// Binds `l` to the current position and resolves pending branches.
    pub fn bind(&mut self, l: Label) -> Result<(), CodeError> {
        let here = self.pos();
        let entry = &mut self.labels[l.0 as usize];
        if entry.1.is_some() {
            return Err(CodeError::Rebound(entry.0.clone()));
        }
        entry.1 = Some(here);
        let pending: Vec<u32> = self
            .fixups
            .iter()
            .filter(|(_, t)| *t == l)
            .map(|(w, _)| *w)
            .collect();
        self.fixups.retain(|(_, t)| *t != l);
        for w in pending {
            let off = here as i64 - (w as i64 + 1);
            let old = self.read(w);
            let new = match old {
                Inst::Jmp { .. } => Inst::Jmp { off: off as i32 },
                Inst::Bcc { cond, .. } => Inst::Bcc { cond, off: off as i32 },
                other => panic!("internal error: fixup on {other:?}"),
            };
            self.patch(w, new);
        }
        Ok(())
    }

    fn branch(&mut self, l: Label, make: impl Fn(i32) -> Inst) {
        let at = self.pos();
        match self.label_pos(l) {
            Some(t) => self.emit(make((t as i64 - (at as i64 + 1)) as i32)),
            None => {
                self.emit(make(0));
                self.fixups.push((at, l));
                self.patches.push(PatchPoint {
                    word: at,
                    len: 1,
                    purpose: PatchPurpose::BranchFixup,
                });
            }
        }
    }

    pub fn emit_jmp(&mut self, l: Label) {
        self.branch(l, |off| Inst::Jmp { off });
    }

    pub fn emit_bcc(&mut self, cond: Cond, l: Label) {
        self.branch(l, |off| Inst::Bcc { cond, off });
    }

    /// Emits `len` words of `fill` that can be rewritten later.
    pub fn reserve(&mut self, len: u32, fill: Inst, purpose: PatchPurpose) -> PatchPoint {
        let p = PatchPoint {
            word: self.pos(),
            len,
            purpose,
        };
        for _ in 0..len {
            self.emit(fill);
        }
        self.patches.push(p);
        p
    }

    pub fn read(&self, word: u32) -> Inst {
        let at = word as usize * WORD;
        Inst::decode(&self.bytes[at..at + WORD]).expect("buffer holds valid words")
    }

    /// Rewrites one word inside a registered patch region.
    pub fn patch(&mut self, word: u32, inst: Inst) {
        let region = self
            .patches
            .iter()
            .rev()
            .find(|p| p.word <= word && word < p.word + p.len)
            .unwrap_or_else(|| {
                panic!("internal error: patch of word {word} outside any patch region")
            });
        self.patch_log.push((word, region.purpose));
        assert!(
            self.patched.insert(word),
            "internal error: word {word} patched twice"
        );
        let at = word as usize * WORD;
        let w = inst.encode().expect("patched instruction encodes");
        self.bytes[at..at + WORD].copy_from_slice(&w);
    }

    /// Returns the code once every branch is resolved.
    pub fn finish(self) -> Result<Vec<u8>, CodeError> {
        if let Some((_, l)) = self.fixups.first() {
            return Err(CodeError::UnboundLabel(self.labels[l.0 as usize].0.clone()));
        }
        Ok(self.bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visa::Reg;

    #[test]
    fn backward_jump_offset() {
        let mut b = CodeBuffer::new();
        let l = b.new_label("top");
        b.bind(l).unwrap();
        for _ in 0..3 {
            b.emit(Inst::Nop);
        }
        b.emit_jmp(l);
        assert_eq!(b.read(3), Inst::Jmp { off: -4 });
    }

    #[test]
    fn forward_jump_to_next_word_is_zero() {
        let mut b = CodeBuffer::new();
        let l = b.new_label("next");
        b.emit_bcc(Cond::Ne, l);
        b.bind(l).unwrap();
        b.emit(Inst::Ret);
        assert_eq!(b.read(0), Inst::Bcc { cond: Cond::Ne, off: 0 });
        assert!(b.finish().is_ok());
    }

    #[test]
    fn unbound_label_is_named() {
        let mut b = CodeBuffer::new();
        let l = b.new_label("exit.3");
        b.emit_jmp(l);
        assert_eq!(b.finish(), Err(CodeError::UnboundLabel("exit.3".into())));
    }

    #[test]
    #[should_panic(expected = "outside any patch region")]
    fn patch_outside_region_is_refused() {
        let mut b = CodeBuffer::new();
        b.emit(Inst::Nop);
        b.patch(0, Inst::Ret);
    }

    #[test]
    #[should_panic(expected = "patched twice")]
    fn patch_regions_are_write_once() {
        let mut b = CodeBuffer::new();
        let p = b.reserve(2, Inst::Nop, PatchPurpose::SaveSlots);
        b.patch(p.word, Inst::Push { src: Reg::new(8) });
        b.patch(p.word, Inst::Push { src: Reg::new(9) });
    }
}
