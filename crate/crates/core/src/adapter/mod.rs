//! The IR adapter contract.
//!
//! Analysis and code generation see the IR only through [`IrAdapter`]. All
//! entities are small integer handles; per-value data lives in framework
//! arrays indexed by the dense value number.

pub mod seed;

use std::fmt::Debug;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncRef(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockRef(pub u32);

/// A non-constant value. The number is dense in `[0, value_count)` for the
/// prepared function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueRef(pub u32);

impl ValueRef {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegBank {
    Gp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Linkage {
    External,
    Internal,
}

/// Raw constant data, one 64-bit word per part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConstData {
    words: [u64; 2],
    parts: u8,
}

impl ConstData {
    pub fn new(words: &[u64]) -> Self {
        assert!((1..=2).contains(&words.len()), "constants have one or two parts");
        let mut w = [0; 2];
        w[..words.len()].copy_from_slice(words);
        ConstData {
            words: w,
            parts: words.len() as u8,
        }
    }

    pub fn part_count(&self) -> u32 {
        self.parts as u32
    }

    pub fn part(&self, idx: u32) -> u64 {
        self.words[idx as usize]
    }

    pub fn bytes(&self, idx: u32) -> [u8; 8] {
        self.part(idx).to_le_bytes()
    }
}

/// An instruction operand: either a numbered value or an inline constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OperandRef {
    Value(ValueRef),
    Const(ConstData),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackVarInfo {
    pub size: u32,
    pub align: u32,
}

pub trait IrAdapter {
    type Inst: Copy + Debug;

    fn func_count(&self) -> u32;
    fn func_name(&self, f: FuncRef) -> &str;
    fn func_linkage(&self, f: FuncRef) -> Linkage;
    fn func_is_definition(&self, f: FuncRef) -> bool;

    /// Called before any query about `f`.
    fn prepare(&mut self, f: FuncRef);
    /// Called when the framework is done with the current function.
    fn finalize(&mut self) {}

    // Queries about the prepared function.

    fn args(&self) -> &[ValueRef];
    fn stack_vars(&self) -> &[StackVarInfo];
    /// All blocks, entry first.
    fn blocks(&self) -> &[BlockRef];
    fn succs(&self, b: BlockRef) -> &[BlockRef];
    fn phis(&self, b: BlockRef) -> &[ValueRef];
    fn insts(&self, b: BlockRef) -> &[Self::Inst];
    fn block_aux(&self, b: BlockRef) -> u64;
    fn set_block_aux(&mut self, b: BlockRef, bits: u64);

    fn value_count(&self) -> u32;
    fn part_count(&self, v: ValueRef) -> u32;
    fn part_size(&self, v: ValueRef, part: u32) -> u32;
    fn part_bank(&self, v: ValueRef, part: u32) -> RegBank;

    fn phi_incoming(&self, phi: ValueRef) -> &[(BlockRef, OperandRef)];
    fn inst_operands(&self, inst: Self::Inst) -> &[OperandRef];
    fn inst_result(&self, inst: Self::Inst) -> Option<ValueRef>;
}
