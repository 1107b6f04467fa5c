//! Reference SSA IR ("seed IR").
//!
//! A module is a list of functions. Each function owns a dense table of
//! values: parameters first, then φ-nodes and instruction results in block
//! order. That ordering is also the value numbering exposed through the
//! adapter, so it must be preserved by everything that builds functions.

mod interp;
mod parse;
mod print;
mod validate;

pub use interp::{interpret, interpret_with_limit, DEFAULT_STEP_LIMIT, MAX_CALL_DEPTH};
pub use crate::trap::Trap;
pub use parse::{parse_module, ParseError};
pub use print::{print_inst, print_module};
pub use validate::{validate, Violation};

use std::collections::HashMap;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    I64,
    I128,
}

impl Type {
    pub fn parts(self) -> usize {
        match self {
            Type::I64 => 1,
            Type::I128 => 2,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::I64 => "i64",
            Type::I128 => "i128",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FuncId(pub u32);

/// An inline constant. i64 constants keep `hi == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Const {
    pub lo: u64,
    pub hi: u64,
}

impl Const {
    pub fn i64(v: u64) -> Self {
        Const { lo: v, hi: 0 }
    }

    pub fn as_u128(self) -> u128 {
        (self.lo as u128) | ((self.hi as u128) << 64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(ValueId),
    Const(Const),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    Add,
    Sub,
    Mul,
    Udiv,
    Urem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    CmpEq,
    CmpNe,
    CmpUlt,
    CmpSlt,
    Addr,
    Load,
    Store,
    AllocaRef,
    Trunc,
    Zext128,
    Add128,
    Call,
    Br,
    CondBr,
    Ret,
}

impl Opcode {
    pub const ALL: [Opcode; 25] = [
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Udiv,
        Opcode::Urem,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Shl,
        Opcode::Shr,
        Opcode::CmpEq,
        Opcode::CmpNe,
        Opcode::CmpUlt,
        Opcode::CmpSlt,
        Opcode::Addr,
        Opcode::Load,
        Opcode::Store,
        Opcode::AllocaRef,
        Opcode::Trunc,
        Opcode::Zext128,
        Opcode::Add128,
        Opcode::Call,
        Opcode::Br,
        Opcode::CondBr,
        Opcode::Ret,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::Udiv => "udiv",
            Opcode::Urem => "urem",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Xor => "xor",
            Opcode::Shl => "shl",
            Opcode::Shr => "shr",
            Opcode::CmpEq => "cmp.eq",
            Opcode::CmpNe => "cmp.ne",
            Opcode::CmpUlt => "cmp.ult",
            Opcode::CmpSlt => "cmp.slt",
            Opcode::Addr => "addr",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::AllocaRef => "alloca_ref",
            Opcode::Trunc => "trunc",
            Opcode::Zext128 => "zext128",
            Opcode::Add128 => "add128",
            Opcode::Call => "call",
            Opcode::Br => "br",
            Opcode::CondBr => "condbr",
            Opcode::Ret => "ret",
        }
    }

    pub fn from_name(s: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|op| op.name() == s)
    }

    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Br | Opcode::CondBr | Opcode::Ret)
    }

    pub fn is_binary_i64(self) -> bool {
        matches!(
            self,
            Opcode::Add
                | Opcode::Sub
                | Opcode::Mul
                | Opcode::Udiv
                | Opcode::Urem
                | Opcode::And
                | Opcode::Or
                | Opcode::Xor
                | Opcode::Shl
                | Opcode::Shr
                | Opcode::CmpEq
                | Opcode::CmpNe
                | Opcode::CmpUlt
                | Opcode::CmpSlt
        )
    }

    pub fn is_compare(self) -> bool {
        matches!(
            self,
            Opcode::CmpEq | Opcode::CmpNe | Opcode::CmpUlt | Opcode::CmpSlt
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inst {
    pub result: Option<ValueId>,
    pub op: Opcode,
    pub args: Vec<Operand>,
    /// Branch targets for `br`/`condbr` (`condbr`: true target first).
    pub targets: Vec<BlockId>,
    pub callee: Option<FuncId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phi {
    pub result: ValueId,
    pub ty: Type,
    pub incoming: Vec<(BlockId, Operand)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub phis: Vec<Phi>,
    pub insts: Vec<Inst>,
}

impl Block {
    pub fn terminator(&self) -> Option<&Inst> {
        self.insts.last().filter(|i| i.op.is_terminator())
    }

    /// Successors in terminator order. Duplicates are kept.
    pub fn succs(&self) -> &[BlockId] {
        self.terminator().map(|t| t.targets.as_slice()).unwrap_or(&[])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackVar {
    pub size: u32,
    pub align: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueInfo {
    pub name: String,
    pub ty: Type,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<ValueId>,
    pub ret: Option<Type>,
    pub blocks: Vec<Block>,
    pub stack_vars: Vec<StackVar>,
    pub values: Vec<ValueInfo>,
}

impl Function {
    pub fn value_type(&self, v: ValueId) -> Type {
        self.values[v.0 as usize].ty
    }

    pub fn value_name(&self, v: ValueId) -> &str {
        &self.values[v.0 as usize].name
    }

    pub fn operand_type(&self, op: Operand) -> Option<Type> {
        match op {
            Operand::Value(v) => Some(self.value_type(v)),
            Operand::Const(_) => None,
        }
    }

    /// Number of 64-bit argument slots the parameters occupy.
    pub fn arg_slots(&self) -> usize {
        self.params
            .iter()
            .map(|&p| self.value_type(p).parts())
            .sum()
    }

    pub fn block_by_label(&self, label: &str) -> Option<BlockId> {
        self.blocks
            .iter()
            .position(|b| b.label == label)
            .map(|i| BlockId(i as u32))
    }

    pub fn preds(&self) -> Vec<Vec<BlockId>> {
        let mut preds = vec![Vec::new(); self.blocks.len()];
        for (i, b) in self.blocks.iter().enumerate() {
            for &s in b.succs() {
                preds[s.0 as usize].push(BlockId(i as u32));
            }
        }
        preds
    }

    /// Recomputes the value table so that numbering follows the canonical
    /// order (params, then φs and results in block order). Names are kept.
    /// Used by program transformations that add or drop definitions.
    pub fn renumber(&mut self) {
        let mut order = Vec::with_capacity(self.values.len());
        order.extend(self.params.iter().copied());
        for b in &self.blocks {
            order.extend(b.phis.iter().map(|p| p.result));
            order.extend(b.insts.iter().filter_map(|i| i.result));
        }
        let mut map = vec![None; self.values.len()];
        let mut values = Vec::with_capacity(order.len());
        for (new, old) in order.iter().enumerate() {
            map[old.0 as usize] = Some(ValueId(new as u32));
            values.push(self.values[old.0 as usize].clone());
        }
        let remap = |v: ValueId| map[v.0 as usize].expect("use of a value without definition");
        let remap_op = |op: &mut Operand| {
            if let Operand::Value(v) = op {
                *v = remap(*v);
            }
        };
        for p in &mut self.params {
            *p = remap(*p);
        }
        for b in &mut self.blocks {
            for phi in &mut b.phis {
                phi.result = remap(phi.result);
                for (_, op) in &mut phi.incoming {
                    remap_op(op);
                }
            }
            for inst in &mut b.insts {
                inst.result = inst.result.map(remap);
                for op in &mut inst.args {
                    remap_op(op);
                }
            }
        }
        self.values = values;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Module {
    pub functions: Vec<Function>,
    pub symbols: HashMap<String, FuncId>,
}

impl Module {
    pub fn new(functions: Vec<Function>) -> Self {
        let symbols = functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.clone(), FuncId(i as u32)))
            .collect();
        Module { functions, symbols }
    }

    pub fn function(&self, name: &str) -> Option<(FuncId, &Function)> {
        self.symbols
            .get(name)
            .map(|&id| (id, &self.functions[id.0 as usize]))
    }
}
