//! [`IrAdapter`] implementation for the seed IR, plus its instruction
//! compilers and the module-level driver.

mod driver;
mod lower;

pub use driver::{compile_module, CompiledModule, FunctionStats};
pub use lower::SeedLowering;

use crate::adapter::{
    BlockRef, ConstData, FuncRef, IrAdapter, Linkage, OperandRef, RegBank, StackVarInfo, ValueRef,
};
use crate::ir::{self, Module, Operand, Type};

/// Handle of an instruction in the prepared function: index into a flat
/// per-function instruction table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InstRef(pub u32);

#[derive(Default)]
struct Prepared {
    func: u32,
    args: Vec<ValueRef>,
    stack_vars: Vec<StackVarInfo>,
    blocks: Vec<BlockRef>,
    succs: Vec<Vec<BlockRef>>,
    phis: Vec<Vec<ValueRef>>,
    /// Per block: range into `insts`.
    inst_ranges: Vec<(u32, u32)>,
    insts: Vec<InstRef>,
    /// (block, index within block) for every instruction.
    inst_pos: Vec<(u32, u32)>,
    operands: Vec<Vec<OperandRef>>,
    results: Vec<Option<ValueRef>>,
    phi_incoming: Vec<Vec<(BlockRef, OperandRef)>>,
    types: Vec<Type>,
    aux: Vec<u64>,
}

pub struct SeedAdapter<'m> {
    module: &'m Module,
    cur: Option<Prepared>,
}

fn operand(op: &Operand, ty: Type) -> OperandRef {
    match op {
        Operand::Value(v) => OperandRef::Value(ValueRef(v.0)),
        Operand::Const(c) => OperandRef::Const(match ty {
            Type::I64 => ConstData::new(&[c.lo]),
            Type::I128 => ConstData::new(&[c.lo, c.hi]),
        }),
    }
}

impl<'m> SeedAdapter<'m> {
    pub fn new(module: &'m Module) -> Self {
        SeedAdapter { module, cur: None }
    }

    pub fn module(&self) -> &'m Module {
        self.module
    }

    fn prepared(&self) -> &Prepared {
        self.cur
            .as_ref()
            .expect("internal error: adapter queried before prepare()")
    }

    /// The function currently prepared.
    pub fn function(&self) -> &'m ir::Function {
        &self.module.functions[self.prepared().func as usize]
    }

    pub fn inst(&self, i: InstRef) -> &'m ir::Inst {
        let (b, k) = self.prepared().inst_pos[i.0 as usize];
        &self.function().blocks[b as usize].insts[k as usize]
    }

    pub fn value_type(&self, v: ValueRef) -> Type {
        self.prepared().types[v.index()]
    }

    fn operand_types(f: &ir::Function, m: &Module, inst: &ir::Inst) -> Vec<Type> {
        use ir::Opcode;
        match inst.op {
            Opcode::Call => {
                let callee = &m.functions[inst.callee.unwrap().0 as usize];
                callee.params.iter().map(|&p| callee.value_type(p)).collect()
            }
            Opcode::Ret => f.ret.into_iter().collect(),
            Opcode::Trunc => vec![Type::I128],
            Opcode::Add128 => vec![Type::I128; 2],
            _ => vec![Type::I64; inst.args.len()],
        }
    }
}

impl IrAdapter for SeedAdapter<'_> {
    type Inst = InstRef;

    fn func_count(&self) -> u32 {
        self.module.functions.len() as u32
    }

    fn func_name(&self, f: FuncRef) -> &str {
        &self.module.functions[f.0 as usize].name
    }

    fn func_linkage(&self, _f: FuncRef) -> Linkage {
        Linkage::External
    }

    fn func_is_definition(&self, _f: FuncRef) -> bool {
        true
    }

    fn prepare(&mut self, fr: FuncRef) {
        let f = &self.module.functions[fr.0 as usize];
        let mut p = Prepared {
            func: fr.0,
            args: f.params.iter().map(|v| ValueRef(v.0)).collect(),
            stack_vars: f
                .stack_vars
                .iter()
                .map(|s| StackVarInfo {
                    size: s.size,
                    align: s.align,
                })
                .collect(),
            blocks: (0..f.blocks.len() as u32).map(BlockRef).collect(),
            types: f.values.iter().map(|v| v.ty).collect(),
            aux: vec![0; f.blocks.len()],
            phi_incoming: vec![Vec::new(); f.values.len()],
            ..Prepared::default()
        };
        for (bi, b) in f.blocks.iter().enumerate() {
            p.succs
                .push(b.succs().iter().map(|s| BlockRef(s.0)).collect());
            p.phis
                .push(b.phis.iter().map(|phi| ValueRef(phi.result.0)).collect());
            for phi in &b.phis {
                p.phi_incoming[phi.result.0 as usize] = phi
                    .incoming
                    .iter()
                    .map(|(ib, op)| (BlockRef(ib.0), operand(op, phi.ty)))
                    .collect();
            }
            let start = p.insts.len() as u32;
            for (k, inst) in b.insts.iter().enumerate() {
                let id = InstRef(p.insts.len() as u32);
                p.insts.push(id);
                p.inst_pos.push((bi as u32, k as u32));
                let tys = Self::operand_types(f, self.module, inst);
                p.operands.push(
                    inst.args
                        .iter()
                        .zip(tys.iter().chain(std::iter::repeat(&Type::I64)))
                        .map(|(a, t)| operand(a, *t))
                        .collect(),
                );
                p.results.push(inst.result.map(|r| ValueRef(r.0)));
            }
            p.inst_ranges.push((start, p.insts.len() as u32));
        }
        self.cur = Some(p);
    }

    fn finalize(&mut self) {
        self.cur = None;
    }

    fn args(&self) -> &[ValueRef] {
        &self.prepared().args
    }

    fn stack_vars(&self) -> &[StackVarInfo] {
        &self.prepared().stack_vars
    }

    fn blocks(&self) -> &[BlockRef] {
        &self.prepared().blocks
    }

    fn succs(&self, b: BlockRef) -> &[BlockRef] {
        &self.prepared().succs[b.0 as usize]
    }

    fn phis(&self, b: BlockRef) -> &[ValueRef] {
        &self.prepared().phis[b.0 as usize]
    }

    fn insts(&self, b: BlockRef) -> &[InstRef] {
        let p = self.prepared();
        let (s, e) = p.inst_ranges[b.0 as usize];
        &p.insts[s as usize..e as usize]
    }

    fn block_aux(&self, b: BlockRef) -> u64 {
        self.prepared().aux[b.0 as usize]
    }

    fn set_block_aux(&mut self, b: BlockRef, bits: u64) {
        self.cur
            .as_mut()
            .expect("internal error: adapter queried before prepare()")
            .aux[b.0 as usize] = bits;
    }

    fn value_count(&self) -> u32 {
        self.prepared().types.len() as u32
    }

    fn part_count(&self, v: ValueRef) -> u32 {
        self.value_type(v).parts() as u32
    }

    fn part_size(&self, _v: ValueRef, _part: u32) -> u32 {
        8
    }

    fn part_bank(&self, _v: ValueRef, _part: u32) -> RegBank {
        RegBank::Gp
    }

    fn phi_incoming(&self, phi: ValueRef) -> &[(BlockRef, OperandRef)] {
        &self.prepared().phi_incoming[phi.index()]
    }

    fn inst_operands(&self, inst: InstRef) -> &[OperandRef] {
        &self.prepared().operands[inst.0 as usize]
    }

    fn inst_result(&self, inst: InstRef) -> Option<ValueRef> {
        self.prepared().results[inst.0 as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    const SRC: &str = "
        func @f(%a: i64, %b: i128) -> i64 {
          stack 8 align 8
        entry:
          %p = alloca_ref 0
          %x = add %a, 1
          %t = trunc %b
          ret %x
        }";

    #[test]
    fn dense_textual_numbering() {
        let m = parse_module(SRC).unwrap();
        let mut a = SeedAdapter::new(&m);
        a.prepare(FuncRef(0));
        assert_eq!(a.value_count(), 5);
        assert_eq!(a.args(), &[ValueRef(0), ValueRef(1)]);
        let insts = a.insts(BlockRef(0)).to_vec();
        let results: Vec<_> = insts.iter().map(|&i| a.inst_result(i)).collect();
        assert_eq!(
            results,
            vec![Some(ValueRef(2)), Some(ValueRef(3)), Some(ValueRef(4)), None]
        );
    }

    #[test]
    fn part_table() {
        let m = parse_module(SRC).unwrap();
        let mut a = SeedAdapter::new(&m);
        a.prepare(FuncRef(0));
        assert_eq!(a.part_count(ValueRef(0)), 1);
        assert_eq!(a.part_count(ValueRef(1)), 2);
        assert_eq!(a.part_size(ValueRef(1), 1), 8);
        assert_eq!(a.part_bank(ValueRef(1), 1), RegBank::Gp);
        // The stack variable reference is an ordinary i64.
        assert_eq!(a.part_count(ValueRef(2)), 1);
    }

    #[test]
    fn aux_storage() {
        let m = parse_module(
            "func @f(%a: i64) -> i64 { entry: condbr %a, x, y x: ret 1 y: ret 2 }",
        )
        .unwrap();
        let mut a = SeedAdapter::new(&m);
        a.prepare(FuncRef(0));
        assert_eq!(a.block_aux(BlockRef(1)), 0);
        a.set_block_aux(BlockRef(1), 7);
        a.set_block_aux(BlockRef(2), u64::MAX);
        assert_eq!(a.block_aux(BlockRef(1)), 7);
        assert_eq!(a.block_aux(BlockRef(2)), u64::MAX);
        assert_eq!(a.block_aux(BlockRef(0)), 0);
    }

    #[test]
    #[should_panic(expected = "before prepare")]
    fn aux_before_prepare_is_an_internal_error() {
        let m = parse_module("func @f() -> i64 { entry: ret 0 }").unwrap();
        let a = SeedAdapter::new(&m);
        a.block_aux(BlockRef(0));
    }

    #[test]
    fn prepare_is_repeatable() {
        let m = parse_module(SRC).unwrap();
        let mut a = SeedAdapter::new(&m);
        a.prepare(FuncRef(0));
        let first: Vec<_> = a.insts(BlockRef(0)).iter().map(|&i| a.inst_result(i)).collect();
        a.finalize();
        a.prepare(FuncRef(0));
        let second: Vec<_> = a.insts(BlockRef(0)).iter().map(|&i| a.inst_result(i)).collect();
        assert_eq!(first, second);
    }
}
