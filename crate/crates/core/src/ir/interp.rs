//! Reference interpreter. This is the semantic oracle for differential
//! testing, so it stays as direct as possible.

use super::{Function, Module, Opcode, Operand, Type};
pub use crate::trap::Trap;

pub const DEFAULT_STEP_LIMIT: u64 = 10_000_000;
pub const MAX_CALL_DEPTH: usize = 1024;

/// Stack variable addresses start here so that they are never confused with
/// small integers.
const ADDR_BASE: u64 = 0x1000_0000;

struct Frame<'m> {
    f: &'m Function,
    vals: Vec<u128>,
    offsets: Vec<usize>,
    frame_lo: usize,
    block: usize,
    prev: Option<usize>,
    next_inst: usize,
}

struct Interp<'m> {
    m: &'m Module,
    steps: u64,
    limit: u64,
    mem: Vec<u8>,
}

fn mask(ty: Type, v: u128) -> u128 {
    match ty {
        Type::I64 => v as u64 as u128,
        Type::I128 => v,
    }
}

fn get(vals: &[u128], op: &Operand) -> u128 {
    match op {
        Operand::Value(v) => vals[v.0 as usize],
        Operand::Const(c) => c.as_u128(),
    }
}

impl<'m> Interp<'m> {
    fn enter(&mut self, f: &'m Function, args: &[u128]) -> Frame<'m> {
        let frame_lo = self.mem.len();
        let mut offsets = Vec::with_capacity(f.stack_vars.len());
        for sv in &f.stack_vars {
            let align = sv.align.max(1) as usize;
            let at = self.mem.len().div_ceil(align) * align;
            self.mem.resize(at + sv.size as usize, 0);
            offsets.push(at);
        }
        let mut vals = vec![0u128; f.values.len()];
        for (p, a) in f.params.iter().zip(args) {
            vals[p.0 as usize] = mask(f.value_type(*p), *a);
        }
        Frame {
            f,
            vals,
            offsets,
            frame_lo,
            block: 0,
            prev: None,
            next_inst: 0,
        }
    }

    /// Address check against the stack variables of the running frame.
    fn check(&self, fr: &Frame, addr: u64) -> Result<usize, Trap> {
        let off = addr.wrapping_sub(ADDR_BASE) as usize;
        if addr < ADDR_BASE || off < fr.frame_lo || off.saturating_add(8) > self.mem.len() {
            Err(Trap::OutOfBounds)
        } else {
            Ok(off)
        }
    }

    fn run(&mut self, f: &'m Function, args: &[u128]) -> Result<u128, Trap> {
        let mut stack = vec![self.enter(f, args)];
        // Value returned by the most recently finished callee.
        let mut returned: Option<u128> = None;
        loop {
            let depth = stack.len();
            let fr = stack.last_mut().unwrap();
            let b = &fr.f.blocks[fr.block];
            if fr.next_inst == 0 && returned.is_none() {
                if let Some(p) = fr.prev {
                    // φs read their inputs simultaneously.
                    let new: Vec<u128> = b
                        .phis
                        .iter()
                        .map(|phi| {
                            let (_, op) = phi
                                .incoming
                                .iter()
                                .find(|(ib, _)| ib.0 as usize == p)
                                .expect("validated phi");
                            mask(phi.ty, get(&fr.vals, op))
                        })
                        .collect();
                    for (phi, v) in b.phis.iter().zip(new) {
                        fr.vals[phi.result.0 as usize] = v;
                    }
                }
            }
            let inst = &b.insts[fr.next_inst];
            if let Some(r) = returned.take() {
                // Resume after a call.
                if let Some(res) = inst.result {
                    fr.vals[res.0 as usize] = mask(fr.f.value_type(res), r);
                }
                fr.next_inst += 1;
                continue;
            }
            self.steps += 1;
            if self.steps > self.limit {
                return Err(Trap::StepLimit);
            }
            let a = |i: usize| get(&fr.vals, &inst.args[i]);
            let a64 = |i: usize| a(i) as u64;
            let r: u128 = match inst.op {
                Opcode::Add => a64(0).wrapping_add(a64(1)) as u128,
                Opcode::Sub => a64(0).wrapping_sub(a64(1)) as u128,
                Opcode::Mul => a64(0).wrapping_mul(a64(1)) as u128,
                Opcode::Udiv | Opcode::Urem => {
                    let d = a64(1);
                    if d == 0 {
                        return Err(Trap::DivByZero);
                    }
                    if inst.op == Opcode::Udiv {
                        (a64(0) / d) as u128
                    } else {
                        (a64(0) % d) as u128
                    }
                }
                Opcode::And => (a64(0) & a64(1)) as u128,
                Opcode::Or => (a64(0) | a64(1)) as u128,
                Opcode::Xor => (a64(0) ^ a64(1)) as u128,
                Opcode::Shl => (a64(0) << (a64(1) & 63)) as u128,
                Opcode::Shr => (a64(0) >> (a64(1) & 63)) as u128,
                Opcode::CmpEq => (a64(0) == a64(1)) as u128,
                Opcode::CmpNe => (a64(0) != a64(1)) as u128,
                Opcode::CmpUlt => (a64(0) < a64(1)) as u128,
                Opcode::CmpSlt => ((a64(0) as i64) < (a64(1) as i64)) as u128,
                Opcode::Addr => a64(0)
                    .wrapping_add(a64(1).wrapping_mul(a64(2)))
                    .wrapping_add(a64(3) as i64 as u64) as u128,
                Opcode::AllocaRef => (ADDR_BASE + fr.offsets[a64(0) as usize] as u64) as u128,
                Opcode::Load => {
                    let off = self.check(fr, a64(0))?;
                    u64::from_le_bytes(self.mem[off..off + 8].try_into().unwrap()) as u128
                }
                Opcode::Store => {
                    let off = self.check(fr, a64(0))?;
                    let v = a64(1);
                    self.mem[off..off + 8].copy_from_slice(&v.to_le_bytes());
                    0
                }
                Opcode::Trunc | Opcode::Zext128 => a64(0) as u128,
                Opcode::Add128 => a(0).wrapping_add(a(1)),
                Opcode::Call => {
                    if depth >= MAX_CALL_DEPTH {
                        return Err(Trap::CallDepth);
                    }
                    let callee = &self.m.functions[inst.callee.expect("call").0 as usize];
                    let args: Vec<u128> = (0..inst.args.len()).map(a).collect();
                    let frame = self.enter(callee, &args);
                    stack.push(frame);
                    continue;
                }
                Opcode::Br | Opcode::CondBr => {
                    let t = if inst.op == Opcode::CondBr && a64(0) == 0 { 1 } else { 0 };
                    fr.prev = Some(fr.block);
                    fr.block = inst.targets[t].0 as usize;
                    fr.next_inst = 0;
                    continue;
                }
                Opcode::Ret => {
                    let v = inst.args.first().map(|_| a(0)).unwrap_or(0);
                    let done = stack.pop().unwrap();
                    self.mem.truncate(done.frame_lo);
                    if stack.is_empty() {
                        return Ok(v);
                    }
                    returned = Some(v);
                    continue;
                }
            };
            if let Some(res) = inst.result {
                fr.vals[res.0 as usize] = mask(fr.f.value_type(res), r);
            }
            fr.next_inst += 1;
        }
    }
}

/// Runs `func` with the default step limit. i128 parameters take two
/// consecutive argument slots (lo, hi); the result is returned as (lo, hi).
pub fn interpret(m: &Module, func: &str, args: &[u64]) -> Result<(u64, u64), Trap> {
    interpret_with_limit(m, func, args, DEFAULT_STEP_LIMIT)
}

pub fn interpret_with_limit(
    m: &Module,
    func: &str,
    args: &[u64],
    limit: u64,
) -> Result<(u64, u64), Trap> {
    let (_, f) = m
        .function(func)
        .ok_or_else(|| Trap::Invalid(format!("unknown function '@{func}'")))?;
    if args.len() != f.arg_slots() {
        return Err(Trap::Invalid(format!(
            "'@{func}' takes {} argument slots, {} given",
            f.arg_slots(),
            args.len()
        )));
    }
    let mut slots = args.iter();
    let vals: Vec<u128> = f
        .params
        .iter()
        .map(|&p| {
            let lo = *slots.next().unwrap() as u128;
            match f.value_type(p) {
                Type::I64 => lo,
                Type::I128 => lo | ((*slots.next().unwrap() as u128) << 64),
            }
        })
        .collect();
    let mut it = Interp {
        m,
        steps: 0,
        limit,
        mem: Vec::new(),
    };
    let r = it.run(f, &vals)?;
    Ok((r as u64, (r >> 64) as u64))
}
