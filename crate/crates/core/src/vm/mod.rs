//! Deterministic executor for vISA images.

use crate::trap::Trap;
use crate::visa::{format_inst, AluOp, Cond, Image, ImageError, Inst, Reg, ARG_REGS, WORD};
use std::io::Write;
use thiserror::Error;

pub const DEFAULT_MEMORY: usize = 1 << 20;
pub const DEFAULT_STEP_LIMIT: u64 = 100_000_000;
pub const MAX_CALL_DEPTH: u32 = 1024;

/// Return address pushed for the outermost frame.
const SENTINEL: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("function '{func}', word {word}: invalid instruction")]
    BadInstruction { func: String, word: usize },
    #[error("function '{func}', word {word}: call to function index {index}, image has {count}")]
    BadCallIndex {
        func: String,
        word: usize,
        index: u32,
        count: usize,
    },
    #[error("function '{func}', word {word}: branch target outside the function")]
    BadBranchTarget { func: String, word: usize },
}

/// A loaded, pre-decoded image.
#[derive(Clone, Debug)]
pub struct Program {
    pub image: Image,
    code: Vec<Vec<Inst>>,
}

impl Program {
    pub fn load(bytes: &[u8]) -> Result<Program, LoadError> {
        Self::from_image(Image::from_bytes(bytes)?)
    }

    pub fn from_image(image: Image) -> Result<Program, LoadError> {
        let count = image.functions.len();
        let mut code = Vec::with_capacity(count);
        for f in &image.functions {
            let mut insts = Vec::with_capacity(f.code.len() / WORD);
            for (word, chunk) in f.code.chunks(WORD).enumerate() {
                let inst = Inst::decode(chunk).map_err(|_| LoadError::BadInstruction {
                    func: f.name.clone(),
                    word,
                })?;
                match inst {
                    Inst::Call { func } if func as usize >= count => {
                        return Err(LoadError::BadCallIndex {
                            func: f.name.clone(),
                            word,
                            index: func,
                            count,
                        })
                    }
                    Inst::Jmp { off } | Inst::Bcc { off, .. } => {
                        let t = word as i64 + 1 + off as i64;
                        if t < 0 || t as usize >= f.code.len() / WORD {
                            return Err(LoadError::BadBranchTarget {
                                func: f.name.clone(),
                                word,
                            });
                        }
                    }
                    _ => {}
                }
                insts.push(inst);
            }
            code.push(insts);
        }
        Ok(Program { image, code })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flags {
    pub zf: bool,
    pub sf: bool,
    pub cf: bool,
    pub of: bool,
}

impl Flags {
    pub fn holds(&self, c: Cond) -> bool {
        match c {
            Cond::Eq => self.zf,
            Cond::Ne => !self.zf,
            Cond::Ult => self.cf,
            Cond::Uge => !self.cf,
            Cond::Slt => self.sf != self.of,
            Cond::Sge => self.sf == self.of,
        }
    }

    fn result(r: u64, cf: bool, of: bool) -> Flags {
        Flags {
            zf: r == 0,
            sf: (r as i64) < 0,
            cf,
            of,
        }
    }
}

/// `a + b + carry` with flags.
pub fn add_flags(a: u64, b: u64, carry: bool) -> (u64, Flags) {
    let (s1, c1) = a.overflowing_add(b);
    let (r, c2) = s1.overflowing_add(carry as u64);
    let of = ((a ^ r) & (b ^ r)) >> 63 != 0;
    (r, Flags::result(r, c1 || c2, of))
}

/// `a - b` with flags, as set by SUB and CMP.
pub fn sub_flags(a: u64, b: u64) -> (u64, Flags) {
    let r = a.wrapping_sub(b);
    let of = ((a ^ b) & (a ^ r)) >> 63 != 0;
    (r, Flags::result(r, a < b, of))
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub memory: usize,
    pub step_limit: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            memory: DEFAULT_MEMORY,
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunResult {
    pub lo: u64,
    pub hi: u64,
    pub steps: u64,
}

pub struct Vm<'p> {
    prog: &'p Program,
    pub regs: [u64; 16],
    pub flags: Flags,
    mem: Vec<u8>,
    depth: u32,
    steps: u64,
    limit: u64,
    trace: Option<&'p mut dyn Write>,
}

impl<'p> Vm<'p> {
    pub fn new(prog: &'p Program, opts: RunOptions) -> Self {
        Vm {
            prog,
            regs: [0; 16],
            flags: Flags::default(),
            mem: vec![0; opts.memory],
            depth: 0,
            steps: 0,
            limit: opts.step_limit,
            trace: None,
        }
    }

    /// Prints every executed instruction to `out`.
    pub fn with_trace(mut self, out: &'p mut dyn Write) -> Self {
        self.trace = Some(out);
        self
    }

    fn addr(&self, a: u64) -> Result<usize, Trap> {
        match a.checked_add(8) {
            Some(end) if end <= self.mem.len() as u64 => Ok(a as usize),
            _ => Err(Trap::OutOfBounds),
        }
    }

    fn load(&self, a: u64) -> Result<u64, Trap> {
        let a = self.addr(a)?;
        Ok(u64::from_le_bytes(self.mem[a..a + 8].try_into().unwrap()))
    }

    fn store(&mut self, a: u64, v: u64) -> Result<(), Trap> {
        let a = self.addr(a)?;
        self.mem[a..a + 8].copy_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn push(&mut self, v: u64) -> Result<(), Trap> {
        let sp = self.regs[15].wrapping_sub(8);
        self.store(sp, v)?;
        self.regs[15] = sp;
        Ok(())
    }

    fn pop(&mut self) -> Result<u64, Trap> {
        let v = self.load(self.regs[15])?;
        self.regs[15] = self.regs[15].wrapping_add(8);
        Ok(v)
    }

    fn r(&self, r: Reg) -> u64 {
        self.regs[r.id() as usize]
    }

    fn set(&mut self, r: Reg, v: u64) {
        self.regs[r.id() as usize] = v;
    }

    /// Calls `name` with up to six argument slots; returns (r0, r1).
    pub fn run(&mut self, name: &str, args: &[u64]) -> Result<RunResult, Trap> {
        let entry = self
            .prog
            .image
            .function_index(name)
            .ok_or_else(|| Trap::Invalid(format!("unknown function '@{name}'")))?;
        if args.len() > ARG_REGS.len() {
            return Err(Trap::Invalid(format!(
                "{} argument slots given, at most {} supported",
                args.len(),
                ARG_REGS.len()
            )));
        }
        self.regs = [0; 16];
        for (r, &a) in ARG_REGS.iter().zip(args) {
            self.set(*r, a);
        }
        self.regs[15] = self.mem.len() as u64 & !15;
        self.depth = 1;
        self.steps = 0;
        self.push(SENTINEL)?;
        let (mut func, mut pc) = (entry, 0usize);
        loop {
            let Some(&inst) = self.prog.code[func].get(pc) else {
                return Err(Trap::Invalid(format!(
                    "fell off the end of '@{}'",
                    self.prog.image.functions[func].name
                )));
            };
            self.steps += 1;
            if self.steps > self.limit {
                return Err(Trap::StepLimit);
            }
            if let Some(t) = self.trace.as_mut() {
                let _ = writeln!(
                    t,
                    "{}+{pc:03}: {}",
                    self.prog.image.functions[func].name,
                    format_inst(&inst)
                );
            }
            pc += 1;
            match inst {
                Inst::Nop => {}
                Inst::Alu { op, dst, src } => {
                    let (a, b) = (self.r(dst), self.r(src));
                    let v = match op {
                        AluOp::Add | AluOp::Adc => {
                            let (v, f) = add_flags(a, b, op == AluOp::Adc && self.flags.cf);
                            self.flags = f;
                            v
                        }
                        AluOp::Sub => {
                            let (v, f) = sub_flags(a, b);
                            self.flags = f;
                            v
                        }
                        AluOp::Mul => a.wrapping_mul(b),
                        AluOp::And => a & b,
                        AluOp::Or => a | b,
                        AluOp::Xor => a ^ b,
                        AluOp::Shl => a << (b & 63),
                        AluOp::Shr => a >> (b & 63),
                    };
                    self.set(dst, v);
                }
                Inst::DivMod { divisor } => {
                    let d = self.r(divisor);
                    if d == 0 {
                        return Err(Trap::DivByZero);
                    }
                    let n = self.regs[0];
                    self.regs[0] = n / d;
                    self.regs[1] = n % d;
                }
                Inst::Mov { dst, src } => self.set(dst, self.r(src)),
                Inst::Movi { dst, imm } => self.set(dst, imm as i64 as u64),
                Inst::Movih { dst, imm } => {
                    let lo = self.r(dst) & 0xffff_ffff;
                    self.set(dst, lo | ((imm as u32 as u64) << 32));
                }
                Inst::Addi { dst, imm } => self.set(dst, self.r(dst).wrapping_add(imm as i64 as u64)),
                Inst::Cmpi { lhs, imm } => self.flags = sub_flags(self.r(lhs), imm as i64 as u64).1,
                Inst::Cmp { lhs, rhs } => self.flags = sub_flags(self.r(lhs), self.r(rhs)).1,
                Inst::Ld { dst, mem } => {
                    let v = self.load(self.effective(&mem))?;
                    self.set(dst, v);
                }
                Inst::St { src, mem } => self.store(self.effective(&mem), self.r(src))?,
                Inst::Setcc { dst, cond } => self.set(dst, self.flags.holds(cond) as u64),
                Inst::Jmp { off } => pc = (pc as i64 + off as i64) as usize,
                Inst::Bcc { cond, off } => {
                    if self.flags.holds(cond) {
                        pc = (pc as i64 + off as i64) as usize;
                    }
                }
                Inst::Call { func: callee } => {
                    if self.depth >= MAX_CALL_DEPTH {
                        return Err(Trap::CallDepth);
                    }
                    self.push(((func as u64) << 32) | pc as u64)?;
                    self.depth += 1;
                    func = callee as usize;
                    pc = 0;
                }
                Inst::Ret => {
                    let ra = self.pop()?;
                    if ra == SENTINEL {
                        return Ok(RunResult {
                            lo: self.regs[0],
                            hi: self.regs[1],
                            steps: self.steps,
                        });
                    }
                    self.depth -= 1;
                    func = (ra >> 32) as usize;
                    pc = ra as u32 as usize;
                    if func >= self.prog.code.len() {
                        return Err(Trap::Invalid("corrupt return address".into()));
                    }
                }
                Inst::Push { src } => self.push(self.r(src))?,
                Inst::Pop { dst } => {
                    let v = self.pop()?;
                    self.set(dst, v);
                }
            }
        }
    }

    fn effective(&self, m: &crate::visa::Mem) -> u64 {
        let idx = m
            .index
            .map_or(0, |(r, s)| self.r(r).wrapping_mul(s as u64));
        self.r(m.base)
            .wrapping_add(idx)
            .wrapping_add(m.disp as i64 as u64)
    }
}

/// Runs `name` on a fresh VM with default options.
pub fn run(prog: &Program, name: &str, args: &[u64]) -> Result<RunResult, Trap> {
    Vm::new(prog, RunOptions::default()).run(name, args)
}

#[cfg(test)]
mod tests;
