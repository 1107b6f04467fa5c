//! The virtual target ISA.
//!
//! Sixteen 64-bit registers, two-address ALU operations, flags and
//! `base + index*scale + disp` memory operands. Every instruction is one
//! 8-byte little-endian word:
//!
//! | byte | field |
//! |------|-------|
//! | 0 | opcode |
//! | 1 | dst / cond |
//! | 2 | src1 / base |
//! | 3 | src2 / index byte (bit 7 has_index, bits 5..6 log2 scale, bits 0..3 reg) |
//! | 4..7 | imm32, signed |

mod buffer;
mod frame;
mod image;
mod text;

pub use buffer::{CodeBuffer, CodeError, Label, PatchPoint, PatchPurpose};
pub use frame::{emit_epilogue, emit_prologue, finalize_frame, FrameLayout, PrologueSlots, SAVE_SLOTS};
pub use image::{Image, ImageError, ImageFunction};
pub use text::{disassemble, format_inst, parse_inst, ParseInstError};

use std::fmt;
use thiserror::Error;

pub const WORD: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(u8);

impl Reg {
    pub const R0: Reg = Reg(0);
    pub const R1: Reg = Reg(1);
    pub const FP: Reg = Reg(14);
    pub const SP: Reg = Reg(15);
    pub const COUNT: usize = 16;

    pub const fn new(id: u8) -> Reg {
        assert!(id < 16);
        Reg(id)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn is_callee_saved(self) -> bool {
        (8..=13).contains(&self.0)
    }

    pub fn is_allocatable(self) -> bool {
        self.0 <= 13
    }

    pub fn all() -> impl Iterator<Item = Reg> {
        (0..16).map(Reg)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            14 => f.write_str("fp"),
            15 => f.write_str("sp"),
            n => write!(f, "r{n}"),
        }
    }
}

/// Argument registers in order; i128 arguments take two consecutive ones.
pub const ARG_REGS: [Reg; 6] = [Reg(0), Reg(1), Reg(2), Reg(3), Reg(4), Reg(5)];
pub const RET_REGS: [Reg; 2] = [Reg(0), Reg(1)];
pub const CALLEE_SAVED: [Reg; 6] = [Reg(8), Reg(9), Reg(10), Reg(11), Reg(12), Reg(13)];
pub const CALLER_SAVED: [Reg; 8] = [Reg(0), Reg(1), Reg(2), Reg(3), Reg(4), Reg(5), Reg(6), Reg(7)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq = 0,
    Ne = 1,
    Ult = 2,
    Slt = 3,
    Uge = 4,
    Sge = 5,
}

impl Cond {
    pub const ALL: [Cond; 6] = [Cond::Eq, Cond::Ne, Cond::Ult, Cond::Slt, Cond::Uge, Cond::Sge];

    pub fn from_code(c: u8) -> Option<Cond> {
        Cond::ALL.get(c as usize).copied()
    }

    pub fn invert(self) -> Cond {
        match self {
            Cond::Eq => Cond::Ne,
            Cond::Ne => Cond::Eq,
            Cond::Ult => Cond::Uge,
            Cond::Uge => Cond::Ult,
            Cond::Slt => Cond::Sge,
            Cond::Sge => Cond::Slt,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Cond::Eq => "eq",
            Cond::Ne => "ne",
            Cond::Ult => "ult",
            Cond::Slt => "slt",
            Cond::Uge => "uge",
            Cond::Sge => "sge",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Adc,
}

impl AluOp {
    pub const ALL: [AluOp; 9] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::Mul,
        AluOp::And,
        AluOp::Or,
        AluOp::Xor,
        AluOp::Shl,
        AluOp::Shr,
        AluOp::Adc,
    ];

    pub fn opcode(self) -> u8 {
        match self {
            AluOp::Add => 0x01,
            AluOp::Sub => 0x02,
            AluOp::Mul => 0x03,
            AluOp::And => 0x05,
            AluOp::Or => 0x06,
            AluOp::Xor => 0x07,
            AluOp::Shl => 0x08,
            AluOp::Shr => 0x09,
            AluOp::Adc => 0x0a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Mul => "mul",
            AluOp::And => "and",
            AluOp::Or => "or",
            AluOp::Xor => "xor",
            AluOp::Shl => "shl",
            AluOp::Shr => "shr",
            AluOp::Adc => "adc",
        }
    }

    pub fn sets_flags(self) -> bool {
        matches!(self, AluOp::Add | AluOp::Sub | AluOp::Adc)
    }
}

/// `[base + index*scale + disp]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Mem {
    pub base: Reg,
    pub index: Option<(Reg, u8)>,
    pub disp: i32,
}

impl Mem {
    pub fn base_disp(base: Reg, disp: i32) -> Mem {
        Mem {
            base,
            index: None,
            disp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Inst {
    Nop,
    /// `dst ← dst op src`.
    Alu { op: AluOp, dst: Reg, src: Reg },
    /// Unsigned: r0 ← r0 / divisor, r1 ← r0 % divisor.
    DivMod { divisor: Reg },
    Mov { dst: Reg, src: Reg },
    /// Sign-extended 32-bit immediate.
    Movi { dst: Reg, imm: i32 },
    /// Replaces the high 32 bits of `dst`.
    Movih { dst: Reg, imm: i32 },
    /// Leaves flags untouched.
    Addi { dst: Reg, imm: i32 },
    Cmpi { lhs: Reg, imm: i32 },
    Ld { dst: Reg, mem: Mem },
    St { src: Reg, mem: Mem },
    Cmp { lhs: Reg, rhs: Reg },
    Setcc { dst: Reg, cond: Cond },
    /// Offsets are in words from the following instruction.
    Jmp { off: i32 },
    Bcc { cond: Cond, off: i32 },
    Call { func: u32 },
    Ret,
    Push { src: Reg },
    Pop { dst: Reg },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("scale {0} is not 1, 2, 4 or 8")]
    BadScale(u8),
    #[error("call target {0} does not fit in 32 bits")]
    BadCallTarget(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("malformed operands for opcode {0:#04x}")]
    Malformed(u8),
    #[error("truncated instruction word")]
    Truncated,
}

fn index_byte(index: Option<(Reg, u8)>) -> Result<u8, EncodeError> {
    Ok(match index {
        None => 0,
        Some((r, scale)) => {
            let log = match scale {
                1 => 0,
                2 => 1,
                4 => 2,
                8 => 3,
                s => return Err(EncodeError::BadScale(s)),
            };
            0x80 | (log << 5) | r.0
        }
    })
}

impl Inst {
    pub fn encode(&self) -> Result<[u8; WORD], EncodeError> {
        let (op, b1, b2, b3, imm): (u8, u8, u8, u8, i32) = match *self {
            Inst::Nop => (0x00, 0, 0, 0, 0),
            Inst::Alu { op, dst, src } => (op.opcode(), dst.0, dst.0, src.0, 0),
            Inst::DivMod { divisor } => (0x04, 0, 0, divisor.0, 0),
            Inst::Mov { dst, src } => (0x10, dst.0, src.0, 0, 0),
            Inst::Movi { dst, imm } => (0x11, dst.0, 0, 0, imm),
            Inst::Movih { dst, imm } => (0x12, dst.0, 0, 0, imm),
            Inst::Addi { dst, imm } => (0x18, dst.0, dst.0, 0, imm),
            Inst::Cmpi { lhs, imm } => (0x19, 0, lhs.0, 0, imm),
            Inst::Ld { dst, mem } => (0x20, dst.0, mem.base.0, index_byte(mem.index)?, mem.disp),
            Inst::St { src, mem } => (0x21, src.0, mem.base.0, index_byte(mem.index)?, mem.disp),
            Inst::Cmp { lhs, rhs } => (0x28, 0, lhs.0, rhs.0, 0),
            Inst::Setcc { dst, cond } => (0x29, dst.0, cond as u8, 0, 0),
            Inst::Jmp { off } => (0x30, 0, 0, 0, off),
            Inst::Bcc { cond, off } => (0x31, cond as u8, 0, 0, off),
            Inst::Call { func } => {
                let imm = i32::try_from(func).map_err(|_| EncodeError::BadCallTarget(func))?;
                (0x38, 0, 0, 0, imm)
            }
            Inst::Ret => (0x39, 0, 0, 0, 0),
            Inst::Push { src } => (0x40, 0, src.0, 0, 0),
            Inst::Pop { dst } => (0x41, dst.0, 0, 0, 0),
        };
        let mut w = [0u8; WORD];
        w[0] = op;
        w[1] = b1;
        w[2] = b2;
        w[3] = b3;
        w[4..].copy_from_slice(&imm.to_le_bytes());
        Ok(w)
    }

    /// Decodes one word. Rejects anything `encode` would not produce.
    pub fn decode(bytes: &[u8]) -> Result<Inst, DecodeError> {
        let w: [u8; WORD] = bytes
            .get(..WORD)
            .ok_or(DecodeError::Truncated)?
            .try_into()
            .unwrap();
        let op = w[0];
        let imm = i32::from_le_bytes(w[4..].try_into().unwrap());
        let bad = DecodeError::Malformed(op);
        let reg = |b: u8| if b < 16 { Ok(Reg(b)) } else { Err(bad.clone()) };
        let mem = || -> Result<Mem, DecodeError> {
            let ib = w[3];
            let index = if ib & 0x80 != 0 {
                if ib & 0x10 != 0 {
                    return Err(bad.clone());
                }
                Some((Reg(ib & 0x0f), 1u8 << ((ib >> 5) & 3)))
            } else if ib != 0 {
                return Err(bad.clone());
            } else {
                None
            };
            Ok(Mem {
                base: reg(w[2])?,
                index,
                disp: imm,
            })
        };
        let inst = match op {
            0x00 => Inst::Nop,
            0x01..=0x03 | 0x05..=0x0a => {
                let alu = AluOp::ALL.into_iter().find(|a| a.opcode() == op).unwrap();
                Inst::Alu {
                    op: alu,
                    dst: reg(w[1])?,
                    src: reg(w[3])?,
                }
            }
            0x04 => Inst::DivMod { divisor: reg(w[3])? },
            0x10 => Inst::Mov {
                dst: reg(w[1])?,
                src: reg(w[2])?,
            },
            0x11 => Inst::Movi { dst: reg(w[1])?, imm },
            0x12 => Inst::Movih { dst: reg(w[1])?, imm },
            0x18 => Inst::Addi { dst: reg(w[1])?, imm },
            0x19 => Inst::Cmpi { lhs: reg(w[2])?, imm },
            0x20 => Inst::Ld {
                dst: reg(w[1])?,
                mem: mem()?,
            },
            0x21 => Inst::St {
                src: reg(w[1])?,
                mem: mem()?,
            },
            0x28 => Inst::Cmp {
                lhs: reg(w[2])?,
                rhs: reg(w[3])?,
            },
            0x29 => Inst::Setcc {
                dst: reg(w[1])?,
                cond: Cond::from_code(w[2]).ok_or(bad.clone())?,
            },
            0x30 => Inst::Jmp { off: imm },
            0x31 => Inst::Bcc {
                cond: Cond::from_code(w[1]).ok_or(bad.clone())?,
                off: imm,
            },
            0x38 => Inst::Call {
                func: u32::try_from(imm).map_err(|_| bad.clone())?,
            },
            0x39 => Inst::Ret,
            0x40 => Inst::Push { src: reg(w[2])? },
            0x41 => Inst::Pop { dst: reg(w[1])? },
            _ => return Err(DecodeError::UnknownOpcode(op)),
        };
        // Canonical form: re-encoding must give the same word.
        if inst.encode().map_err(|_| bad.clone())? != w {
            return Err(bad);
        }
        Ok(inst)
    }

    /// Registers whose values the instruction reads, excluding fp and sp.
    pub fn regs_read(&self) -> [Option<Reg>; 3] {
        let r = |x: Reg| x.is_allocatable().then_some(x);
        let mem = |m: &Mem| [r(m.base), m.index.and_then(|(i, _)| r(i))];
        match self {
            Inst::Alu { dst, src, .. } => [r(*dst), r(*src), None],
            Inst::DivMod { divisor } => [Some(Reg::R0), r(*divisor), None],
            Inst::Mov { src, .. } | Inst::Push { src } => [r(*src), None, None],
            Inst::Movih { dst, .. } | Inst::Addi { dst, .. } => [r(*dst), None, None],
            Inst::Cmpi { lhs, .. } => [r(*lhs), None, None],
            Inst::Cmp { lhs, rhs } => [r(*lhs), r(*rhs), None],
            Inst::Ld { mem: m, .. } => {
                let [a, b] = mem(m);
                [a, b, None]
            }
            Inst::St { src, mem: m } => {
                let [a, b] = mem(m);
                [r(*src), a, b]
            }
            _ => [None; 3],
        }
    }

    /// True if the instruction writes the flags.
    pub fn sets_flags(&self) -> bool {
        match self {
            Inst::Alu { op, .. } => op.sets_flags(),
            Inst::Cmp { .. } | Inst::Cmpi { .. } => true,
            _ => false,
        }
    }

    /// True if the instruction reads the flags.
    pub fn reads_flags(&self) -> bool {
        matches!(
            self,
            Inst::Alu { op: AluOp::Adc, .. } | Inst::Setcc { .. } | Inst::Bcc { .. }
        )
    }
}

/// Instructions that load `value` into `dst`: MOVI alone when the value is
/// a sign-extended 32-bit immediate, MOVI+MOVIH otherwise.
pub fn materialize(dst: Reg, value: u64) -> Vec<Inst> {
    let lo = value as u32 as i32;
    if lo as i64 as u64 == value {
        vec![Inst::Movi { dst, imm: lo }]
    } else {
        vec![
            Inst::Movi { dst, imm: lo },
            Inst::Movih {
                dst,
                imm: (value >> 32) as u32 as i32,
            },
        ]
    }
}
