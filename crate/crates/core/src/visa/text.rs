//! Assembly text: one instruction per line, `000: add r2, r3`.

use super::{AluOp, Cond, DecodeError, Inst, Mem, Reg, WORD};
use std::fmt::Write as _;
use thiserror::Error;

fn fmt_mem(m: &Mem) -> String {
    let mut s = format!("[{}", m.base);
    if let Some((r, scale)) = m.index {
        let _ = write!(s, " + {r}*{scale}");
    }
    match m.disp {
        0 => {}
        d if d < 0 => {
            let _ = write!(s, " - {}", (d as i64).unsigned_abs());
        }
        d => {
            let _ = write!(s, " + {d}");
        }
    }
    s.push(']');
    s
}

pub fn format_inst(inst: &Inst) -> String {
    match inst {
        Inst::Nop => "nop".into(),
        Inst::Alu { op, dst, src } => format!("{} {dst}, {src}", op.name()),
        Inst::DivMod { divisor } => format!("divmod {divisor}"),
        Inst::Mov { dst, src } => format!("mov {dst}, {src}"),
        Inst::Movi { dst, imm } => format!("movi {dst}, {imm}"),
        Inst::Movih { dst, imm } => format!("movih {dst}, {imm}"),
        Inst::Addi { dst, imm } => format!("addi {dst}, {imm}"),
        Inst::Cmpi { lhs, imm } => format!("cmpi {lhs}, {imm}"),
        Inst::Ld { dst, mem } => format!("ld {dst}, {}", fmt_mem(mem)),
        Inst::St { src, mem } => format!("st {}, {src}", fmt_mem(mem)),
        Inst::Cmp { lhs, rhs } => format!("cmp {lhs}, {rhs}"),
        Inst::Setcc { dst, cond } => format!("set{} {dst}", cond.name()),
        Inst::Jmp { off } => format!("jmp {off}"),
        Inst::Bcc { cond, off } => format!("b{} {off}", cond.name()),
        Inst::Call { func } => format!("call {func}"),
        Inst::Ret => "ret".into(),
        Inst::Push { src } => format!("push {src}"),
        Inst::Pop { dst } => format!("pop {dst}"),
    }
}

/// Listing of a code blob. Branches are annotated with their target word.
pub fn disassemble(code: &[u8]) -> Result<String, DecodeError> {
    let mut out = String::new();
    for (i, chunk) in code.chunks(WORD).enumerate() {
        let inst = Inst::decode(chunk)?;
        let _ = write!(out, "{i:03}: {}", format_inst(&inst));
        if let Inst::Jmp { off } | Inst::Bcc { off, .. } = inst {
            let _ = write!(out, "  ; -> {:03}", i as i64 + 1 + off as i64);
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("cannot parse instruction '{text}': {msg}")]
pub struct ParseInstError {
    pub text: String,
    pub msg: String,
}

pub(crate) fn parse_reg(s: &str) -> Option<Reg> {
    match s {
        "fp" => Some(Reg::FP),
        "sp" => Some(Reg::SP),
        _ => {
            let n: u8 = s.strip_prefix('r')?.parse().ok()?;
            (n < 16).then(|| Reg::new(n))
        }
    }
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = match body.strip_prefix("0x") {
        Some(h) => i64::from_str_radix(h, 16).ok()?,
        None => body.parse().ok()?,
    };
    Some(if neg { -v } else { v })
}

fn parse_imm(s: &str) -> Option<i32> {
    i32::try_from(parse_int(s)?).ok()
}

fn parse_mem(s: &str) -> Option<Mem> {
    let inner = s.strip_prefix('[')?.strip_suffix(']')?;
    // Normalize "a - 16" into "a + -16" and split on '+'.
    let norm = inner.replace(" - ", " + -");
    let mut terms = norm.split('+').map(str::trim);
    let base = parse_reg(terms.next()?)?;
    let mut m = Mem::base_disp(base, 0);
    for t in terms {
        if let Some((r, sc)) = t.split_once('*') {
            if m.index.is_some() {
                return None;
            }
            m.index = Some((parse_reg(r.trim())?, sc.trim().parse().ok()?));
        } else {
            m.disp = m.disp.checked_add(parse_imm(t)?)?;
        }
    }
    Some(m)
}

/// Parses the text produced by [`format_inst`]. Comments after `;` and a
/// leading `NNN:` word index are ignored.
pub fn parse_inst(line: &str) -> Result<Inst, ParseInstError> {
    let err = |msg: &str| ParseInstError {
        text: line.trim().to_string(),
        msg: msg.to_string(),
    };
    let mut text = line.split(';').next().unwrap_or("").trim();
    if let Some((pre, rest)) = text.split_once(':') {
        if pre.chars().all(|c| c.is_ascii_digit()) {
            text = rest.trim();
        }
    }
    let (mnem, rest) = text.split_once(' ').unwrap_or((text, ""));
    // Memory operands never contain commas.
    let ops: Vec<&str> = if rest.trim().is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let want = |n: usize| {
        if ops.len() == n {
            Ok(())
        } else {
            Err(err(&format!("expected {n} operands")))
        }
    };
    let reg = |i: usize| parse_reg(ops[i]).ok_or_else(|| err("bad register"));
    let imm = |i: usize| parse_imm(ops[i]).ok_or_else(|| err("bad immediate"));
    let mem = |i: usize| parse_mem(ops[i]).ok_or_else(|| err("bad memory operand"));
    if let Some(op) = AluOp::ALL.into_iter().find(|a| a.name() == mnem) {
        want(2)?;
        return Ok(Inst::Alu { op, dst: reg(0)?, src: reg(1)? });
    }
    if let Some(c) = mnem.strip_prefix("set").and_then(|c| Cond::ALL.into_iter().find(|x| x.name() == c)) {
        want(1)?;
        return Ok(Inst::Setcc { dst: reg(0)?, cond: c });
    }
    if let Some(c) = mnem.strip_prefix('b').and_then(|c| Cond::ALL.into_iter().find(|x| x.name() == c)) {
        want(1)?;
        return Ok(Inst::Bcc { cond: c, off: imm(0)? });
    }
    let inst = match mnem {
        "nop" => {
            want(0)?;
            Inst::Nop
        }
        "divmod" => {
            want(1)?;
            Inst::DivMod { divisor: reg(0)? }
        }
        "mov" => {
            want(2)?;
            Inst::Mov { dst: reg(0)?, src: reg(1)? }
        }
        "movi" => {
            want(2)?;
            Inst::Movi { dst: reg(0)?, imm: imm(1)? }
        }
        "movih" => {
            want(2)?;
            Inst::Movih { dst: reg(0)?, imm: imm(1)? }
        }
        "addi" => {
            want(2)?;
            Inst::Addi { dst: reg(0)?, imm: imm(1)? }
        }
        "cmpi" => {
            want(2)?;
            Inst::Cmpi { lhs: reg(0)?, imm: imm(1)? }
        }
        "ld" => {
            want(2)?;
            Inst::Ld { dst: reg(0)?, mem: mem(1)? }
        }
        "st" => {
            want(2)?;
            Inst::St { src: reg(1)?, mem: mem(0)? }
        }
        "cmp" => {
            want(2)?;
            Inst::Cmp { lhs: reg(0)?, rhs: reg(1)? }
        }
        "jmp" => {
            want(1)?;
            Inst::Jmp { off: imm(0)? }
        }
        "call" => {
            want(1)?;
            let f = parse_int(ops[0])
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| err("bad function index"))?;
            Inst::Call { func: f }
        }
        "ret" => {
            want(0)?;
            Inst::Ret
        }
        "push" => {
            want(1)?;
            Inst::Push { src: reg(0)? }
        }
        "pop" => {
            want(1)?;
            Inst::Pop { dst: reg(0)? }
        }
        _ => return Err(err("unknown mnemonic")),
    };
    Ok(inst)
}
