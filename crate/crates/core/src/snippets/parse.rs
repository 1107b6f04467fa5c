//! Text format of snippet definitions.
//!
//! ```text
//! snippet udiv64(a: gp, b: gp) -> (q) {
//!   fix r0 = a; fix-out r1
//!   q:r0 = DIVMOD b
//! }
//! ```
//!
//! Statements are separated by newlines or `;`, `#` starts a comment.

use std::collections::HashMap;

use thiserror::Error;

use crate::visa::{AluOp, Cond, Reg};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct SnippetError {
    pub line: u32,
    pub msg: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Gp,
    /// A constant known when the snippet is invoked, referenced as `$name`.
    Imm,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    /// The snippet may take over the input register on its last use.
    pub kill: bool,
}

/// Register operand of a template instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TSrc {
    /// Template register.
    T(usize),
    /// A register of the fixed prelude.
    Phys(Reg),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Def {
    pub t: usize,
    /// The definition must land in this register.
    pub fixed: Option<Reg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Imm {
    Lit(i32),
    /// Index of an immediate parameter.
    Param(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TInst {
    /// `dst = OP tie(lhs), rhs`
    Alu { op: AluOp, dst: Def, lhs: TSrc, rhs: TSrc },
    Mov { dst: Def, src: TSrc },
    Movi { dst: Def, imm: Imm },
    Ld { dst: Def, addr: TSrc, disp: i32 },
    St { addr: TSrc, disp: i32, src: TSrc },
    Cmp { lhs: TSrc, rhs: TSrc },
    /// Reads r0, writes r0 and r1; `dst` names one of them.
    DivMod { dst: Def, divisor: TSrc },
    Jmp(usize),
    Bcc(Cond, usize),
    Label(usize),
}

impl TInst {
    pub fn def(&self) -> Option<Def> {
        match *self {
            TInst::Alu { dst, .. }
            | TInst::Mov { dst, .. }
            | TInst::Movi { dst, .. }
            | TInst::Ld { dst, .. }
            | TInst::DivMod { dst, .. } => Some(dst),
            _ => None,
        }
    }

    pub fn srcs(&self) -> Vec<TSrc> {
        match *self {
            TInst::Alu { lhs, rhs, .. } => vec![lhs, rhs],
            TInst::Mov { src, .. } => vec![src],
            TInst::Ld { addr, .. } => vec![addr],
            TInst::St { addr, src, .. } => vec![addr, src],
            TInst::Cmp { lhs, rhs } => vec![lhs, rhs],
            TInst::DivMod { divisor, .. } => vec![divisor],
            _ => vec![],
        }
    }
}

/// `fix rK = input` or `fix-out rK`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedDemand {
    pub reg: Reg,
    pub input: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnippetDef {
    pub name: String,
    pub params: Vec<Param>,
    /// Template register names; parameters come first.
    pub tregs: Vec<String>,
    pub outputs: Vec<usize>,
    pub fixed: Vec<FixedDemand>,
    pub body: Vec<TInst>,
    pub labels: Vec<String>,
}

impl SnippetDef {
    pub fn is_multi_block(&self) -> bool {
        !self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(char),
    Arrow,
    Newline,
}

fn lex(text: &str) -> Result<Vec<(Tok, u32)>, SnippetError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln as u32 + 1;
        let line = line.split('#').next().unwrap_or("");
        let mut chars = line.char_indices().peekable();
        while let Some(&(i, c)) = chars.peek() {
            if c.is_whitespace() {
                chars.next();
            } else if c.is_ascii_alphabetic() || c == '_' {
                let mut end = i;
                while let Some(&(j, d)) = chars.peek() {
                    // `-` continues a word only inside `fix-out`.
                    let dash = d == '-' && line[i..j].eq_ignore_ascii_case("fix");
                    if d.is_ascii_alphanumeric() || d == '_' || dash {
                        end = j + d.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push((Tok::Ident(line[i..end].to_string()), line_no));
            } else if c.is_ascii_digit() {
                let mut end = i;
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_ascii_alphanumeric() {
                        end = j + 1;
                        chars.next();
                    } else {
                        break;
                    }
                }
                let s = &line[i..end];
                let v = if let Some(h) = s.strip_prefix("0x") {
                    i64::from_str_radix(h, 16)
                } else {
                    s.parse()
                };
                let v = v.map_err(|_| SnippetError {
                    line: line_no,
                    msg: format!("bad number `{s}`"),
                })?;
                out.push((Tok::Int(v), line_no));
            } else if c == '-' && line[i..].starts_with("->") {
                chars.next();
                chars.next();
                out.push((Tok::Arrow, line_no));
            } else if "(){}[],:=;+-$".contains(c) {
                chars.next();
                out.push((Tok::Punct(c), line_no));
            } else {
                return Err(SnippetError {
                    line: line_no,
                    msg: format!("unexpected character `{c}`"),
                });
            }
        }
        out.push((Tok::Newline, line_no));
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, u32)>,
    pos: usize,
}

fn phys_reg(s: &str) -> Option<Reg> {
    let n: u8 = s.strip_prefix('r')?.parse().ok()?;
    (n < 14).then(|| Reg::new(n))
}

fn alu_op(s: &str) -> Option<AluOp> {
    AluOp::ALL
        .into_iter()
        .find(|op| op.name().eq_ignore_ascii_case(s))
}

/// Per-snippet name resolution.
struct Scope {
    tregs: Vec<String>,
    defined: Vec<bool>,
    index: HashMap<String, usize>,
    params: Vec<Param>,
    labels: Vec<String>,
    label_bound: Vec<bool>,
    fixed: Vec<FixedDemand>,
}

impl Parser {
    fn line(&self) -> u32 {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or(0, |t| t.1)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, SnippetError> {
        Err(SnippetError {
            line: self.line(),
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Some(Tok::Newline) | Some(Tok::Punct(';'))) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, p: char) -> bool {
        if self.peek() == Some(&Tok::Punct(p)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: char) -> Result<(), SnippetError> {
        if self.eat(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`"))
        }
    }

    fn ident(&mut self) -> Result<String, SnippetError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected a name"),
        }
    }

    fn int(&mut self) -> Result<i64, SnippetError> {
        let neg = self.eat('-');
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(if neg { -v } else { v })
            }
            _ => self.err("expected a number"),
        }
    }

    fn snippet(&mut self) -> Result<SnippetDef, SnippetError> {
        let name = self.ident()?;
        self.expect('(')?;
        let mut params = Vec::new();
        while !self.eat(')') {
            if !params.is_empty() {
                self.expect(',')?;
            }
            let pname = self.ident()?;
            let mut kind = ParamKind::Gp;
            let mut kill = false;
            if self.eat(':') {
                kind = match self.ident()?.as_str() {
                    "gp" => ParamKind::Gp,
                    "imm" => ParamKind::Imm,
                    b => return self.err(format!("unknown bank `{b}`")),
                };
            }
            if self.peek() == Some(&Tok::Ident("kill".into())) {
                self.pos += 1;
                kill = true;
            }
            if params.iter().any(|p: &Param| p.name == pname) {
                return self.err(format!("duplicate parameter `{pname}`"));
            }
            params.push(Param {
                name: pname,
                kind,
                kill,
            });
        }
        if self.peek() != Some(&Tok::Arrow) {
            return self.err("expected `->`");
        }
        self.pos += 1;
        self.expect('(')?;
        let mut out_names = Vec::new();
        while !self.eat(')') {
            if !out_names.is_empty() {
                self.expect(',')?;
            }
            out_names.push(self.ident()?);
        }
        self.skip_newlines();
        self.expect('{')?;
        let mut sc = Scope {
            tregs: params.iter().map(|p| p.name.clone()).collect(),
            defined: vec![true; params.len()],
            index: params
                .iter()
                .enumerate()
                .map(|(i, p)| (p.name.clone(), i))
                .collect(),
            params,
            labels: Vec::new(),
            label_bound: Vec::new(),
            fixed: Vec::new(),
        };
        let mut body = Vec::new();
        loop {
            self.skip_newlines();
            if self.eat('}') {
                break;
            }
            if self.peek().is_none() {
                return self.err(format!("unterminated snippet `{name}`"));
            }
            if let Some(i) = self.statement(&mut sc)? {
                body.push(i);
            }
            if !matches!(
                self.peek(),
                Some(Tok::Newline) | Some(Tok::Punct(';')) | Some(Tok::Punct('}'))
            ) {
                return self.err("expected end of statement");
            }
        }
        if let Some(i) = sc.label_bound.iter().position(|b| !b) {
            return self.err(format!("label `{}` is never placed", sc.labels[i]));
        }
        let mut outputs = Vec::new();
        for o in out_names {
            match sc.index.get(&o) {
                Some(&t) if sc.defined[t] && t >= sc.params.len() => outputs.push(t),
                Some(&t) if t < sc.params.len() => {
                    return self.err(format!("output `{o}` must be defined in the body"))
                }
                _ => return self.err(format!("output `{o}` is never defined")),
            }
        }
        let uses_divmod = body.iter().any(|i| matches!(i, TInst::DivMod { .. }));
        if uses_divmod {
            let has = |r: u8| sc.fixed.iter().any(|f| f.reg == Reg::new(r));
            if !sc.fixed.iter().any(|f| f.reg == Reg::R0 && f.input.is_some()) || !has(1) {
                return self.err("DIVMOD needs `fix r0 = <input>` and r1 in the fixed prelude");
            }
        }
        Ok(SnippetDef {
            name,
            params: sc.params,
            tregs: sc.tregs,
            outputs,
            fixed: sc.fixed,
            body,
            labels: sc.labels,
        })
    }

    fn label(&mut self, sc: &mut Scope, name: &str) -> usize {
        if let Some(i) = sc.labels.iter().position(|l| l == name) {
            return i;
        }
        sc.labels.push(name.to_string());
        sc.label_bound.push(false);
        sc.labels.len() - 1
    }

    fn src(&mut self, sc: &Scope) -> Result<TSrc, SnippetError> {
        let n = self.ident()?;
        if let Some(&t) = sc.index.get(&n) {
            if !sc.defined[t] {
                return self.err(format!("`{n}` is used before it is defined"));
            }
            if t < sc.params.len() && sc.params[t].kind == ParamKind::Imm {
                return self.err(format!("immediate `{n}` must be referenced as `${n}`"));
            }
            return Ok(TSrc::T(t));
        }
        if let Some(r) = phys_reg(&n) {
            if !sc.fixed.iter().any(|f| f.reg == r) {
                return self.err(format!("{r} is not in the fixed prelude"));
            }
            return Ok(TSrc::Phys(r));
        }
        self.err(format!("`{n}` is used before it is defined"))
    }

    fn tied(&mut self, sc: &Scope) -> Result<TSrc, SnippetError> {
        if self.peek() != Some(&Tok::Ident("tie".into())) {
            return self.err("the first ALU operand must be `tie(<reg>)`");
        }
        self.pos += 1;
        self.expect('(')?;
        let s = self.src(sc)?;
        if !matches!(s, TSrc::T(_)) {
            return self.err("tie must name a template register");
        }
        self.expect(')')?;
        Ok(s)
    }

    fn imm32(&self, v: i64) -> Result<i32, SnippetError> {
        i32::try_from(v).or_else(|_| self.err(format!("immediate {v} does not fit 32 bits")))
    }

    fn mem(&mut self, sc: &Scope) -> Result<(TSrc, i32), SnippetError> {
        self.expect('[')?;
        let base = self.src(sc)?;
        let mut disp = 0;
        if self.eat('+') {
            disp = self.int()?;
        } else if self.peek() == Some(&Tok::Punct('-')) {
            disp = self.int()?;
        }
        self.expect(']')?;
        Ok((base, self.imm32(disp)?))
    }

    fn imm(&mut self, sc: &Scope) -> Result<Imm, SnippetError> {
        if self.eat('$') {
            let n = self.ident()?;
            return match sc.params.iter().position(|p| p.name == n) {
                Some(i) if sc.params[i].kind == ParamKind::Imm => Ok(Imm::Param(i)),
                _ => self.err(format!("`${n}` is not an immediate parameter")),
            };
        }
        let v = self.int()?;
        Ok(Imm::Lit(self.imm32(v)?))
    }

    fn statement(&mut self, sc: &mut Scope) -> Result<Option<TInst>, SnippetError> {
        let first = self.ident()?;
        match first.as_str() {
            "fix" => {
                let r = self.ident()?;
                let reg = phys_reg(&r).map_or_else(|| self.err(format!("`{r}` is not a register")), Ok)?;
                self.expect('=')?;
                let n = self.ident()?;
                let input = match sc.index.get(&n) {
                    Some(&t) if t < sc.params.len() && sc.params[t].kind == ParamKind::Gp => t,
                    _ => return self.err(format!("`{n}` is not a register input")),
                };
                self.add_fixed(sc, reg, Some(input))?;
                return Ok(None);
            }
            "fix-out" => {
                let r = self.ident()?;
                let reg = phys_reg(&r).map_or_else(|| self.err(format!("`{r}` is not a register")), Ok)?;
                self.add_fixed(sc, reg, None)?;
                return Ok(None);
            }
            _ => {}
        }
        // Label or definition.
        if self.eat(':') {
            if matches!(self.peek(), Some(Tok::Ident(_))) {
                let r = self.ident()?;
                let reg = phys_reg(&r).map_or_else(|| self.err(format!("`{r}` is not a register")), Ok)?;
                if !sc.fixed.iter().any(|f| f.reg == reg) {
                    return self.err(format!("{reg} is not in the fixed prelude"));
                }
                self.expect('=')?;
                return self.def_inst(sc, first, Some(reg)).map(Some);
            }
            let l = self.label(sc, &first);
            if sc.label_bound[l] {
                return self.err(format!("label `{first}` placed twice"));
            }
            sc.label_bound[l] = true;
            return Ok(Some(TInst::Label(l)));
        }
        if self.eat('=') {
            return self.def_inst(sc, first, None).map(Some);
        }
        let op = first.to_ascii_uppercase();
        let inst = match op.as_str() {
            "ST" => {
                let (addr, disp) = self.mem(sc)?;
                self.expect(',')?;
                let src = self.src(sc)?;
                TInst::St { addr, disp, src }
            }
            "CMP" => {
                let lhs = self.src(sc)?;
                self.expect(',')?;
                let rhs = self.src(sc)?;
                TInst::Cmp { lhs, rhs }
            }
            "JMP" => {
                let n = self.ident()?;
                TInst::Jmp(self.label(sc, &n))
            }
            _ => match op.strip_prefix('B').and_then(|c| {
                Cond::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(c))
            }) {
                Some(c) => {
                    let n = self.ident()?;
                    TInst::Bcc(c, self.label(sc, &n))
                }
                None => return self.err(format!("unknown instruction `{first}`")),
            },
        };
        Ok(Some(inst))
    }

    fn add_fixed(&self, sc: &mut Scope, reg: Reg, input: Option<usize>) -> Result<(), SnippetError> {
        if sc.fixed.iter().any(|f| f.reg == reg) {
            return self.err(format!("{reg} fixed twice"));
        }
        sc.fixed.push(FixedDemand { reg, input });
        Ok(())
    }

    fn def_inst(&mut self, sc: &mut Scope, name: String, fixed: Option<Reg>) -> Result<TInst, SnippetError> {
        if phys_reg(&name).is_some() {
            return self.err("a definition must name a template register");
        }
        let op = self.ident()?.to_ascii_uppercase();
        // Operands are parsed before the definition becomes visible.
        let t = match sc.index.get(&name) {
            Some(&t) if t < sc.params.len() => {
                return self.err(format!("input `{name}` cannot be redefined"))
            }
            Some(&t) => t,
            None => {
                sc.tregs.push(name.clone());
                sc.defined.push(false);
                sc.index.insert(name.clone(), sc.tregs.len() - 1);
                sc.tregs.len() - 1
            }
        };
        let dst = Def { t, fixed };
        let inst = match op.as_str() {
            "MOV" => TInst::Mov {
                dst,
                src: self.src(sc)?,
            },
            "MOVI" => TInst::Movi {
                dst,
                imm: self.imm(sc)?,
            },
            "LD" => {
                let (addr, disp) = self.mem(sc)?;
                TInst::Ld { dst, addr, disp }
            }
            "DIVMOD" => {
                if !matches!(fixed, Some(r) if r == Reg::R0 || r == Reg::R1) {
                    return self.err("DIVMOD defines r0 or r1, written `q:r0 = DIVMOD d`");
                }
                TInst::DivMod {
                    dst,
                    divisor: self.src(sc)?,
                }
            }
            _ => match alu_op(&op) {
                Some(aop) => {
                    let lhs = self.tied(sc)?;
                    self.expect(',')?;
                    let rhs = self.src(sc)?;
                    TInst::Alu {
                        op: aop,
                        dst,
                        lhs,
                        rhs,
                    }
                }
                None => return self.err(format!("unknown instruction `{op}`")),
            },
        };
        sc.defined[t] = true;
        Ok(inst)
    }
}

/// Parses a snippet file.
pub fn parse_snippets(text: &str) -> Result<Vec<SnippetDef>, SnippetError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let mut defs: Vec<SnippetDef> = Vec::new();
    loop {
        p.skip_newlines();
        match p.peek() {
            None => break,
            Some(Tok::Ident(s)) if s == "snippet" => {
                p.pos += 1;
                let d = p.snippet()?;
                if defs.iter().any(|o| o.name == d.name) {
                    return p.err(format!("duplicate snippet `{}`", d.name));
                }
                defs.push(d);
            }
            _ => return p.err("expected `snippet`"),
        }
    }
    Ok(defs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_instruction_snippet() {
        let d = parse_snippets("snippet add64(a:gp kill, b:gp kill)->(r) { r = ADD tie(a), b }").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].body.len(), 1);
        assert!(d[0].params.iter().all(|p| p.kill));
        assert_eq!(d[0].outputs, vec![2]);
    }

    #[test]
    fn fixed_demands() {
        let d = parse_snippets("snippet udiv64(a,b)->(q) { fix r0=a; fix-out r1; q:r0 = DIVMOD b }").unwrap();
        let regs: Vec<Reg> = d[0].fixed.iter().map(|f| f.reg).collect();
        assert_eq!(regs, vec![Reg::R0, Reg::R1]);
        assert_eq!(d[0].fixed[0].input, Some(0));
        assert!(matches!(d[0].body[0], TInst::DivMod { dst: Def { fixed: Some(r), .. }, .. } if r == Reg::R0));
    }

    fn err(text: &str) -> String {
        parse_snippets(text).unwrap_err().msg
    }

    #[test]
    fn use_before_definition() {
        assert!(err("snippet f(a)->(r) { r = ADD tie(a), t }").contains("before it is defined"));
        assert!(err("snippet f(a)->(r) { r = ADD tie(r), a }").contains("before it is defined"));
    }

    #[test]
    fn discipline_violations() {
        assert!(err("snippet f(a)->(r) { r = ADD a, a }").contains("tie"));
        assert!(err("snippet f(a)->(r) { r = MOV a }\nsnippet f(a)->(r) { r = MOV a }").contains("duplicate"));
        assert!(err("snippet f(a)->(r) { a = MOV a; r = MOV a }").contains("redefined"));
        assert!(err("snippet f(a)->(r) { t = MOV a }").contains("never defined"));
        assert!(err("snippet f(a)->(q) { q:r0 = DIVMOD a }").contains("prelude"));
        assert!(err("snippet f(a)->(r) { r = MOV r3 }").contains("prelude"));
        assert!(err("snippet f(a, n: imm)->(r) { r = ADD tie(a), n }").contains("$n"));
        assert!(err("snippet f(a)->(r) { r = MOV a; JMP x }").contains("never placed"));
        assert_eq!(parse_snippets("snippet f(a)->(r) {\n r = FOO a\n}").unwrap_err().line, 2);
    }

    #[test]
    fn multi_block_with_labels() {
        let d = parse_snippets(
            "snippet umax(a, b) -> (r) {
               r = MOV a   # keep a
               CMP a, b
               BUGE done
               r = MOV b
             done:
             }",
        )
        .unwrap();
        assert!(d[0].is_multi_block());
        assert_eq!(d[0].body.len(), 5);
        assert_eq!(d[0].body[2], TInst::Bcc(Cond::Uge, 0));
    }

    #[test]
    fn memory_operands() {
        let d = parse_snippets("snippet f(p, v) -> (r) { ST [p - 8], v; r = LD [p + 0x10] }").unwrap();
        assert_eq!(d[0].body[0], TInst::St { addr: TSrc::T(0), disp: -8, src: TSrc::T(1) });
        assert!(matches!(d[0].body[1], TInst::Ld { disp: 16, .. }));
    }
}
