//! Parser for the textual `.tir` format.

use std::collections::HashMap;

use thiserror::Error;

use super::{
    Block, BlockId, Const, FuncId, Function, Inst, Module, Opcode, Operand, Phi, StackVar, Type,
    ValueId, ValueInfo,
};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub msg: String,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Local(String),
    Global(String),
    Int(i128),
    Punct(&'static str),
    Eof,
}

#[derive(Clone, Copy, Debug, Default)]
struct Pos {
    line: u32,
    col: u32,
}

fn err<T>(pos: Pos, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line: pos.line,
        col: pos.col,
        msg: msg.into(),
    })
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == ';' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = match c {
            '%' | '@' => {
                i += 1;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                let name: String = chars[start + 1..i].iter().collect();
                if name.is_empty() {
                    return err(pos, format!("expected a name after '{c}'"));
                }
                if c == '%' {
                    Tok::Local(name)
                } else {
                    Tok::Global(name)
                }
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                i += 2;
                Tok::Punct("->")
            }
            '-' | '0'..='9' => {
                let neg = c == '-';
                if neg {
                    i += 1;
                }
                let digits_start = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                let raw: String = chars[digits_start..i].iter().collect();
                let parsed = if let Some(hex) = raw.strip_prefix("0x") {
                    u64::from_str_radix(hex, 16).map(|v| v as i128)
                } else {
                    raw.parse::<u64>().map(|v| v as i128)
                };
                match parsed {
                    Ok(v) => Tok::Int(if neg { -v } else { v }),
                    Err(_) => return err(pos, format!("bad integer literal '{raw}'")),
                }
            }
            '(' | ')' | '{' | '}' | '[' | ']' | ',' | ':' | '=' => {
                i += 1;
                Tok::Punct(match c {
                    '(' => "(",
                    ')' => ")",
                    '{' => "{",
                    '}' => "}",
                    '[' => "[",
                    ']' => "]",
                    ',' => ",",
                    ':' => ":",
                    _ => "=",
                })
            }
            c if is_ident_char(c) => {
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                Tok::Ident(chars[start..i].iter().collect())
            }
            other => return err(pos, format!("unexpected character '{other}'")),
        };
        col += (i - start) as u32;
        out.push((tok, pos));
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

// Unresolved syntax tree; names are resolved once every signature is known.

#[derive(Clone, Debug)]
enum RawOperand {
    Local(String, Pos),
    Int(i128),
    Wide(u64, u64),
}

struct RawInst {
    pos: Pos,
    result: Option<String>,
    op: Opcode,
    args: Vec<RawOperand>,
    targets: Vec<(String, Pos)>,
    callee: Option<(String, Pos)>,
}

struct RawPhi {
    result: String,
    ty: Type,
    incoming: Vec<(RawOperand, String, Pos)>,
}

struct RawBlock {
    label: String,
    pos: Pos,
    phis: Vec<RawPhi>,
    insts: Vec<RawInst>,
}

struct RawFunc {
    pos: Pos,
    name: String,
    params: Vec<(String, Type)>,
    ret: Option<Type>,
    stack_vars: Vec<StackVar>,
    blocks: Vec<RawBlock>,
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.at + 1).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.is_punct(p) {
            self.bump();
            Ok(())
        } else {
            err(self.pos(), format!("expected '{p}', found {}", describe(self.peek())))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            t => err(self.pos(), format!("expected '{kw}', found {}", describe(t))),
        }
    }

    fn ident(&mut self) -> Result<(String, Pos), ParseError> {
        match self.bump() {
            (Tok::Ident(s), p) => Ok((s, p)),
            (t, p) => err(p, format!("expected identifier, found {}", describe(&t))),
        }
    }

    fn int(&mut self) -> Result<i128, ParseError> {
        match self.bump() {
            (Tok::Int(v), _) => Ok(v),
            (t, p) => err(p, format!("expected integer, found {}", describe(&t))),
        }
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        let (name, pos) = self.ident()?;
        match name.as_str() {
            "i64" => Ok(Type::I64),
            "i128" => Ok(Type::I128),
            _ => err(pos, format!("unknown type '{name}'")),
        }
    }

    fn operand(&mut self) -> Result<RawOperand, ParseError> {
        match self.peek().clone() {
            Tok::Local(name) => {
                let (_, p) = self.bump();
                Ok(RawOperand::Local(name, p))
            }
            Tok::Int(v) => {
                self.bump();
                Ok(RawOperand::Int(v))
            }
            Tok::Ident(s) if s == "i128" => {
                self.bump();
                self.expect_punct("(")?;
                let lo = self.int()?;
                self.expect_punct(",")?;
                let hi = self.int()?;
                self.expect_punct(")")?;
                Ok(RawOperand::Wide(lo as u64, hi as u64))
            }
            t => err(self.pos(), format!("expected operand, found {}", describe(&t))),
        }
    }

    fn starts_operand(&self) -> bool {
        match self.peek() {
            Tok::Local(_) | Tok::Int(_) => true,
            Tok::Ident(s) => s == "i128" && matches!(self.peek2(), Tok::Punct("(")),
            _ => false,
        }
    }

    fn module(&mut self) -> Result<Vec<RawFunc>, ParseError> {
        let mut funcs = Vec::new();
        while *self.peek() != Tok::Eof {
            funcs.push(self.function()?);
        }
        Ok(funcs)
    }

    fn function(&mut self) -> Result<RawFunc, ParseError> {
        let pos = self.pos();
        self.expect_keyword("func")?;
        let name = match self.bump() {
            (Tok::Global(n), _) => n,
            (t, p) => return err(p, format!("expected function name, found {}", describe(&t))),
        };
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let pname = match self.bump() {
                    (Tok::Local(n), _) => n,
                    (t, p) => return err(p, format!("expected parameter, found {}", describe(&t))),
                };
                self.expect_punct(":")?;
                params.push((pname, self.ty()?));
                if self.is_punct(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        self.expect_punct("->")?;
        let ret = match self.peek() {
            Tok::Ident(s) if s == "void" => {
                self.bump();
                None
            }
            _ => Some(self.ty()?),
        };
        self.expect_punct("{")?;
        let mut stack_vars = Vec::new();
        while matches!(self.peek(), Tok::Ident(s) if s == "stack")
            && !matches!(self.peek2(), Tok::Punct(":"))
        {
            self.bump();
            let size = self.int()?;
            self.expect_keyword("align")?;
            let align = self.int()?;
            if !(0..=u32::MAX as i128).contains(&size) || !(1..=16).contains(&align) {
                return err(self.pos(), "stack variable size or alignment out of range");
            }
            stack_vars.push(StackVar {
                size: size as u32,
                align: align as u32,
            });
        }
        let mut blocks = Vec::new();
        while !self.is_punct("}") {
            blocks.push(self.block()?);
        }
        self.expect_punct("}")?;
        if blocks.is_empty() {
            return err(pos, format!("function @{name} has no blocks"));
        }
        Ok(RawFunc {
            pos,
            name,
            params,
            ret,
            stack_vars,
            blocks,
        })
    }

    fn at_block_end(&self) -> bool {
        self.is_punct("}") || (matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek2(), Tok::Punct(":")))
    }

    fn block(&mut self) -> Result<RawBlock, ParseError> {
        let (label, pos) = self.ident()?;
        self.expect_punct(":")?;
        let mut phis = Vec::new();
        let mut insts = Vec::new();
        while !self.at_block_end() {
            if *self.peek() == Tok::Eof {
                return err(self.pos(), "unexpected end of input");
            }
            let ipos = self.pos();
            let result = if let Tok::Local(n) = self.peek().clone() {
                self.bump();
                self.expect_punct("=")?;
                Some(n)
            } else {
                None
            };
            let (opname, opos) = self.ident()?;
            if opname == "phi" {
                let Some(result) = result else {
                    return err(opos, "phi needs a result");
                };
                if !insts.is_empty() {
                    return err(opos, "phi after non-phi instruction");
                }
                let ty = self.ty()?;
                let mut incoming = Vec::new();
                loop {
                    self.expect_punct("[")?;
                    let v = self.operand()?;
                    self.expect_punct(",")?;
                    let (pred, ppos) = self.ident()?;
                    self.expect_punct("]")?;
                    incoming.push((v, pred, ppos));
                    if self.is_punct(",") && matches!(self.peek2(), Tok::Punct("[")) {
                        self.bump();
                    } else {
                        break;
                    }
                }
                phis.push(RawPhi {
                    result,
                    ty,
                    incoming,
                });
                continue;
            }
            let Some(op) = Opcode::from_name(&opname) else {
                return err(opos, format!("unknown opcode '{opname}'"));
            };
            let inst = self.inst_body(ipos, result, op)?;
            insts.push(inst);
        }
        Ok(RawBlock {
            label,
            pos,
            phis,
            insts,
        })
    }

    fn operands(&mut self, n: usize) -> Result<Vec<RawOperand>, ParseError> {
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                self.expect_punct(",")?;
            }
            v.push(self.operand()?);
        }
        Ok(v)
    }

    fn inst_body(
        &mut self,
        pos: Pos,
        result: Option<String>,
        op: Opcode,
    ) -> Result<RawInst, ParseError> {
        let mut inst = RawInst {
            pos,
            result,
            op,
            args: Vec::new(),
            targets: Vec::new(),
            callee: None,
        };
        match op {
            _ if op.is_binary_i64() => inst.args = self.operands(2)?,
            Opcode::Add128 | Opcode::Store => inst.args = self.operands(2)?,
            Opcode::Addr => inst.args = self.operands(4)?,
            Opcode::Load | Opcode::Trunc | Opcode::Zext128 | Opcode::AllocaRef => {
                inst.args = self.operands(1)?
            }
            Opcode::Call => {
                let callee = match self.bump() {
                    (Tok::Global(n), p) => (n, p),
                    (t, p) => return err(p, format!("expected callee, found {}", describe(&t))),
                };
                inst.callee = Some(callee);
                self.expect_punct("(")?;
                if !self.is_punct(")") {
                    loop {
                        inst.args.push(self.operand()?);
                        if self.is_punct(",") {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect_punct(")")?;
            }
            Opcode::Br => inst.targets.push(self.ident()?),
            Opcode::CondBr => {
                inst.args.push(self.operand()?);
                self.expect_punct(",")?;
                inst.targets.push(self.ident()?);
                self.expect_punct(",")?;
                inst.targets.push(self.ident()?);
            }
            Opcode::Ret => {
                if self.starts_operand() {
                    inst.args.push(self.operand()?);
                }
            }
            _ => unreachable!("opcode table is exhaustive"),
        }
        Ok(inst)
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Local(s) => format!("'%{s}'"),
        Tok::Global(s) => format!("'@{s}'"),
        Tok::Int(v) => format!("'{v}'"),
        Tok::Punct(p) => format!("'{p}'"),
        Tok::Eof => "end of input".to_string(),
    }
}

/// Result type of an instruction, or `None` for instructions without one.
fn result_type(op: Opcode, callee_ret: Option<Type>) -> Option<Type> {
    match op {
        Opcode::Store | Opcode::Br | Opcode::CondBr | Opcode::Ret => None,
        Opcode::Call => callee_ret,
        Opcode::Zext128 | Opcode::Add128 => Some(Type::I128),
        _ => Some(Type::I64),
    }
}

/// Expected operand types. `None` entries must be integer constants.
fn operand_types(op: Opcode) -> &'static [Option<Type>] {
    const I: Option<Type> = Some(Type::I64);
    const W: Option<Type> = Some(Type::I128);
    match op {
        Opcode::Addr => &[I, I, None, None],
        Opcode::Load | Opcode::Zext128 | Opcode::CondBr => &[I],
        Opcode::Store => &[I, I],
        Opcode::AllocaRef => &[None],
        Opcode::Trunc => &[W],
        Opcode::Add128 => &[W, W],
        _ => &[I, I],
    }
}

struct Resolver<'a> {
    names: HashMap<&'a str, ValueId>,
    values: &'a [ValueInfo],
}

impl Resolver<'_> {
    fn operand(&self, raw: &RawOperand, want: Type, pos: Pos) -> Result<Operand, ParseError> {
        match raw {
            RawOperand::Local(name, p) => {
                let Some(&v) = self.names.get(name.as_str()) else {
                    return err(*p, format!("undefined value '%{name}'"));
                };
                let ty = self.values[v.0 as usize].ty;
                if ty != want {
                    return err(*p, format!("type mismatch: '%{name}' is {ty}, expected {want}"));
                }
                Ok(Operand::Value(v))
            }
            RawOperand::Int(v) => {
                let c = match want {
                    Type::I64 => {
                        if *v < i64::MIN as i128 || *v > u64::MAX as i128 {
                            return err(pos, "constant out of range");
                        }
                        Const::i64(*v as u64)
                    }
                    Type::I128 => Const {
                        lo: *v as u64,
                        hi: if *v < 0 { u64::MAX } else { 0 },
                    },
                };
                Ok(Operand::Const(c))
            }
            RawOperand::Wide(lo, hi) => {
                if want != Type::I128 {
                    return err(pos, "type mismatch: i128 constant where i64 expected");
                }
                Ok(Operand::Const(Const { lo: *lo, hi: *hi }))
            }
        }
    }
}

fn resolve_function(
    raw: &RawFunc,
    sigs: &HashMap<String, (FuncId, Vec<Type>, Option<Type>)>,
) -> Result<Function, ParseError> {
    let mut values: Vec<ValueInfo> = Vec::new();
    let mut defs: Vec<(String, Pos)> = Vec::new();
    for (name, ty) in &raw.params {
        values.push(ValueInfo {
            name: name.clone(),
            ty: *ty,
        });
        defs.push((name.clone(), raw.pos));
    }
    let mut labels: HashMap<&str, BlockId> = HashMap::new();
    for (i, b) in raw.blocks.iter().enumerate() {
        if labels.insert(&b.label, BlockId(i as u32)).is_some() {
            return err(b.pos, format!("duplicate block label '{}'", b.label));
        }
    }
    for b in &raw.blocks {
        for phi in &b.phis {
            values.push(ValueInfo {
                name: phi.result.clone(),
                ty: phi.ty,
            });
            defs.push((phi.result.clone(), b.pos));
        }
        for inst in &b.insts {
            let callee_ret = match &inst.callee {
                Some((name, p)) => match sigs.get(name) {
                    Some(sig) => sig.2,
                    None => return err(*p, format!("call to undeclared function '@{name}'")),
                },
                None => None,
            };
            let rty = result_type(inst.op, callee_ret);
            match (&inst.result, rty) {
                (Some(name), Some(ty)) => {
                    values.push(ValueInfo {
                        name: name.clone(),
                        ty,
                    });
                    defs.push((name.clone(), inst.pos));
                }
                (Some(_), None) => {
                    return err(inst.pos, format!("'{}' does not produce a value", inst.op.name()))
                }
                (None, Some(_)) if inst.op != Opcode::Call => {
                    return err(inst.pos, format!("'{}' needs a result name", inst.op.name()))
                }
                _ => {}
            }
        }
    }
    let mut names = HashMap::new();
    for (i, (name, pos)) in defs.iter().enumerate() {
        if names.insert(name.as_str(), ValueId(i as u32)).is_some() {
            return err(*pos, format!("duplicate definition of '%{name}'"));
        }
    }
    let res = Resolver {
        names,
        values: &values,
    };
    let label = |(name, pos): &(String, Pos)| -> Result<BlockId, ParseError> {
        labels
            .get(name.as_str())
            .copied()
            .map_or_else(|| err(*pos, format!("unknown block '{name}'")), Ok)
    };

    let mut next = raw.params.len() as u32;
    let mut blocks = Vec::with_capacity(raw.blocks.len());
    for b in &raw.blocks {
        let mut phis = Vec::new();
        for phi in &b.phis {
            let mut incoming = Vec::new();
            for (v, pred, ppos) in &phi.incoming {
                let pb = label(&(pred.clone(), *ppos))?;
                incoming.push((pb, res.operand(v, phi.ty, *ppos)?));
            }
            phis.push(Phi {
                result: ValueId(next),
                ty: phi.ty,
                incoming,
            });
            next += 1;
        }
        let mut insts = Vec::new();
        for ri in &b.insts {
            let mut inst = Inst {
                result: None,
                op: ri.op,
                args: Vec::new(),
                targets: ri.targets.iter().map(label).collect::<Result<_, _>>()?,
                callee: None,
            };
            match ri.op {
                Opcode::Call => {
                    let (cname, cpos) = ri.callee.as_ref().expect("call has callee");
                    let (id, params, _) = &sigs[cname];
                    if params.len() != ri.args.len() {
                        return err(
                            *cpos,
                            format!(
                                "'@{cname}' takes {} arguments, {} given",
                                params.len(),
                                ri.args.len()
                            ),
                        );
                    }
                    inst.callee = Some(*id);
                    for (a, ty) in ri.args.iter().zip(params) {
                        inst.args.push(res.operand(a, *ty, ri.pos)?);
                    }
                }
                Opcode::Ret => match (ri.args.first(), raw.ret) {
                    (Some(a), Some(ty)) => inst.args.push(res.operand(a, ty, ri.pos)?),
                    (None, None) => {}
                    (Some(_), None) => return err(ri.pos, "type mismatch: value returned from void function"),
                    (None, Some(_)) => return err(ri.pos, "type mismatch: missing return value"),
                },
                op => {
                    for (a, want) in ri.args.iter().zip(operand_types(op)) {
                        match want {
                            Some(ty) => inst.args.push(res.operand(a, *ty, ri.pos)?),
                            None => match a {
                                RawOperand::Int(v) => {
                                    inst.args.push(Operand::Const(Const::i64(*v as u64)))
                                }
                                _ => {
                                    return err(
                                        ri.pos,
                                        format!("'{}' expects an integer literal here", op.name()),
                                    )
                                }
                            },
                        }
                    }
                }
            }
            if ri.result.is_some() {
                inst.result = Some(ValueId(next));
                next += 1;
            }
            insts.push(inst);
        }
        blocks.push(Block {
            label: b.label.clone(),
            phis,
            insts,
        });
    }
    Ok(Function {
        name: raw.name.clone(),
        params: (0..raw.params.len() as u32).map(ValueId).collect(),
        ret: raw.ret,
        blocks,
        stack_vars: raw.stack_vars.clone(),
        values,
    })
}

/// Parses `.tir` text into a module and checks φ-node completeness.
pub fn parse_module(text: &str) -> Result<Module, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0 };
    let raw = p.module()?;
    let mut sigs = HashMap::new();
    for (i, f) in raw.iter().enumerate() {
        let sig = (
            FuncId(i as u32),
            f.params.iter().map(|p| p.1).collect::<Vec<_>>(),
            f.ret,
        );
        if sigs.insert(f.name.clone(), sig).is_some() {
            return err(f.pos, format!("duplicate function '@{}'", f.name));
        }
    }
    let mut functions = Vec::with_capacity(raw.len());
    for rf in &raw {
        let f = resolve_function(rf, &sigs)?;
        // Terminators and φ-node predecessor lists are structural; report
        // them here so that later stages can rely on them.
        for (bi, b) in f.blocks.iter().enumerate() {
            let rb = &rf.blocks[bi];
            match b.insts.last() {
                Some(t) if t.op.is_terminator() => {}
                _ => return err(rb.pos, format!("block '{}' does not end in a terminator", b.label)),
            }
            if let Some(pos) = b.insts[..b.insts.len() - 1]
                .iter()
                .position(|i| i.op.is_terminator())
            {
                return err(rb.insts[pos].pos, "terminator in the middle of a block");
            }
        }
        let preds = f.preds();
        for (bi, b) in f.blocks.iter().enumerate() {
            for (pi, phi) in b.phis.iter().enumerate() {
                for pred in &preds[bi] {
                    if !phi.incoming.iter().any(|(ib, _)| ib == pred) {
                        let rb = &rf.blocks[bi];
                        return err(
                            rb.pos,
                            format!(
                                "phi incomplete: '%{}' has no incoming value for '{}'",
                                rb.phis[pi].result, f.blocks[pred.0 as usize].label
                            ),
                        );
                    }
                }
            }
        }
        functions.push(f);
    }
    Ok(Module::new(functions))
}
