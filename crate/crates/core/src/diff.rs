//! Differential checking: compiled code on the VM against the interpreter.

use std::fmt;

use crate::adapter::seed::compile_module;
use crate::codegen::{CompileError, CompileOptions};
use crate::ir::{interpret_with_limit, Module, Type};
use crate::snippets::SnippetSet;
use crate::vm::{Program, RunOptions, Vm};
use crate::Trap;

/// Step limit shared by both sides so that runaway programs agree.
pub const STEP_LIMIT: u64 = 10_000_000;

/// Result of one execution, with `hi` cleared for `i64` and void results.
pub type Outcome = Result<(u64, u64), Trap>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Divergence {
    Compile(CompileError),
    Load(String),
    Audit { func: String, failures: Vec<String> },
    Mismatch {
        func: String,
        args: Vec<u64>,
        expected: Outcome,
        actual: Outcome,
    },
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::Compile(e) => write!(f, "compile error: {e}"),
            Divergence::Load(e) => write!(f, "load error: {e}"),
            Divergence::Audit { func, failures } => {
                write!(f, "audit failed in @{func}: {}", failures.join("; "))
            }
            Divergence::Mismatch {
                func,
                args,
                expected,
                actual,
            } => write!(
                f,
                "@{func}({args:?}): interpreter {expected:?}, compiled {actual:?}"
            ),
        }
    }
}

fn normalize(m: &Module, func: &str, r: Outcome) -> Outcome {
    let wide = m
        .function(func)
        .map(|(_, f)| f.ret == Some(Type::I128))
        .unwrap_or(false);
    let void = m.function(func).map(|(_, f)| f.ret.is_none()).unwrap_or(false);
    r.map(|(lo, hi)| match (void, wide) {
        (true, _) => (0, 0),
        (false, true) => (lo, hi),
        (false, false) => (lo, 0),
    })
}

/// Traps compare by kind only. A step-limit hit on either side is not a
/// divergence since step counts differ between the two, and an
/// out-of-bounds access in the interpreter has no defined compiled result.
fn agree(a: &Outcome, b: &Outcome) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x == y,
        (Err(Trap::StepLimit | Trap::OutOfBounds), _) | (_, Err(Trap::StepLimit)) => true,
        (Err(x), Err(y)) => std::mem::discriminant(x) == std::mem::discriminant(y),
        _ => false,
    }
}

pub fn interpret(m: &Module, func: &str, args: &[u64]) -> Outcome {
    normalize(m, func, interpret_with_limit(m, func, args, STEP_LIMIT))
}

/// Compiled program plus the module it came from.
pub struct Compiled<'m> {
    pub module: &'m Module,
    pub program: Program,
}

impl<'m> Compiled<'m> {
    pub fn new(m: &'m Module, opts: &CompileOptions, snippets: &SnippetSet) -> Result<Self, Divergence> {
        let opts = CompileOptions {
            audit: true,
            ..opts.clone()
        };
        let cm = compile_module(m, &opts, snippets).map_err(Divergence::Compile)?;
        for a in &cm.functions {
            if !a.audit_failures.is_empty() {
                return Err(Divergence::Audit {
                    func: a.name.clone(),
                    failures: a.audit_failures.clone(),
                });
            }
        }
        let program = Program::from_image(cm.image).map_err(|e| Divergence::Load(e.to_string()))?;
        Ok(Compiled { module: m, program })
    }

    pub fn run(&self, func: &str, args: &[u64]) -> Outcome {
        let opts = RunOptions {
            step_limit: STEP_LIMIT * 8,
            ..RunOptions::default()
        };
        let r = Vm::new(&self.program, opts)
            .run(func, args)
            .map(|r| (r.lo, r.hi));
        normalize(self.module, func, r)
    }

    /// Runs `func` on both sides and reports the first disagreement.
    pub fn check(&self, func: &str, args: &[u64]) -> Result<Outcome, Divergence> {
        let expected = interpret(self.module, func, args);
        let actual = self.run(func, args);
        if agree(&expected, &actual) {
            Ok(expected)
        } else {
            Err(Divergence::Mismatch {
                func: func.to_string(),
                args: args.to_vec(),
                expected,
                actual,
            })
        }
    }
}

/// Compiles `m` and checks `func` on every argument vector.
pub fn check_module(
    m: &Module,
    opts: &CompileOptions,
    snippets: &SnippetSet,
    func: &str,
    vectors: &[Vec<u64>],
) -> Result<(), Divergence> {
    let c = Compiled::new(m, opts, snippets)?;
    for args in vectors {
        c.check(func, args).map(drop)?;
    }
    Ok(())
}

/// Expected outcome written next to a run vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expect {
    Value(u64, u64),
    Trap,
}

/// A corpus program: `; run: ARGS [=> LO [HI] | => trap]` lines give the
/// vectors for `@main`; `; expect-error: TEXT` marks a program that must be
/// rejected with a diagnostic containing TEXT.
#[derive(Clone, Debug)]
pub struct CorpusCase {
    pub name: String,
    pub text: String,
    pub runs: Vec<(Vec<u64>, Option<Expect>)>,
    pub expect_error: Option<String>,
}

pub fn parse_int(s: &str) -> Option<u64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = match body.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16).ok()?,
        None => body.parse().ok()?,
    };
    Some(if neg { v.wrapping_neg() } else { v })
}

impl CorpusCase {
    pub fn parse(name: &str, text: &str) -> Result<CorpusCase, String> {
        let mut runs = Vec::new();
        let mut expect_error = None;
        for line in text.lines() {
            let line = line.trim();
            if let Some(r) = line.strip_prefix("; run:") {
                let (args, exp) = match r.split_once("=>") {
                    Some((a, e)) => (a, Some(e.trim())),
                    None => (r, None),
                };
                let ints = |s: &str| -> Result<Vec<u64>, String> {
                    s.split_whitespace()
                        .map(|w| parse_int(w).ok_or_else(|| format!("{name}: bad integer '{w}'")))
                        .collect()
                };
                let exp = match exp {
                    None => None,
                    Some("trap") => Some(Expect::Trap),
                    Some(e) => match ints(e)?.as_slice() {
                        [lo] => Some(Expect::Value(*lo, 0)),
                        [lo, hi] => Some(Expect::Value(*lo, *hi)),
                        _ => return Err(format!("{name}: bad expectation '{e}'")),
                    },
                };
                runs.push((ints(args)?, exp));
            } else if let Some(e) = line.strip_prefix("; expect-error:") {
                expect_error = Some(e.trim().to_string());
            }
        }
        Ok(CorpusCase {
            name: name.to_string(),
            text: text.to_string(),
            runs,
            expect_error,
        })
    }
}

/// All `.tir` files of `dir`, sorted by name.
pub fn load_corpus(dir: &std::path::Path) -> std::io::Result<Vec<CorpusCase>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tir"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            CorpusCase::parse(&name, &text)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}
