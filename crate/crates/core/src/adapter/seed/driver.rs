//! Compiling a whole seed-IR module into an image.

use super::lower::SeedLowering;
use super::SeedAdapter;
use crate::adapter::{FuncRef, IrAdapter};
use crate::codegen::{compile_function, CompileError, CompileOptions, FunctionArtifact};
use crate::ir::{validate, Module};
use crate::snippets::{SnippetSet, REQUIRED};
use crate::visa::{Image, ImageFunction, WORD};

#[derive(Clone, Debug)]
pub struct CompiledModule {
    pub image: Image,
    /// Per function, in module order.
    pub functions: Vec<FunctionArtifact>,
}

/// Per-function numbers reported by `compile --stats`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionStats {
    pub name: String,
    pub ir_insts: u32,
    pub code_words: u32,
    pub frame_size: u32,
    pub spills: u32,
    pub reloads: u32,
    pub evictions: u32,
    pub moves: u32,
    pub clobbered: usize,
    pub compile_nanos: u64,
}

impl FunctionStats {
    pub fn of(a: &FunctionArtifact) -> Self {
        FunctionStats {
            name: a.name.clone(),
            ir_insts: a.inst_count,
            code_words: (a.code.len() / WORD) as u32,
            frame_size: a.frame_size,
            spills: a.stats.spills,
            reloads: a.stats.reloads,
            evictions: a.stats.evictions,
            moves: a.stats.moves,
            clobbered: a.clobbered.len(),
            compile_nanos: a.compile_nanos,
        }
    }
}

/// Validates and compiles every function of `m`. Function indices in the
/// image follow the module order.
pub fn compile_module(
    m: &Module,
    opts: &CompileOptions,
    snippets: &SnippetSet,
) -> Result<CompiledModule, CompileError> {
    let missing = snippets.missing(REQUIRED);
    if !missing.is_empty() {
        return Err(CompileError {
            func: String::new(),
            inst: None,
            msg: format!("snippet set lacks {}", missing.join(", ")),
        });
    }
    if let Err(v) = validate(m) {
        return Err(CompileError {
            func: v[0].function.clone(),
            inst: None,
            msg: format!("invalid IR: {}", v[0]),
        });
    }
    let mut adapter = SeedAdapter::new(m);
    let mut lowering = SeedLowering::new(snippets);
    let mut functions = Vec::with_capacity(m.functions.len());
    for f in 0..adapter.func_count() {
        functions.push(compile_function(&mut adapter, FuncRef(f), &mut lowering, opts)?);
    }
    let image = Image {
        functions: functions
            .iter()
            .map(|a| ImageFunction {
                name: a.name.clone(),
                code: a.code.clone(),
                frame_size: a.frame_size,
            })
            .collect(),
    };
    Ok(CompiledModule { image, functions })
}
