//! The single code-generation pass: value assignments, register allocation,
//! spilling, φ resolution and frame finalization, all while walking the
//! blocks once in layout order.
//!
//! The pass is generic over the IR adapter; instruction selection is plugged
//! in through [`Lowering`]. Output is vISA code.

mod assignment;
mod edges;
mod parallel;
mod regfile;
mod session;

pub use assignment::{flags, Assignment, AssignmentTable, PartState};
pub use parallel::{sequentialize, Loc, Move, NeedsTemp, Src};
pub use regfile::{Choice, RegFile, RegSet, RegState, ALLOCATABLE};
pub use session::{BranchCond, Session, SessionStats, ValHandle};

use std::fmt;
use std::time::Instant;

use crate::adapter::{BlockRef, FuncRef, IrAdapter};
use crate::analysis::analyze;
use crate::visa::{PatchPoint, Reg};

/// Deliberate miscompilations, used to check that the differential tests
/// notice broken allocators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Evicted values are marked as spilled without storing them.
    SkipEvictionSpill,
}

#[derive(Clone, Debug)]
pub struct CompileOptions {
    /// Immediate and address-operand folding plus compare/address fusion.
    pub fold: bool,
    /// Check session invariants while compiling; failures are collected in
    /// [`FunctionArtifact::audit_failures`].
    pub audit: bool,
    pub record_events: bool,
    /// Keep a copy of the code before the frame is finalized.
    pub capture_snapshot: bool,
    pub fault: Option<Fault>,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            fold: true,
            audit: false,
            record_events: false,
            capture_snapshot: false,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompileError {
    pub func: String,
    pub inst: Option<String>,
    pub msg: String,
}

impl fmt::Display for CompileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.func.is_empty() {
            write!(f, "in '@{}'", self.func)?;
            if let Some(i) = &self.inst {
                write!(f, " at `{i}`")?;
            }
            f.write_str(": ")?;
        }
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CompileError {}

/// One entry of the session trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Alloc { reg: Reg, v: u32, part: u32 },
    Scratch { reg: Reg },
    Evict { reg: Reg, v: u32, part: u32 },
    Spill { v: u32, part: u32, offset: u32 },
    Reload { v: u32, part: u32, reg: Reg },
    Lock { v: u32, part: u32, count: u8 },
    Unlock { v: u32, part: u32, count: u8 },
    Free { v: u32 },
    Fix { reg: Reg, v: u32, part: u32 },
    Unfix { reg: Reg, v: u32, part: u32 },
    /// Block entry. `carried` is true when the register state of the
    /// previous block is kept; `unplaced` lists live values that would have
    /// no location after dropping the registers.
    Block {
        index: u32,
        multi_pred: bool,
        carried: bool,
        unplaced: Vec<u32>,
    },
    Emit { word: u32, text: String },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Alloc { reg, v, part } => write!(f, "alloc {reg} v{v}.{part}"),
            Event::Scratch { reg } => write!(f, "scratch {reg}"),
            Event::Evict { reg, v, part } => write!(f, "evict {reg} v{v}.{part}"),
            Event::Spill { v, part, offset } => write!(f, "spill v{v}.{part} [fp - {offset}]"),
            Event::Reload { v, part, reg } => write!(f, "reload v{v}.{part} {reg}"),
            Event::Lock { v, part, count } => write!(f, "lock v{v}.{part} {count}"),
            Event::Unlock { v, part, count } => write!(f, "unlock v{v}.{part} {count}"),
            Event::Free { v } => write!(f, "free v{v}"),
            Event::Fix { reg, v, part } => write!(f, "fix {reg} v{v}.{part}"),
            Event::Unfix { reg, v, part } => write!(f, "unfix {reg} v{v}.{part}"),
            Event::Block {
                index,
                multi_pred,
                carried,
                unplaced,
            } => {
                write!(
                    f,
                    "block {index} preds={} state={}",
                    if *multi_pred { "multi" } else { "single" },
                    if *carried { "carried" } else { "reset" }
                )?;
                if !unplaced.is_empty() {
                    write!(f, " unplaced=")?;
                    for (i, v) in unplaced.iter().enumerate() {
                        write!(f, "{}v{v}", if i > 0 { "," } else { "" })?;
                    }
                }
                Ok(())
            }
            Event::Emit { word, text } => write!(f, "emit {word:03} {text}"),
        }
    }
}

/// Instruction selection for one IR, driven by [`compile_function`].
pub trait Lowering<A: IrAdapter> {
    fn begin_block(&mut self, _s: &mut Session<A>, _block: BlockRef) {}

    /// Compiles one instruction. Terminators must end in
    /// [`Session::branch`], [`Session::cond_branch`] or [`Session::ret`].
    fn lower(&mut self, s: &mut Session<A>, inst: A::Inst) -> Result<(), String>;

    /// Text used to name `inst` in diagnostics.
    fn describe(&self, s: &Session<A>, inst: A::Inst) -> String;
}

#[derive(Clone, Debug)]
pub struct FunctionArtifact {
    pub name: String,
    pub code: Vec<u8>,
    pub frame_size: u32,
    pub patch_points: Vec<PatchPoint>,
    /// Rewrites of already emitted words: (word, purpose of its region).
    pub patch_log: Vec<(u32, crate::visa::PatchPurpose)>,
    /// Code before frame finalization, if requested.
    pub snapshot: Option<Vec<u8>>,
    pub clobbered: Vec<Reg>,
    pub stats: SessionStats,
    pub inst_count: u32,
    pub compile_nanos: u64,
    pub events: Vec<Event>,
    pub audit_failures: Vec<String>,
}

/// Analyzes and compiles function `f`.
pub fn compile_function<A: IrAdapter, L: Lowering<A>>(
    adapter: &mut A,
    f: FuncRef,
    lowering: &mut L,
    opts: &CompileOptions,
) -> Result<FunctionArtifact, CompileError> {
    let start = Instant::now();
    adapter.prepare(f);
    let analysis = analyze(adapter);
    let result = {
        let adapter = &*adapter;
        let name = adapter.func_name(f).to_string();
        let err = |inst: Option<String>, msg: String| CompileError {
            func: name.clone(),
            inst,
            msg,
        };
        let mut s = Session::new(adapter, &analysis, opts, name.clone());
        let mut inst_count = 0;
        let mut res = s.begin_function().map_err(|m| err(None, m));
        for (idx, &blk) in analysis.order.layout.iter().enumerate() {
            if res.is_err() {
                break;
            }
            s.begin_block(idx as u32);
            lowering.begin_block(&mut s, blk);
            for &inst in adapter.insts(blk) {
                inst_count += 1;
                s.begin_inst();
                if let Err(m) = lowering.lower(&mut s, inst) {
                    res = Err(err(Some(lowering.describe(&s, inst)), m));
                    break;
                }
                s.end_inst(adapter.inst_result(inst));
            }
            s.end_block();
        }
        res.and_then(|()| {
            let mut art = s.finish().map_err(|m| err(None, m))?;
            art.inst_count = inst_count;
            art.compile_nanos = start.elapsed().as_nanos() as u64;
            Ok(art)
        })
    };
    adapter.finalize();
    result
}
