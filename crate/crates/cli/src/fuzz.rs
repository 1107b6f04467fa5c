//! Differential fuzzing: generated functions run on the interpreter and as
//! compiled code, in parallel over worker threads.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;

use onepass::codegen::CompileOptions;
use onepass::diff::{Compiled, Divergence};
use onepass::ir::{print_module, Module};
use onepass::snippets::SnippetSet;

use crate::gen::{arg_vectors, generate, FuzzConfig, ENTRY};
use crate::minimize::minimize;

#[derive(Clone, Debug)]
pub struct Failure {
    pub index: u64,
    pub message: String,
    pub original: String,
    pub reduced: String,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub functions: u64,
    pub runs: u64,
    /// Runs that ended in a trap on both sides.
    pub traps: u64,
    pub failure: Option<Failure>,
}

/// Compiles and runs `m`; returns the first disagreement, with compiler
/// panics reported as failures.
pub fn check(
    m: &Module,
    opts: &CompileOptions,
    snippets: &SnippetSet,
    vectors: &[Vec<u64>],
    traps: &mut u64,
) -> Option<String> {
    let r = catch_unwind(AssertUnwindSafe(|| -> Result<(), Divergence> {
        let c = Compiled::new(m, opts, snippets)?;
        for args in vectors {
            if c.check(ENTRY, args)?.is_err() {
                *traps += 1;
            }
        }
        Ok(())
    }));
    match r {
        Ok(Ok(())) => None,
        Ok(Err(d)) => Some(d.to_string()),
        Err(p) => Some(format!(
            "compiler panicked: {}",
            p.downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| p.downcast_ref::<&str>().copied())
                .unwrap_or("?")
        )),
    }
}

pub fn run(
    cfg: &FuzzConfig,
    count: u64,
    vectors_per_function: usize,
    opts: &CompileOptions,
    snippets: &SnippetSet,
) -> Report {
    let next = AtomicU64::new(0);
    let runs = AtomicU64::new(0);
    let traps = AtomicU64::new(0);
    let first: Mutex<Option<(u64, String)>> = Mutex::new(None);
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(16);
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    return;
                }
                if first.lock().unwrap().as_ref().is_some_and(|(j, _)| *j < i) {
                    return;
                }
                let m = generate(cfg, i);
                let vectors = arg_vectors(cfg, i, &m, vectors_per_function);
                let mut t = 0;
                let failed = check(&m, opts, snippets, &vectors, &mut t);
                runs.fetch_add(vectors.len() as u64, Ordering::Relaxed);
                traps.fetch_add(t, Ordering::Relaxed);
                if let Some(msg) = failed {
                    let mut f = first.lock().unwrap();
                    if f.as_ref().map_or(true, |(j, _)| i < *j) {
                        *f = Some((i, msg));
                    }
                }
            });
        }
    });
    let failure = first.into_inner().unwrap().map(|(index, message)| {
        let m = generate(cfg, index);
        let vectors = arg_vectors(cfg, index, &m, vectors_per_function);
        let reduced = minimize(&m, |c| check(c, opts, snippets, &vectors, &mut 0).is_some());
        Failure {
            index,
            message,
            original: print_module(&m),
            reduced: print_module(&reduced),
        }
    });
    std::panic::set_hook(hook);
    let functions = match &failure {
        Some(f) => f.index + 1,
        None => count,
    };
    Report {
        functions,
        runs: runs.into_inner(),
        traps: traps.into_inner(),
        failure,
    }
}
