//! Compile-time scaling on synthetic straight-line chains.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use onepass::adapter::seed::compile_module;
use onepass::codegen::CompileOptions;
use onepass::ir::{parse_module, Module};
use onepass::snippets::SnippetSet;

pub const SIZES: [usize; 3] = [1_000, 10_000, 100_000];
/// Allowed growth of compile time from 10^3 to 10^5 instructions.
pub const MAX_RATIO: f64 = 300.0;
pub const BUDGET: Duration = Duration::from_secs(5);

const OPS: [&str; 6] = ["add", "xor", "mul", "sub", "or", "and"];

/// `@chain(%a)` with `n` instructions, each combining the previous result
/// with an older one or a constant.
pub fn chain_text(n: usize) -> String {
    let mut s = String::with_capacity(n * 32);
    s.push_str("func @chain(%a: i64) -> i64 {\nentry:\n  %v0 = add %a, 1\n");
    for i in 1..n.max(2) - 1 {
        let op = OPS[i % OPS.len()];
        let rhs = match i % 3 {
            0 => format!("{}", i * 7 + 1),
            _ => format!("%v{}", i.saturating_sub(1 + i % 5)),
        };
        let _ = writeln!(s, "  %v{i} = {op} %v{}, {rhs}", i - 1);
    }
    let _ = writeln!(s, "  ret %v{}\n}}", n.max(2) - 2);
    s
}

pub fn chain(n: usize) -> Module {
    parse_module(&chain_text(n)).expect("chain text parses")
}

#[derive(Clone, Debug)]
pub struct Row {
    pub insts: usize,
    pub time: Duration,
}

/// Best of `reps` compilations of `m`.
pub fn time_compile(m: &Module, reps: usize) -> Duration {
    let opts = CompileOptions::default();
    (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            compile_module(m, &opts, SnippetSet::builtin()).expect("chain compiles");
            t.elapsed()
        })
        .min()
        .unwrap()
}

pub fn scaling(sizes: &[usize]) -> Vec<Row> {
    sizes
        .iter()
        .map(|&n| {
            let m = chain(n);
            // Small sizes are noisy; repeat them more.
            let reps = (1_000_000 / n.max(1)).clamp(3, 50);
            Row {
                insts: n,
                time: time_compile(&m, reps),
            }
        })
        .collect()
}

pub fn ratio(rows: &[Row]) -> f64 {
    let first = rows.first().unwrap().time.as_secs_f64();
    let last = rows.last().unwrap().time.as_secs_f64();
    last / first.max(1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use onepass::ir::{validate, interpret};

    #[test]
    fn chain_has_requested_length() {
        let m = chain(1000);
        validate(&m).unwrap();
        let n: usize = m.functions[0].blocks[0].insts.len();
        assert_eq!(n, 1000);
        assert!(interpret(&m, "chain", &[3]).is_ok());
    }
}
