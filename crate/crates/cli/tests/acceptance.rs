//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::{BTreeSet, HashMap};
use std::mem::size_of;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use onepass::adapter::seed::{compile_module, SeedAdapter};
use onepass::adapter::{FuncRef, IrAdapter};
use onepass::analysis::{analyze, liveness_violations};
use onepass::codegen::{
    sequentialize, Assignment, CompileOptions, Event, FunctionArtifact, Loc, Move, NeedsTemp,
    PartState, Src,
};
use onepass::diff::{load_corpus, Compiled, CorpusCase};
use onepass::ir::{parse_module, Function, Module, Opcode, Operand, Type};
use onepass::snippets::SnippetSet;
use onepass::visa::{disassemble, PatchPurpose, Reg, WORD};
use onepass_cli::gen::{generate, FuzzConfig};
use onepass_cli::{bench, fuzz};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corpus() -> Vec<(CorpusCase, Module)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus");
    load_corpus(&dir)
        .expect("corpus directory")
        .into_iter()
        .map(|c| {
            let m = parse_module(&c.text).unwrap_or_else(|e| panic!("{}: {e}", c.name));
            (c, m)
        })
        .collect()
}

fn fuzz_modules(count: u64) -> Vec<Module> {
    let plain = FuzzConfig { seed: 2024, ..Default::default() };
    let irr = FuzzConfig { seed: 2025, irreducible: true, loop_prob: 0.5, ..Default::default() };
    (0..count)
        .map(|i| if i % 2 == 0 { generate(&plain, i) } else { generate(&irr, i) })
        .collect()
}

fn compile(m: &Module, opts: &CompileOptions) -> Vec<FunctionArtifact> {
    compile_module(m, opts, SnippetSet::builtin())
        .expect("compiles")
        .functions
}

// ---- differential correctness -------------------------------------------

/// Largest number of simultaneously live values anywhere in `f`, from a
/// plain iterative dataflow over the IR.
fn max_pressure(f: &Function) -> usize {
    let n = f.blocks.len();
    let mut live_in = vec![BTreeSet::new(); n];
    let mut live_out = vec![BTreeSet::<u32>::new(); n];
    let vals = |ops: &[Operand]| -> Vec<u32> {
        ops.iter()
            .filter_map(|o| match o {
                Operand::Value(v) => Some(v.0),
                _ => None,
            })
            .collect()
    };
    let mut changed = true;
    while changed {
        changed = false;
        for b in (0..n).rev() {
            let mut out = BTreeSet::new();
            for s in f.blocks[b].succs() {
                let sb = &f.blocks[s.0 as usize];
                for &v in &live_in[s.0 as usize] {
                    if !sb.phis.iter().any(|p| p.result.0 == v) {
                        out.insert(v);
                    }
                }
                for p in &sb.phis {
                    for (from, op) in &p.incoming {
                        if from.0 as usize == b {
                            out.extend(vals(std::slice::from_ref(op)));
                        }
                    }
                }
            }
            let mut live = out.clone();
            for i in f.blocks[b].insts.iter().rev() {
                if let Some(r) = i.result {
                    live.remove(&r.0);
                }
                live.extend(vals(&i.args));
            }
            for p in &f.blocks[b].phis {
                live.remove(&p.result.0);
            }
            if out != live_out[b] || live != live_in[b] {
                live_out[b] = out;
                live_in[b] = live;
                changed = true;
            }
        }
    }
    let mut best = 0;
    for (b, block) in f.blocks.iter().enumerate() {
        let mut live = live_out[b].clone();
        best = best.max(live.len());
        for i in block.insts.iter().rev() {
            if let Some(r) = i.result {
                live.remove(&r.0);
            }
            live.extend(vals(&i.args));
            best = best.max(live.len());
        }
    }
    best
}

fn has_loop(m: &Module, nested: bool, irreducible: bool) -> bool {
    let mut ad = SeedAdapter::new(m);
    let mut found = false;
    for i in 0..ad.func_count() {
        ad.prepare(FuncRef(i));
        let a = analyze(&mut ad);
        found |= a.forest.nodes.iter().any(|n| {
            n.level >= 1 + nested as u32 && (!irreducible || n.irreducible)
        });
        ad.finalize();
    }
    found
}

fn corpus_coverage(cases: &[(CorpusCase, Module)]) -> Result<(), String> {
    let any = |p: &dyn Fn(&Module) -> bool| cases.iter().any(|(_, m)| p(m));
    let uses = |m: &Module, op: Opcode| {
        m.functions
            .iter()
            .any(|f| f.blocks.iter().any(|b| b.insts.iter().any(|i| i.op == op)))
    };
    let fusable = |m: &Module| {
        m.functions.iter().any(|f| {
            f.blocks.iter().any(|b| {
                let n = b.insts.len();
                n >= 2
                    && b.insts[n - 2].op.is_compare()
                    && b.insts[n - 1].op == Opcode::CondBr
                    && b.insts[n - 1].args[0] == Operand::Value(b.insts[n - 2].result.unwrap())
            })
        })
    };
    let checks: [(&str, bool); 10] = [
        ("loops", any(&|m| has_loop(m, false, false))),
        ("nested loops", any(&|m| has_loop(m, true, false))),
        ("irreducible control flow", any(&|m| has_loop(m, false, true))),
        (
            "i128",
            any(&|m| m.functions.iter().any(|f| f.values.iter().any(|v| v.ty == Type::I128))),
        ),
        ("udiv", any(&|m| uses(m, Opcode::Udiv))),
        ("urem", any(&|m| uses(m, Opcode::Urem))),
        ("stack variables", any(&|m| m.functions.iter().any(|f| !f.stack_vars.is_empty()))),
        ("calls", any(&|m| uses(m, Opcode::Call))),
        ("compare-branch fusion", any(&fusable)),
        (
            "more than 16 live values",
            any(&|m| m.functions.iter().any(|f| max_pressure(f) > 16)),
        ),
    ];
    let missing: Vec<_> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    ensure(missing.is_empty(), || format!("corpus lacks {missing:?}"))
}

fn differential() -> Outcome {
    let start = Instant::now();
    let cases = corpus();
    ensure(cases.len() >= 25, || format!("only {} corpus programs", cases.len()))?;
    corpus_coverage(&cases)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut corpus_runs, mut corpus_traps) = (0, 0);
    for (c, m) in &cases {
        let slots = m.function("main").unwrap().1.arg_slots();
        let mut vectors: Vec<Vec<u64>> = c.runs.iter().map(|r| r.0.clone()).collect();
        vectors.extend((0..8).map(|_| (0..slots).map(|_| rng.gen_range(0..40)).collect::<Vec<_>>()));
        for fold in [true, false] {
            let opts = CompileOptions { fold, ..Default::default() };
            let cc = Compiled::new(m, &opts, SnippetSet::builtin()).map_err(|e| format!("{}: {e}", c.name))?;
            for args in &vectors {
                let r = cc.check("main", args).map_err(|e| format!("{}: {e}", c.name))?;
                corpus_traps += r.is_err() as usize;
                corpus_runs += 1;
            }
        }
    }
    let mut functions = 0;
    let mut runs = 0;
    let configs = [
        (FuzzConfig { seed: 1, ..Default::default() }, 600),
        (FuzzConfig { seed: 2, irreducible: true, ..Default::default() }, 400),
    ];
    for (cfg, n) in &configs {
        let r = fuzz::run(cfg, *n, 8, &CompileOptions::default(), SnippetSet::builtin());
        if let Some(f) = r.failure {
            return Err(format!("seed {} #{}: {}\n{}", cfg.seed, f.index, f.message, f.reduced));
        }
        functions += r.functions;
        runs += r.runs;
    }
    let took = start.elapsed();
    ensure(functions >= 1000 && runs >= 8000, || format!("only {functions} functions"))?;
    ensure(took <= Duration::from_secs(120), || format!("took {took:?}"))?;
    Ok(format!(
        "{} programs / {corpus_runs} runs ({corpus_traps} trapping), {functions} fuzzed functions / {runs} runs agree in {:.1}s",
        cases.len(),
        took.as_secs_f64()
    ))
}

// ---- liveness ----------------------------------------------------------

fn liveness() -> Outcome {
    let mut cfgs = 0;
    let mut open_tails = 0;
    for m in fuzz_modules(300) {
        let mut ad = SeedAdapter::new(&m);
        for i in 0..ad.func_count() {
            ad.prepare(FuncRef(i));
            let a = analyze(&mut ad);
            let v = liveness_violations(&ad, &a);
            ensure(v.is_empty(), || format!("{v:?}"))?;
            cfgs += 1;
            open_tails += a.liveness.ranges.iter().filter(|r| !r.ends_at_block_end).count();
            ad.finalize();
        }
    }
    ensure(cfgs >= 500, || format!("only {cfgs} CFGs"))?;
    Ok(format!("{cfgs} CFGs, {open_tails} tight range ends, 0 violations"))
}

// ---- single-pass discipline -------------------------------------------

fn single_pass() -> Outcome {
    let opts = CompileOptions { capture_snapshot: true, ..Default::default() };
    let mut funcs = 0;
    let mut frame_words = 0;
    let mut modules: Vec<(String, Module)> =
        corpus().into_iter().map(|(c, m)| (c.name, m)).collect();
    modules.extend(fuzz_modules(100).into_iter().enumerate().map(|(i, m)| (format!("fuzz#{i}"), m)));
    for (name, m) in &modules {
        for f in compile(m, &opts) {
            let region = |w: u32| f.patch_points.iter().find(|p| p.word <= w && w < p.word + p.len);
            for &(w, purpose) in &f.patch_log {
                let p = region(w).ok_or_else(|| format!("{name}: write to word {w} outside patch points"))?;
                ensure(p.purpose == purpose, || format!("{name}: word {w} purpose"))?;
            }
            let before = f.snapshot.as_ref().unwrap();
            ensure(before.len() == f.code.len(), || format!("{name}: size changed"))?;
            for (i, (a, b)) in before.chunks(WORD).zip(f.code.chunks(WORD)).enumerate() {
                if a == b {
                    continue;
                }
                frame_words += 1;
                let p = region(i as u32).ok_or_else(|| format!("{name}: word {i} changed"))?;
                match p.purpose {
                    PatchPurpose::FrameSize => {
                        ensure(a[..4] == b[..4], || format!("{name}: frame word {i} beyond immediate"))?
                    }
                    PatchPurpose::SaveSlots | PatchPurpose::RestoreSlots => {}
                    PatchPurpose::BranchFixup => {
                        return Err(format!("{name}: branch {i} rewritten at frame finalization"))
                    }
                }
            }
            funcs += 1;
        }
    }
    Ok(format!("{funcs} functions, {frame_words} finalized words, all inside frame patch points"))
}

// ---- allocation policy -------------------------------------------------

fn events(m: &Module) -> Vec<Vec<Event>> {
    let opts = CompileOptions { record_events: true, audit: true, ..Default::default() };
    compile(m, &opts).into_iter().map(|f| f.events).collect()
}

fn allocation() -> Outcome {
    let m = parse_module(
        "func @f() -> i64 { entry: %a = add 1, 2 %b = add 3, 4 %c = add 5, 6 %d = add %a, %b %e = add %d, %c ret %e }",
    )
    .unwrap();
    let allocs: Vec<u8> = events(&m)[0]
        .iter()
        .filter_map(|e| match e {
            Event::Alloc { reg, .. } => Some(reg.id()),
            _ => None,
        })
        .collect();
    ensure(allocs == [0, 1, 2, 0, 0], || format!("lowest-free order {allocs:?}"))?;

    let mut src = String::from("func @f(%a: i64) -> i64 {\nentry:\n");
    for i in 0..24 {
        src += &format!("  %v{i} = mul %a, {}\n", i + 3);
    }
    src += "  %s0 = add %v0, 1\n";
    for i in 1..24 {
        src += &format!("  %s{i} = add %s{}, %v{i}\n", i - 1);
    }
    src += "  ret %s23\n}\n";
    let evicted: Vec<u8> = events(&parse_module(&src).unwrap())[0]
        .iter()
        .filter_map(|e| match e {
            Event::Evict { reg, .. } => Some(reg.id()),
            _ => None,
        })
        .collect();
    let wraps = evicted.windows(2).filter(|w| w[1] <= w[0]).count();
    ensure(evicted.len() >= 10 && wraps * 8 <= evicted.len(), || {
        format!("eviction order {evicted:?}")
    })?;

    let mut modules: Vec<Module> = corpus().into_iter().map(|c| c.1).collect();
    modules.extend(fuzz_modules(200));
    let (mut pinned, mut joins) = (0, 0);
    for m in &modules {
        for ev in events(m) {
            let mut fixed: HashMap<Reg, u32> = HashMap::new();
            for e in &ev {
                match e {
                    Event::Fix { reg, v, .. } => {
                        fixed.insert(*reg, *v);
                        pinned += 1;
                    }
                    Event::Unfix { reg, .. } => {
                        fixed.remove(reg);
                    }
                    Event::Evict { reg, .. } | Event::Scratch { reg } if fixed.contains_key(reg) => {
                        return Err(format!("fixed {reg} taken: {e}"));
                    }
                    Event::Alloc { reg, v, .. } if fixed.get(reg).is_some_and(|f| f != v) => {
                        return Err(format!("fixed {reg} reassigned: {e}"));
                    }
                    Event::Block { multi_pred: true, carried, unplaced, index } => {
                        joins += 1;
                        ensure(!carried && unplaced.is_empty(), || {
                            format!("join block {index} entered with register state")
                        })?;
                    }
                    _ => {}
                }
            }
        }
    }
    ensure(pinned > 0, || "no value was ever pinned".into())?;
    Ok(format!(
        "lowest-free {allocs:?}, {} round-robin evictions, {pinned} pinned values untouched, {joins} join blocks start in memory",
        evicted.len()
    ))
}

// ---- fusion and folding ------------------------------------------------

fn listing(name: &str, fold: bool) -> Vec<String> {
    let (_, m) = corpus().into_iter().find(|c| c.0.name.starts_with(name)).unwrap();
    let f = compile(&m, &CompileOptions { fold, ..Default::default() }).pop().unwrap();
    disassemble(&f.code)
        .unwrap()
        .lines()
        .map(|l| l.split_once(": ").map_or(l, |x| x.1).to_string())
        .collect()
}

fn count(l: &[String], prefix: &str) -> usize {
    l.iter().filter(|i| i.starts_with(prefix)).count()
}

fn folding() -> Outcome {
    let fuse = listing("fuse", true);
    ensure(
        count(&fuse, "cmp ") == 1 && count(&fuse, "set") == 0 && count(&fuse, "b") == 1,
        || format!("fuse: {fuse:?}"),
    )?;
    let addr = listing("addrfold", true);
    let loads: Vec<_> = addr.iter().filter(|i| i.starts_with("ld ")).collect();
    ensure(loads.len() == 1 && loads[0].contains("[fp - "), || format!("addrfold: {addr:?}"))?;
    let add = listing("addimm", true);
    ensure(count(&add, "addi r") == 1 && count(&add, "movi") == 0, || format!("addimm: {add:?}"))?;

    let mut differ = 0;
    let cases = corpus();
    for (c, m) in &cases {
        let mut sizes = vec![];
        let mut results = vec![];
        for fold in [true, false] {
            let opts = CompileOptions { fold, ..Default::default() };
            sizes.push(compile(m, &opts).iter().map(|f| f.code.len()).sum::<usize>());
            let cc = Compiled::new(m, &opts, SnippetSet::builtin()).map_err(|e| e.to_string())?;
            results.push(c.runs.iter().map(|r| cc.run("main", &r.0)).collect::<Vec<_>>());
        }
        ensure(results[0] == results[1], || format!("{}: folding changed results", c.name))?;
        differ += (sizes[0] != sizes[1]) as usize;
    }
    ensure(differ > 0, || "folding never changed code".into())?;
    Ok(format!(
        "goldens hold; folding changes code in {differ}/{} programs, results in none",
        cases.len()
    ))
}

// ---- parallel moves ----------------------------------------------------

fn parallel_moves() -> Outcome {
    let mut checked = 0;
    for n in 1..=4u8 {
        let regs: Vec<Loc> = (0..n).map(|i| Loc::Reg(Reg::new(i))).collect();
        let temp = Reg::new(n);
        let base = n as u32 + 1;
        for code in 0..base.pow(n as u32) {
            // Destination d reads nothing (0) or register s - 1.
            let mut moves = vec![];
            let mut c = code;
            let mut target = vec![None; n as usize];
            for d in 0..n as usize {
                let s = c % base;
                c /= base;
                if s > 0 {
                    moves.push(Move { dst: regs[d], src: Src::Loc(regs[s as usize - 1]) });
                    target[d] = Some(s as usize - 1);
                }
            }
            let want: Vec<u64> = (0..n as usize).map(|d| target[d].unwrap_or(d) as u64).collect();
            let real_cycle = has_cycle(&target);
            for scratch in [Some(temp), None] {
                match sequentialize(&moves, scratch) {
                    Ok(steps) => {
                        let mut st: HashMap<Loc, u64> =
                            regs.iter().enumerate().map(|(i, r)| (*r, i as u64)).collect();
                        for s in &steps {
                            let Src::Loc(from) = s.src else {
                                return Err(format!("{moves:?}: unexpected source"));
                            };
                            let v = st[&from];
                            ensure(regs.contains(&s.dst) || Some(s.dst) == scratch.map(Loc::Reg), || {
                                format!("{moves:?}: write to {:?}", s.dst)
                            })?;
                            st.insert(s.dst, v);
                        }
                        let got: Vec<u64> = regs.iter().map(|r| st[r]).collect();
                        ensure(got == want, || format!("{moves:?} -> {steps:?}: {got:?} != {want:?}"))?;
                        ensure(scratch.is_some() || !real_cycle, || format!("{moves:?}: cycle without scratch"))?;
                    }
                    Err(NeedsTemp) => ensure(scratch.is_none() && real_cycle, || {
                        format!("{moves:?}: refused with {scratch:?}")
                    })?,
                }
                checked += 1;
            }
        }
    }
    let (a, b) = (Loc::Reg(Reg::new(0)), Loc::Reg(Reg::new(1)));
    let swap = sequentialize(
        &[Move { dst: a, src: Src::Loc(b) }, Move { dst: b, src: Src::Loc(a) }],
        Some(Reg::new(2)),
    )
    .map_err(|_| "swap refused".to_string())?;
    ensure(swap.len() == 3, || format!("swap took {} moves", swap.len()))?;
    Ok(format!("{checked} move sets over 1..4 registers, swap in 3 moves"))
}

/// Whether the move graph `dst <- target[dst]` contains a cycle of length
/// at least two.
fn has_cycle(target: &[Option<usize>]) -> bool {
    (0..target.len()).any(|start| {
        let mut at = start;
        for _ in 0..target.len() {
            match target[at] {
                Some(s) if s == at => return false,
                Some(s) => at = s,
                None => return false,
            }
            if at == start {
                return true;
            }
        }
        false
    })
}

// ---- compile-time scaling ----------------------------------------------

fn scaling() -> Outcome {
    let rows = bench::scaling(&[1_000, 100_000]);
    let ratio = bench::ratio(&rows);
    let big = rows[1].time;
    ensure(ratio <= bench::MAX_RATIO, || format!("ratio {ratio:.1}"))?;
    ensure(big <= bench::BUDGET, || format!("10^5 instructions took {big:?}"))?;
    Ok(format!("10^3: {:?}, 10^5: {big:?}, ratio {ratio:.1}", rows[0].time))
}

// ---- footprint ---------------------------------------------------------

fn footprint() -> Outcome {
    let single = size_of::<Assignment>();
    let part = size_of::<PartState>();
    ensure(single <= 16, || format!("Assignment is {single} bytes"))?;
    ensure(part <= 2, || format!("each extra part costs {part} bytes"))?;
    Ok(format!("Assignment {single} bytes, {part} bytes per extra part"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("differential correctness", differential),
        ("liveness soundness", liveness),
        ("single-pass discipline", single_pass),
        ("allocation policy", allocation),
        ("fusion and folding", folding),
        ("parallel-move oracle", parallel_moves),
        ("compile-time scaling", scaling),
        ("assignment footprint", footprint),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let r = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match r {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
