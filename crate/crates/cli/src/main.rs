use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use onepass::adapter::seed::{compile_module, FunctionStats, SeedAdapter};
use onepass::adapter::{FuncRef, IrAdapter};
use onepass::analysis::analyze;
use onepass::codegen::{CompileOptions, Fault};
use onepass::ir::{interpret, parse_module, validate, Module};
use onepass::snippets::SnippetSet;
use onepass::visa::{disassemble, Image};
use onepass::vm::{Program, RunOptions, Vm};
use onepass_cli::{bench, fuzz, gen};

/// Overrides the built-in snippet file.
const SNIPPETS_ENV: &str = "TPDEMINI_SNIPPETS";

#[derive(Parser)]
#[command(name = "onepass", version, about = "Single-pass SSA back-end for a small virtual ISA")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a .tir module into a .tvo image.
    Compile(CompileArgs),
    /// Run a function of a .tir module or .tvo image on the VM.
    Run(RunArgs),
    /// Disassemble a .tvo image or the compiled form of a .tir module.
    Disasm(DisasmArgs),
    /// Differential fuzzing against the interpreter.
    Fuzz(FuzzArgs),
    /// Compile-time scaling on straight-line chains.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CodegenFlags {
    /// Disable immediate/address folding and compare/address fusion.
    #[arg(long)]
    no_fold: bool,
}

impl CodegenFlags {
    fn options(&self) -> CompileOptions {
        CompileOptions {
            fold: !self.no_fold,
            ..CompileOptions::default()
        }
    }
}

#[derive(Args)]
struct CompileArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Print per-function statistics.
    #[arg(long)]
    stats: bool,
    /// Print the analysis results of every function.
    #[arg(long)]
    dump_analysis: bool,
    /// Print the register allocation events of every function.
    #[arg(long)]
    dump_session_events: bool,
    #[command(flatten)]
    codegen: CodegenFlags,
}

#[derive(Args)]
struct RunArgs {
    input: PathBuf,
    /// Function to call.
    #[arg(short, long, default_value = "main")]
    func: String,
    /// Argument slots; i128 parameters take two (lo, hi).
    #[arg(allow_hyphen_values = true)]
    args: Vec<String>,
    /// Print every executed instruction to standard error.
    #[arg(long)]
    trace: bool,
    /// Also run the interpreter and compare (.tir input only).
    #[arg(long)]
    check: bool,
    #[command(flatten)]
    codegen: CodegenFlags,
}

#[derive(Args)]
struct DisasmArgs {
    input: PathBuf,
    #[command(flatten)]
    codegen: CodegenFlags,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of generated functions.
    #[arg(short = 'n', long, default_value_t = 100)]
    count: u64,
    /// Argument vectors per function.
    #[arg(long, default_value_t = 8)]
    vectors: usize,
    #[arg(long, default_value_t = 24)]
    max_blocks: usize,
    #[arg(long, default_value_t = 8)]
    max_insts: usize,
    #[arg(long, default_value_t = 0.3)]
    loop_prob: f64,
    #[arg(long, default_value_t = 0.15)]
    wide_prob: f64,
    /// Add side entries into loop bodies.
    #[arg(long)]
    irreducible: bool,
    /// Test hook: compile with evictions that skip the spill store.
    #[arg(long)]
    broken_eviction: bool,
    /// Where to write the reduced reproducer.
    #[arg(long, default_value = "fuzz-repro.tir")]
    repro: PathBuf,
    /// Print a hash of the generated corpus and exit.
    #[arg(long)]
    hash: bool,
    #[command(flatten)]
    codegen: CodegenFlags,
}

#[derive(Args)]
struct BenchArgs {
    /// Chain lengths to compile.
    #[arg(long, value_delimiter = ',', default_values_t = bench::SIZES)]
    sizes: Vec<usize>,
}

fn snippets() -> Result<SnippetSet> {
    match std::env::var_os(SNIPPETS_ENV) {
        Some(path) => {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {}", Path::new(&path).display()))?;
            SnippetSet::parse(&text).map_err(|e| anyhow!("{}: {e}", Path::new(&path).display()))
        }
        None => Ok(SnippetSet::builtin().clone()),
    }
}

fn load_module(path: &Path) -> Result<Module> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m = parse_module(&text).map_err(|e| anyhow!("{}:{e}", path.display()))?;
    if let Err(vs) = validate(&m) {
        let first = &vs[0];
        bail!("{}: {first}", path.display());
    }
    Ok(m)
}

fn parse_int(s: &str) -> Result<u64> {
    onepass::diff::parse_int(s).ok_or_else(|| anyhow!("bad integer argument '{s}'"))
}

fn is_image(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "tvo")
}

/// The image for `path`: loaded as is, or compiled from a module.
fn image_for(path: &Path, opts: &CompileOptions) -> Result<(Image, Option<Module>)> {
    if is_image(path) {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let image = Image::from_bytes(&bytes).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        return Ok((image, None));
    }
    let m = load_module(path)?;
    let cm = compile_module(&m, opts, &snippets()?).map_err(|e| anyhow!("{e}"))?;
    Ok((cm.image, Some(m)))
}

fn cmd_compile(a: CompileArgs) -> Result<()> {
    let m = load_module(&a.input)?;
    let mut out = io::stdout().lock();
    if a.dump_analysis {
        let mut ad = SeedAdapter::new(&m);
        for i in 0..ad.func_count() {
            ad.prepare(FuncRef(i));
            writeln!(out, "@{}:", ad.func_name(FuncRef(i)))?;
            write!(out, "{}", analyze(&mut ad).dump())?;
            ad.finalize();
        }
    }
    let opts = CompileOptions {
        record_events: a.dump_session_events,
        ..a.codegen.options()
    };
    let cm = compile_module(&m, &opts, &snippets()?).map_err(|e| anyhow!("{e}"))?;
    if a.dump_session_events {
        for f in &cm.functions {
            writeln!(out, "@{}:", f.name)?;
            for e in &f.events {
                writeln!(out, "  {e}")?;
            }
        }
    }
    if a.stats {
        writeln!(
            out,
            "{:<16} {:>7} {:>10} {:>6} {:>7} {:>8} {:>10} {:>12}",
            "function", "insts", "code-bytes", "frame", "spills", "reloads", "evictions", "compile-ns"
        )?;
        for f in &cm.functions {
            let s = FunctionStats::of(f);
            writeln!(
                out,
                "{:<16} {:>7} {:>10} {:>6} {:>7} {:>8} {:>10} {:>12}",
                s.name,
                s.ir_insts,
                f.code.len(),
                s.frame_size,
                s.spills,
                s.reloads,
                s.evictions,
                s.compile_nanos
            )?;
        }
    }
    let output = a.output.unwrap_or_else(|| a.input.with_extension("tvo"));
    fs::write(&output, cm.image.to_bytes())
        .with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let opts = a.codegen.options();
    let (image, module) = image_for(&a.input, &opts)?;
    let args: Vec<u64> = a.args.iter().map(|s| parse_int(s)).collect::<Result<_>>()?;
    let program = Program::from_image(image).map_err(|e| anyhow!("{e}"))?;
    let mut stderr = io::stderr().lock();
    let mut vm = Vm::new(&program, RunOptions::default());
    if a.trace {
        vm = vm.with_trace(&mut stderr);
    }
    let r = vm.run(&a.func, &args).map_err(|t| anyhow!("{t}"))?;
    let mut out = io::stdout().lock();
    let wide = module
        .as_ref()
        .and_then(|m| m.function(&a.func))
        .is_some_and(|(_, f)| f.ret == Some(onepass::ir::Type::I128));
    if wide {
        writeln!(out, "{} {}", r.lo, r.hi)?;
    } else {
        writeln!(out, "{}", r.lo)?;
    }
    if a.check {
        let m = module.ok_or_else(|| anyhow!("--check needs a .tir input"))?;
        let (lo, hi) = interpret(&m, &a.func, &args).map_err(|t| anyhow!("interpreter: {t}"))?;
        if lo != r.lo || (wide && hi != r.hi) {
            bail!("interpreter returned {lo} {hi}, compiled code {} {}", r.lo, r.hi);
        }
    }
    Ok(())
}

fn cmd_disasm(a: DisasmArgs) -> Result<()> {
    let (image, _) = image_for(&a.input, &a.codegen.options())?;
    let mut out = io::stdout().lock();
    for f in &image.functions {
        writeln!(out, "@{}: ; frame {}", f.name, f.frame_size)?;
        write!(out, "{}", disassemble(&f.code).map_err(|e| anyhow!("@{}: {e}", f.name))?)?;
    }
    Ok(())
}

fn cmd_fuzz(a: FuzzArgs) -> Result<()> {
    let cfg = gen::FuzzConfig {
        seed: a.seed,
        max_blocks: a.max_blocks,
        max_insts: a.max_insts,
        weights: gen::OpWeights::default(),
        loop_prob: a.loop_prob,
        wide_prob: a.wide_prob,
        irreducible: a.irreducible,
    };
    if a.hash {
        println!("{:016x}", gen::corpus_hash(&cfg, a.count));
        return Ok(());
    }
    let opts = CompileOptions {
        fault: a.broken_eviction.then_some(Fault::SkipEvictionSpill),
        ..a.codegen.options()
    };
    let r = fuzz::run(&cfg, a.count, a.vectors, &opts, &snippets()?);
    println!(
        "functions: {}  runs: {}  trapping runs: {}",
        r.functions, r.runs, r.traps
    );
    match r.failure {
        None => {
            println!("divergences: 0");
            Ok(())
        }
        Some(f) => {
            fs::write(&a.repro, &f.reduced)
                .with_context(|| format!("writing {}", a.repro.display()))?;
            bail!(
                "divergence in function #{}: {} (reproducer: {})",
                f.index,
                f.message.lines().next().unwrap_or(""),
                a.repro.display()
            )
        }
    }
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    if a.sizes.is_empty() {
        bail!("no sizes given");
    }
    let rows = bench::scaling(&a.sizes);
    println!("{:>8} {:>12} {:>10}", "insts", "time-us", "ns/inst");
    for r in &rows {
        println!(
            "{:>8} {:>12.1} {:>10.1}",
            r.insts,
            r.time.as_secs_f64() * 1e6,
            r.time.as_nanos() as f64 / r.insts as f64
        );
    }
    let ratio = bench::ratio(&rows);
    println!("ratio last/first: {ratio:.1}");
    let last = rows.last().unwrap();
    if a.sizes == bench::SIZES {
        if ratio > bench::MAX_RATIO {
            bail!("scaling ratio {ratio:.1} exceeds {}", bench::MAX_RATIO);
        }
        if last.time > bench::BUDGET {
            bail!("{} instructions took {:?}", last.insts, last.time);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Compile(a) => cmd_compile(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Disasm(a) => cmd_disasm(a),
        Cmd::Fuzz(a) => cmd_fuzz(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
