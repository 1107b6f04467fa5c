use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(name)
}

fn onepass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onepass"))
        .args(args)
        .env_remove("TPDEMINI_SNIPPETS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn compile_writes_an_image_that_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sum.tvo");
    let src = corpus("sum.tir");
    let o = onepass(&["compile", src.to_str().unwrap(), "-o", out.to_str().unwrap(), "--stats"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("code-bytes"));
    let o = onepass(&["run", out.to_str().unwrap(), "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "55");
    let o = onepass(&["disasm", out.to_str().unwrap()]);
    assert!(stdout(&o).contains("@main:"));
}

#[test]
fn run_checks_against_the_interpreter() {
    let o = onepass(&["run", corpus("i128_add.tir").to_str().unwrap(), "--check", "-1", "0", "1", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn invalid_input_reports_error_and_exits_one() {
    let o = onepass(&["compile", corpus("invalid/not_dominated.tir").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
    assert!(stderr(&o).contains("use not dominated"));
    let o = onepass(&["run", "/nonexistent.tir"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn dumps_analysis_and_session_events() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.tvo");
    let src = corpus("nested_loops.tir");
    let o = onepass(&[
        "compile",
        src.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--dump-analysis",
        "--dump-session-events",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("@main:"));
    assert!(text.contains("alloc r"), "{text}");
    assert!(text.contains("preds=multi"), "{text}");
}

#[test]
fn snippet_file_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.snip");
    std::fs::write(&bad, "snippet f(a) -> (r) { r = ADD a, a }").unwrap();
    let out = dir.path().join("x.tvo");
    let o = Command::new(env!("CARGO_BIN_EXE_onepass"))
        .args(["compile", corpus("sum.tir").to_str().unwrap(), "-o", out.to_str().unwrap()])
        .env("TPDEMINI_SNIPPETS", &bad)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.snip"), "{}", stderr(&o));
}

#[test]
fn fuzz_finds_no_divergence_and_hashes_are_stable() {
    let o = onepass(&["fuzz", "--seed", "1", "-n", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("divergences: 0"));
    let h1 = stdout(&onepass(&["fuzz", "--seed", "3", "-n", "40", "--hash"]));
    let h2 = stdout(&onepass(&["fuzz", "--seed", "3", "-n", "40", "--hash"]));
    assert_eq!(h1, h2);
    assert_eq!(h1.trim().len(), 16);
}

#[test]
fn broken_eviction_saves_a_reproducer() {
    let dir = tempfile::tempdir().unwrap();
    let repro = dir.path().join("repro.tir");
    let o = onepass(&[
        "fuzz",
        "--seed",
        "5",
        "-n",
        "50",
        "--broken-eviction",
        "--repro",
        repro.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("divergence"), "{}", stderr(&o));
    let text = std::fs::read_to_string(&repro).unwrap();
    assert!(onepass::ir::parse_module(&text).is_ok());
}

#[test]
fn bench_reports_each_size() {
    let o = onepass(&["bench", "--sizes", "100,1000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("ratio"));
    assert_eq!(text.lines().count(), 4);
}
