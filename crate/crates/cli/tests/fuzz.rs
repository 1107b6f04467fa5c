use onepass::codegen::{CompileOptions, Fault};
use onepass::ir::{parse_module, validate};
use onepass::snippets::SnippetSet;
use onepass_cli::fuzz;
use onepass_cli::gen::{corpus_hash, FuzzConfig, OpWeights};

fn configs() -> [FuzzConfig; 3] {
    [
        FuzzConfig { seed: 11, ..Default::default() },
        FuzzConfig { seed: 12, irreducible: true, loop_prob: 0.5, ..Default::default() },
        FuzzConfig {
            seed: 13,
            max_blocks: 32,
            max_insts: 14,
            wide_prob: 0.4,
            weights: OpWeights { call: 4, memory: 6, ..Default::default() },
            ..Default::default()
        },
    ]
}

#[test]
fn generated_functions_agree_with_and_without_folding() {
    for cfg in &configs() {
        for fold in [true, false] {
            let opts = CompileOptions { fold, ..Default::default() };
            let r = fuzz::run(cfg, 150, 8, &opts, SnippetSet::builtin());
            assert_eq!(r.runs, 150 * 8);
            if let Some(f) = r.failure {
                panic!("seed {} #{}: {}\n{}", cfg.seed, f.index, f.message, f.reduced);
            }
        }
    }
}

#[test]
fn broken_eviction_is_caught_and_reduced() {
    let opts = CompileOptions { fault: Some(Fault::SkipEvictionSpill), ..Default::default() };
    let cfg = FuzzConfig { seed: 5, ..Default::default() };
    let f = fuzz::run(&cfg, 100, 8, &opts, SnippetSet::builtin())
        .failure
        .expect("skipped spill went unnoticed");
    let reduced = parse_module(&f.reduced).unwrap();
    validate(&reduced).unwrap();
    assert!(f.reduced.len() < f.original.len());
    // The reproducer still fails on its own.
    let mut traps = 0;
    let vectors = onepass_cli::gen::arg_vectors(&cfg, f.index, &reduced, 8);
    assert!(fuzz::check(&reduced, &opts, SnippetSet::builtin(), &vectors, &mut traps).is_some());
}

#[test]
fn hashes_depend_only_on_the_seed() {
    let a = FuzzConfig { seed: 99, ..Default::default() };
    assert_eq!(corpus_hash(&a, 50), corpus_hash(&a, 50));
    let b = FuzzConfig { seed: 100, ..Default::default() };
    assert_ne!(corpus_hash(&a, 50), corpus_hash(&b, 50));
}
