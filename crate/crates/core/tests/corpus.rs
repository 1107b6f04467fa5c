use std::path::Path;

use onepass::adapter::seed::compile_module;
use onepass::codegen::CompileOptions;
use onepass::diff::{load_corpus, Compiled, CorpusCase, Expect};
use onepass::ir::{interpret, parse_module, print_module, validate};
use onepass::snippets::SnippetSet;

fn corpus() -> Vec<CorpusCase> {
    load_corpus(&Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")).unwrap()
}

fn negative() -> Vec<CorpusCase> {
    load_corpus(&Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/invalid")).unwrap()
}

#[test]
fn corpus_is_large_enough() {
    let c = corpus();
    assert!(c.len() >= 25, "{} programs", c.len());
    assert!(c.iter().all(|c| !c.runs.is_empty() && c.expect_error.is_none()));
}

#[test]
fn print_parse_round_trip() {
    for c in corpus() {
        let m = parse_module(&c.text).unwrap();
        let again = parse_module(&print_module(&m)).unwrap();
        assert_eq!(m, again, "{}", c.name);
    }
}

#[test]
fn validator_accepts_corpus_and_rejects_negatives() {
    for c in corpus() {
        let m = parse_module(&c.text).unwrap();
        assert!(validate(&m).is_ok(), "{}", c.name);
    }
    let neg = negative();
    assert!(neg.len() >= 10);
    for c in neg {
        let want = c.expect_error.as_deref().expect("negative case names its rule");
        let got = match parse_module(&c.text) {
            Err(e) => e.to_string(),
            Ok(m) => match validate(&m) {
                Err(v) => v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
                Ok(()) => panic!("{} accepted", c.name),
            },
        };
        assert!(got.contains(want), "{}: expected '{want}', got '{got}'", c.name);
    }
}

#[test]
fn interpreter_meets_expectations_deterministically() {
    for c in corpus() {
        let m = parse_module(&c.text).unwrap();
        for (args, exp) in &c.runs {
            let r = interpret(&m, "main", args);
            assert_eq!(r, interpret(&m, "main", args));
            match exp {
                Some(Expect::Value(lo, hi)) => {
                    assert_eq!(r, Ok((*lo, *hi)), "{} {args:?}", c.name)
                }
                Some(Expect::Trap) => assert!(r.is_err(), "{} {args:?}", c.name),
                None => {}
            }
        }
    }
}

#[test]
fn compiled_code_agrees_with_and_without_folding() {
    let mut fewer = 0;
    for c in corpus() {
        let m = parse_module(&c.text).unwrap();
        let mut sizes = vec![];
        let mut results = vec![];
        for fold in [true, false] {
            let opts = CompileOptions {
                fold,
                ..Default::default()
            };
            let cc = Compiled::new(&m, &opts, SnippetSet::builtin())
                .unwrap_or_else(|e| panic!("{}: {e}", c.name));
            let r: Vec<_> = c
                .runs
                .iter()
                .map(|(args, _)| cc.check("main", args).unwrap_or_else(|e| panic!("{}: {e}", c.name)))
                .collect();
            results.push(r);
            let code: usize = compile_module(&m, &opts, SnippetSet::builtin())
                .unwrap()
                .functions
                .iter()
                .map(|f| f.code.len())
                .sum();
            sizes.push(code);
        }
        assert_eq!(results[0], results[1], "{}", c.name);
        assert!(sizes[0] <= sizes[1], "{}: folding grew the code", c.name);
        fewer += (sizes[0] < sizes[1]) as usize;
    }
    assert!(fewer > 0);
}
