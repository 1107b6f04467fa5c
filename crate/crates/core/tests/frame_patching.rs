use std::path::Path;

use onepass::adapter::seed::compile_module;
use onepass::codegen::{CompileOptions, FunctionArtifact};
use onepass::diff::load_corpus;
use onepass::ir::parse_module;
use onepass::snippets::SnippetSet;
use onepass::visa::{PatchPoint, PatchPurpose, WORD};

fn artifacts() -> Vec<(String, FunctionArtifact)> {
    let opts = CompileOptions {
        capture_snapshot: true,
        ..Default::default()
    };
    let mut out = vec![];
    for c in load_corpus(&Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")).unwrap() {
        let m = parse_module(&c.text).unwrap();
        for f in compile_module(&m, &opts, SnippetSet::builtin()).unwrap().functions {
            out.push((format!("{}:{}", c.name, f.name), f));
        }
    }
    out
}

fn region(points: &[PatchPoint], word: u32) -> Option<&PatchPoint> {
    points.iter().find(|p| p.word <= word && word < p.word + p.len)
}

#[test]
fn rewrites_stay_inside_registered_regions() {
    let mut checked = 0;
    for (name, f) in artifacts() {
        for &(word, purpose) in &f.patch_log {
            let p = region(&f.patch_points, word)
                .unwrap_or_else(|| panic!("{name}: word {word} patched outside any region"));
            assert_eq!(p.purpose, purpose, "{name}: word {word}");
            checked += 1;
        }
        let mut words: Vec<u32> = f.patch_log.iter().map(|p| p.0).collect();
        words.sort_unstable();
        let n = words.len();
        words.dedup();
        assert_eq!(words.len(), n, "{name}: a word was patched twice");
    }
    assert!(checked > 0);
}

#[test]
fn frame_finalization_only_touches_frame_size_and_save_slots() {
    let mut saved = 0;
    for (name, f) in artifacts() {
        let before = f.snapshot.as_ref().expect("snapshot requested");
        assert_eq!(before.len(), f.code.len(), "{name}: code grew after finalization");
        for (i, (old, new)) in before.chunks(WORD).zip(f.code.chunks(WORD)).enumerate() {
            if old == new {
                continue;
            }
            let p = region(&f.patch_points, i as u32)
                .unwrap_or_else(|| panic!("{name}: word {i} changed outside any region"));
            match p.purpose {
                PatchPurpose::FrameSize => {
                    // Opcode and register bytes are fixed; only the immediate moves.
                    assert_eq!(old[..4], new[..4], "{name}: word {i}");
                }
                PatchPurpose::SaveSlots | PatchPurpose::RestoreSlots => saved += 1,
                PatchPurpose::BranchFixup => {
                    panic!("{name}: branch at word {i} changed during frame finalization")
                }
            }
        }
        let frame_words = f
            .patch_log
            .iter()
            .filter(|p| p.1 != PatchPurpose::BranchFixup)
            .count();
        let changed = before
            .chunks(WORD)
            .zip(f.code.chunks(WORD))
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, frame_words, "{name}");
    }
    assert!(saved > 0, "no function saved a callee-saved register");
}
