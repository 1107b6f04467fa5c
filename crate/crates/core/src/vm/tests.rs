use super::*;
use crate::visa::{parse_inst, ImageFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn asm(funcs: &[(&str, &str)]) -> Program {
    let image = Image {
        functions: funcs
            .iter()
            .map(|(name, src)| ImageFunction {
                name: name.to_string(),
                code: src
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .flat_map(|l| parse_inst(l).unwrap().encode().unwrap())
                    .collect(),
                frame_size: 0,
            })
            .collect(),
    };
    Program::from_image(image).unwrap()
}

#[test]
fn identity() {
    let p = asm(&[("id", "ret")]);
    assert_eq!(run(&p, "id", &[42]).unwrap().lo, 42);
}

#[test]
fn divmod_by_zero_traps() {
    let p = asm(&[("d", "divmod r1\nret")]);
    assert_eq!(run(&p, "d", &[5, 0]), Err(Trap::DivByZero));
    let r = run(&p, "d", &[17, 5]).unwrap();
    assert_eq!((r.lo, r.hi), (3, 2));
}

#[test]
fn i128_add_carries() {
    // (r0,r1) + (r2,r3)
    let p = asm(&[("add128", "add r0, r2\nadc r1, r3\nret")]);
    let r = run(&p, "add128", &[u64::MAX, 0, 1, 0]).unwrap();
    assert_eq!((r.lo, r.hi), (0, 1));
}

#[test]
fn calls_and_stack() {
    let p = asm(&[
        ("main", "push r8\nmovi r8, 5\ncall 1\nadd r0, r8\npop r8\nret"),
        ("ten", "movi r0, 10\nret"),
    ]);
    assert_eq!(run(&p, "main", &[]).unwrap().lo, 15);
}

#[test]
fn memory_bounds() {
    let p = asm(&[("f", "ld r0, [r0]\nret")]);
    // The top word holds the outermost return address.
    assert_eq!(run(&p, "f", &[DEFAULT_MEMORY as u64 - 16]).unwrap().lo, 0);
    assert_eq!(run(&p, "f", &[DEFAULT_MEMORY as u64 - 7]), Err(Trap::OutOfBounds));
    assert_eq!(run(&p, "f", &[u64::MAX]), Err(Trap::OutOfBounds));
}

#[test]
fn step_limit_and_call_depth() {
    let p = asm(&[("spin", "jmp -1"), ("rec", "call 1\nret")]);
    assert_eq!(run(&p, "spin", &[]), Err(Trap::StepLimit));
    assert_eq!(run(&p, "rec", &[]), Err(Trap::CallDepth));
}

#[test]
fn load_errors() {
    let good = asm(&[("f", "ret")]).image;
    let bytes = good.to_bytes();
    assert!(matches!(
        Program::load(&bytes[..bytes.len() - 3]),
        Err(LoadError::Image(ImageError::Truncated))
    ));
    assert!(matches!(Program::load(b"nope"), Err(LoadError::Image(ImageError::BadMagic))));
    let mut bad = good.clone();
    bad.functions[0].code = Inst::Call { func: 1 }.encode().unwrap().to_vec();
    assert!(matches!(
        Program::from_image(bad),
        Err(LoadError::BadCallIndex { index: 1, count: 1, .. })
    ));
    let mut bad = good;
    bad.functions[0].code = Inst::Jmp { off: 5 }.encode().unwrap().to_vec();
    assert!(matches!(Program::from_image(bad), Err(LoadError::BadBranchTarget { .. })));
}

#[test]
fn trace_lists_executed_instructions() {
    let p = asm(&[("f", "movi r0, 1\nret")]);
    let mut out = Vec::new();
    Vm::new(&p, RunOptions::default()).with_trace(&mut out).run("f", &[]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "f+000: movi r0, 1\nf+001: ret\n");
}

#[test]
fn deterministic_step_count() {
    let p = asm(&[("f", "movi r1, 0\naddi r1, 1\ncmp r1, r0\nbult -3\nmov r0, r1\nret")]);
    let a = run(&p, "f", &[100]).unwrap();
    let b = run(&p, "f", &[100]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lo, 100);
}

#[test]
fn compare_flags_match_integer_comparisons() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let edge = [0, 1, u64::MAX, i64::MAX as u64, i64::MIN as u64];
    for i in 0..10_000 {
        let pick = |rng: &mut ChaCha8Rng| {
            if rng.gen_bool(0.2) {
                edge[rng.gen_range(0..edge.len())]
            } else if i % 2 == 0 {
                rng.gen()
            } else {
                rng.gen_range(0..8)
            }
        };
        let (a, b) = (pick(&mut rng), pick(&mut rng));
        let (_, f) = sub_flags(a, b);
        assert_eq!(f.holds(Cond::Eq), a == b);
        assert_eq!(f.holds(Cond::Ne), a != b);
        assert_eq!(f.holds(Cond::Ult), a < b);
        assert_eq!(f.holds(Cond::Uge), a >= b);
        assert_eq!(f.holds(Cond::Slt), (a as i64) < (b as i64), "{a:#x} {b:#x}");
        assert_eq!(f.holds(Cond::Sge), (a as i64) >= (b as i64));
        let (s, af) = add_flags(a, b, false);
        let wide = a as u128 + b as u128;
        assert_eq!(s, wide as u64);
        assert_eq!(af.cf, wide >> 64 != 0);
        assert_eq!(af.of, (a as i64).checked_add(b as i64).is_none());
    }
}
