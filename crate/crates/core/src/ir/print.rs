use std::fmt::Write;

use super::{Function, Inst, Module, Opcode, Operand, Type};

fn operand(f: &Function, op: &Operand, ty: Type, out: &mut String) {
    match op {
        Operand::Value(v) => {
            let _ = write!(out, "%{}", f.value_name(*v));
        }
        Operand::Const(c) => match ty {
            Type::I64 => {
                let _ = write!(out, "{}", c.lo as i64);
            }
            Type::I128 => {
                let _ = write!(out, "i128({:#x}, {:#x})", c.lo, c.hi);
            }
        },
    }
}

fn write_inst(m: &Module, f: &Function, inst: &Inst, out: &mut String) {
    if let Some(r) = inst.result {
        let _ = write!(out, "%{} = ", f.value_name(r));
    }
    out.push_str(inst.op.name());
    let label = |i: usize| f.blocks[inst.targets[i].0 as usize].label.as_str();
    match inst.op {
        Opcode::Call => {
            let callee = &m.functions[inst.callee.expect("call has callee").0 as usize];
            let _ = write!(out, " @{}(", callee.name);
            for (i, (a, p)) in inst.args.iter().zip(&callee.params).enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                operand(f, a, callee.value_type(*p), out);
            }
            out.push(')');
        }
        Opcode::Br => {
            let _ = write!(out, " {}", label(0));
        }
        Opcode::CondBr => {
            out.push(' ');
            operand(f, &inst.args[0], Type::I64, out);
            let _ = write!(out, ", {}, {}", label(0), label(1));
        }
        Opcode::Ret => {
            if let (Some(a), Some(t)) = (inst.args.first(), f.ret) {
                out.push(' ');
                operand(f, a, t, out);
            }
        }
        op => {
            let wide = matches!(op, Opcode::Trunc | Opcode::Add128);
            for (i, a) in inst.args.iter().enumerate() {
                out.push_str(if i == 0 { " " } else { ", " });
                operand(f, a, if wide { Type::I128 } else { Type::I64 }, out);
            }
        }
    }
}

/// One instruction in `.tir` syntax, without indentation.
pub fn print_inst(m: &Module, f: &Function, inst: &Inst) -> String {
    let mut s = String::new();
    write_inst(m, f, inst, &mut s);
    s
}

fn print_function(m: &Module, f: &Function, out: &mut String) {
    let _ = write!(out, "func @{}(", f.name);
    for (i, p) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "%{}: {}", f.value_name(*p), f.value_type(*p));
    }
    match f.ret {
        Some(t) => {
            let _ = writeln!(out, ") -> {t} {{");
        }
        None => out.push_str(") -> void {\n"),
    }
    for sv in &f.stack_vars {
        let _ = writeln!(out, "  stack {} align {}", sv.size, sv.align);
    }
    for b in &f.blocks {
        let _ = writeln!(out, "{}:", b.label);
        for phi in &b.phis {
            let _ = write!(out, "  %{} = phi {}", f.value_name(phi.result), phi.ty);
            for (i, (pred, v)) in phi.incoming.iter().enumerate() {
                out.push_str(if i == 0 { " [" } else { ", [" });
                operand(f, v, phi.ty, out);
                let _ = write!(out, ", {}]", f.blocks[pred.0 as usize].label);
            }
            out.push('\n');
        }
        for inst in &b.insts {
            out.push_str("  ");
            write_inst(m, f, inst, out);
            out.push('\n');
        }
    }
    out.push_str("}\n");
}

/// Prints a module in the canonical `.tir` text form.
pub fn print_module(m: &Module) -> String {
    let mut out = String::new();
    for (i, f) in m.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_function(m, f, &mut out);
    }
    out
}
