//! Canonical pretty-printer. Re-parsing the output yields an equal forest.

use std::fmt::Write;

use crate::ast::*;

pub fn print_unit(unit: &ParsedUnit) -> String {
    let mut out = String::new();
    for imp in &unit.imports {
        let _ = writeln!(out, "import {}", quote(imp));
    }
    for (i, m) in unit.models.iter().enumerate() {
        if i > 0 || !unit.imports.is_empty() {
            out.push('\n');
        }
        print_model(&mut out, m);
    }
    out
}

pub fn print_model(out: &mut String, m: &ModelDecl) {
    let _ = write!(out, "model {}", m.name);
    if let Some(base) = &m.base {
        let _ = write!(out, " extends {base}");
    }
    if !m.traits.is_empty() {
        let _ = write!(out, " with {}", m.traits.join(", "));
    }
    out.push_str(":\n");
    for f in &m.fields {
        let _ = writeln!(out, "  {}: {} = {}", f.name, f.ty, expr(&f.value));
    }
    for mate in &m.mates {
        let _ = write!(out, "  mate {}({}, {}", mate.kind.as_str(), frame(&mate.frame_a), frame(&mate.frame_b));
        for (name, value) in &mate.options {
            let _ = write!(out, ", {name}={}", expr(value));
        }
        out.push_str(")\n");
    }
    for s in &m.signals {
        let dir = match s.direction {
            SignalDirection::Input => "input",
            SignalDirection::Output => "output",
        };
        let _ = writeln!(out, "  {dir} {}: {}", s.name, s.ty);
    }
}

fn frame(f: &FrameRef) -> String {
    let mut s = f.body.join(".");
    if let Some(p) = &f.position {
        let _ = write!(s, " @ {}", atom(p));
    }
    if let Some(r) = &f.rotation {
        let _ = write!(s, " rot {}", atom(r));
    }
    s
}

fn quote(s: &str) -> String {
    let mut q = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            '\t' => q.push_str("\\t"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}

fn number(v: f64) -> String {
    let s = format!("{v:?}");
    s
}

fn prec(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        ExprKind::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        ExprKind::Neg(_) => 3,
        _ => 4,
    }
}

/// Operand of `@`/`rot`: must parse as a unary expression.
fn atom(e: &Expr) -> String {
    if prec(e) >= 3 {
        expr(e)
    } else {
        format!("({})", expr(e))
    }
}

pub fn expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Number(v) => number(*v),
        ExprKind::Str(s) => quote(s),
        ExprKind::Bool(b) => b.to_string(),
        ExprKind::Ref(path) => path.join("."),
        ExprKind::Neg(inner) => {
            if prec(inner) >= 3 {
                format!("-{}", expr(inner))
            } else {
                format!("-({})", expr(inner))
            }
        }
        ExprKind::Binary(op, l, r) => {
            let p = prec(e);
            let ls = if prec(l) < p { format!("({})", expr(l)) } else { expr(l) };
            let rs = if prec(r) <= p && prec(r) < 3 { format!("({})", expr(r)) } else { expr(r) };
            format!("{ls} {} {rs}", op.symbol())
        }
        ExprKind::Tuple(items) => {
            let parts: Vec<String> = items.iter().map(expr).collect();
            format!("({})", parts.join(", "))
        }
        ExprKind::Call(name, args) => {
            let parts: Vec<String> = args
                .iter()
                .map(|a| match &a.name {
                    Some(n) => format!("{n} = {}", expr(&a.value)),
                    None => expr(&a.value),
                })
                .collect();
            format!("{name}({})", parts.join(", "))
        }
    }
}
