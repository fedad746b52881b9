use std::fmt::Write;

use super::{Block, Expr, Function, HandlerModule, Lit, SampleSink, Stmt, ValueKind};

const INDENT: &str = "  ";

fn lit(l: Lit, out: &mut String) {
    match l {
        Lit::Int(v) => write!(out, "{v}").unwrap(),
        Lit::Float(v) if v.is_finite() => write!(out, "{v:?}").unwrap(),
        Lit::Float(v) => write!(out, "(fbits {})", v.to_bits() as i64).unwrap(),
    }
}

fn expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Lit(l) => lit(*l, out),
        Expr::Var(v) => out.push_str(v),
        Expr::Load { array, index } => {
            write!(out, "(load {array} ").unwrap();
            expr(index, out);
            out.push(')');
        }
        Expr::Bin { op, lhs, rhs } => {
            write!(out, "({} ", op.keyword()).unwrap();
            expr(lhs, out);
            out.push(' ');
            expr(rhs, out);
            out.push(')');
        }
        Expr::Cmp { op, lhs, rhs } => {
            write!(out, "({} ", op.keyword()).unwrap();
            expr(lhs, out);
            out.push(' ');
            expr(rhs, out);
            out.push(')');
        }
        Expr::Call { func, args } => {
            write!(out, "(call {func}").unwrap();
            for a in args {
                out.push(' ');
                expr(a, out);
            }
            out.push(')');
        }
        Expr::Spec(s) => {
            let kw = match s.kind {
                ValueKind::Enum(_) => "spec-enum",
                ValueKind::Range { .. } => "spec-range",
                ValueKind::Generic => "spec-generic",
            };
            write!(out, "({kw} {} ", s.label).unwrap();
            expr(&s.expr, out);
            match &s.kind {
                ValueKind::Enum(vs) => vs.iter().for_each(|v| write!(out, " {v}").unwrap()),
                ValueKind::Range { lo, hi } => write!(out, " {lo} {hi}").unwrap(),
                ValueKind::Generic => {}
            }
            out.push(')');
        }
    }
}

/// Single-line canonical text of an expression.
pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr(e, &mut s);
    s
}

/// Accumulates lines; closing parens attach to the last emitted line.
struct Lines {
    lines: Vec<String>,
}

impl Lines {
    fn push(&mut self, depth: usize, text: String) {
        self.lines.push(format!("{}{}", INDENT.repeat(depth), text));
    }

    fn close(&mut self) {
        self.lines.last_mut().expect("close without open").push(')');
    }
}

fn block(b: &Block, depth: usize, out: &mut Lines) {
    for s in b {
        stmt(s, depth, out);
    }
}

fn stmt(s: &Stmt, depth: usize, out: &mut Lines) {
    let line = match s {
        Stmt::Let { name, value } => format!("(let {name} {})", print_expr(value)),
        Stmt::Assign { name, value } => format!("(set {name} {})", print_expr(value)),
        Stmt::Store {
            array,
            index,
            value,
        } => {
            format!(
                "(store {array} {} {})",
                print_expr(index),
                print_expr(value)
            )
        }
        Stmt::Return(e) => format!("(return {})", print_expr(e)),
        Stmt::Expr(e) => format!("(do {})", print_expr(e)),
        Stmt::SpecAssume { label, pred } => format!("(spec-assume {label} {})", print_expr(pred)),
        Stmt::SpecCustom { label, kind } => format!("(spec-custom {label} {kind})"),
        Stmt::Guard { label, pred } => format!("(guard {label} {})", print_expr(pred)),
        Stmt::Assume { label, pred } => format!("(assume {label} {})", print_expr(pred)),
        Stmt::Sample(smp) => {
            let sink = match smp.sink {
                SampleSink::Frequency => "freq".to_string(),
                SampleSink::Pairs => "pairs".to_string(),
                SampleSink::Histogram { lo, hi } => format!("(hist {lo} {hi})"),
            };
            let mut t = format!(
                "(sample {} {} {sink} {}",
                smp.label,
                smp.every_k,
                print_expr(&smp.value)
            );
            if let Some(o) = &smp.output {
                t.push(' ');
                t.push_str(&print_expr(o));
            }
            t.push(')');
            t
        }
        Stmt::If {
            cond,
            then_body,
            else_body,
        } => {
            out.push(depth, format!("(if {}", print_expr(cond)));
            sub_block("then", then_body, depth + 1, out);
            if !else_body.is_empty() {
                sub_block("else", else_body, depth + 1, out);
            }
            out.close();
            return;
        }
        Stmt::For {
            var,
            lo,
            hi,
            step,
            body,
        } => {
            out.push(
                depth,
                format!(
                    "(for {var} {} {} {}",
                    print_expr(lo),
                    print_expr(hi),
                    print_expr(step)
                ),
            );
            block(body, depth + 1, out);
            out.close();
            return;
        }
        Stmt::While { cond, body } => {
            out.push(depth, format!("(while {}", print_expr(cond)));
            block(body, depth + 1, out);
            out.close();
            return;
        }
    };
    out.push(depth, line);
}

fn sub_block(kw: &str, b: &Block, depth: usize, out: &mut Lines) {
    out.push(depth, format!("({kw}"));
    block(b, depth + 1, out);
    out.close();
}

fn function(f: &Function, depth: usize, out: &mut Lines) {
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| format!("{}:{}", p.name, p.ty))
        .collect();
    out.push(
        depth,
        format!("(fn {} ({}) -> {}", f.name, params.join(" "), f.ret),
    );
    block(&f.body, depth + 1, out);
    out.close();
}

/// Canonical text form. `parse_module(&print_module(m)) == m` for every
/// valid module, and printing is idempotent across round trips.
pub fn print_module(m: &HandlerModule) -> String {
    let mut out = Lines {
        lines: vec!["(module".to_string()],
    };
    for e in &m.externs {
        let mut t = format!("(extern {} {}", e.name, e.ty);
        if let Some(n) = e.len {
            write!(t, " {n}").unwrap();
        }
        t.push(')');
        out.push(1, t);
    }
    for f in &m.functions {
        function(f, 1, &mut out);
    }
    out.close();
    let mut s = out.lines.join("\n");
    s.push('\n');
    s
}
