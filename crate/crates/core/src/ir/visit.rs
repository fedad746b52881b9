//! Tree walking helpers shared by the validator, specializer and passes.

use std::collections::BTreeSet;

use super::{BinOp, Block, Expr, Stmt};

/// Visits every statement in pre-order, descending into nested blocks.
pub fn walk_stmts<'a>(block: &'a Block, f: &mut dyn FnMut(&'a Stmt)) {
    for s in block {
        f(s);
        for b in s.blocks() {
            walk_stmts(b, f);
        }
    }
}

/// Visits every expression node in pre-order.
pub fn walk_expr<'a>(e: &'a Expr, f: &mut dyn FnMut(&'a Expr)) {
    f(e);
    match e {
        Expr::Lit(_) | Expr::Var(_) => {}
        Expr::Load { index, .. } => walk_expr(index, f),
        Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
            walk_expr(lhs, f);
            walk_expr(rhs, f);
        }
        Expr::Call { args, .. } => args.iter().for_each(|a| walk_expr(a, f)),
        Expr::Spec(s) => walk_expr(&s.expr, f),
    }
}

/// Visits every expression evaluated anywhere inside `block`.
pub fn walk_block_exprs<'a>(block: &'a Block, f: &mut dyn FnMut(&'a Expr)) {
    walk_stmts(block, &mut |s| {
        for e in s.exprs() {
            walk_expr(e, f);
        }
    });
}

pub fn count_stmts(block: &Block) -> usize {
    let mut n = 0;
    walk_stmts(block, &mut |_| n += 1);
    n
}

pub fn contains_call(e: &Expr) -> bool {
    let mut found = false;
    walk_expr(e, &mut |n| found |= matches!(n, Expr::Call { .. }));
    found
}

pub fn contains_spec(e: &Expr) -> bool {
    let mut found = false;
    walk_expr(e, &mut |n| found |= matches!(n, Expr::Spec(_)));
    found
}

/// Names read by an expression (variables and array names).
pub fn expr_reads(e: &Expr, out: &mut BTreeSet<String>) {
    walk_expr(e, &mut |n| match n {
        Expr::Var(v) => {
            out.insert(v.clone());
        }
        Expr::Load { array, .. } => {
            out.insert(array.clone());
        }
        _ => {}
    });
}

pub fn expr_mentions(e: &Expr, name: &str) -> bool {
    let mut found = false;
    walk_expr(e, &mut |n| match n {
        Expr::Var(v) => found |= v == name,
        Expr::Load { array, .. } => found |= array == name,
        _ => {}
    });
    found
}

/// Scalar names written anywhere inside a block (lets, assigns, loop vars).
pub fn assigned_vars(block: &Block) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk_stmts(block, &mut |s| match s {
        Stmt::Let { name, .. } | Stmt::Assign { name, .. } => {
            out.insert(name.clone());
        }
        Stmt::For { var, .. } => {
            out.insert(var.clone());
        }
        _ => {}
    });
    out
}

/// True if the block can modify host state: stores, calls, or assignments
/// to the given extern scalars.
pub fn block_has_effects(block: &Block, is_extern: &dyn Fn(&str) -> bool) -> bool {
    let mut found = false;
    walk_stmts(block, &mut |s| match s {
        Stmt::Store { .. } => found = true,
        Stmt::Assign { name, .. } | Stmt::Let { name, .. } if is_extern(name) => found = true,
        _ => {}
    });
    walk_block_exprs(block, &mut |e| found |= matches!(e, Expr::Call { .. }));
    found
}

/// An expression whose evaluation can neither trap nor have effects, so it
/// may be dropped or duplicated freely. Loads are excluded (bounds traps),
/// as are calls and division by anything but a nonzero literal.
pub fn is_pure_total(e: &Expr) -> bool {
    match e {
        Expr::Lit(_) | Expr::Var(_) => true,
        Expr::Load { .. } | Expr::Call { .. } | Expr::Spec(_) => false,
        Expr::Bin { op, lhs, rhs } => {
            let divisor_ok = match op {
                BinOp::Div | BinOp::Mod => match rhs.as_lit() {
                    Some(super::Lit::Int(v)) => v != 0,
                    Some(super::Lit::Float(v)) => v != 0.0,
                    None => false,
                },
                _ => true,
            };
            divisor_ok && is_pure_total(lhs) && is_pure_total(rhs)
        }
        Expr::Cmp { lhs, rhs, .. } => is_pure_total(lhs) && is_pure_total(rhs),
    }
}

/// Rewrites expressions bottom-up: children first, then `f` on the node.
pub fn rewrite_expr(e: &mut Expr, f: &mut dyn FnMut(&mut Expr)) {
    match e {
        Expr::Lit(_) | Expr::Var(_) => {}
        Expr::Load { index, .. } => rewrite_expr(index, f),
        Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
            rewrite_expr(lhs, f);
            rewrite_expr(rhs, f);
        }
        Expr::Call { args, .. } => args.iter_mut().for_each(|a| rewrite_expr(a, f)),
        Expr::Spec(s) => rewrite_expr(&mut s.expr, f),
    }
    f(e);
}

/// Replaces every read of variable `name` with `with`.
pub fn substitute_var(e: &mut Expr, name: &str, with: &Expr) {
    rewrite_expr(e, &mut |n| {
        if matches!(n, Expr::Var(v) if v == name) {
            *n = with.clone();
        }
    });
}
