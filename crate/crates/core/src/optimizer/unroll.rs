use super::{FnCtx, PassDiagnostic};
use crate::ir::visit::{assigned_vars, count_stmts, expr_mentions, expr_reads, is_pure_total};
use crate::ir::{BinOp, Block, Expr, Stmt};

/// Iterations of `j*step` starting at 0 that stay below (or above, for
/// negative steps) the offset `span` from the start.
fn trip_count(span: i128, step: i128) -> u128 {
    if step > 0 {
        if span <= 0 {
            0
        } else {
            ((span + step - 1) / step) as u128
        }
    } else if span >= 0 {
        0
    } else {
        ((-span + -step - 1) / -step) as u128
    }
}

/// Offset `c` if `hi` is `lo + c` (in either operand order).
fn symbolic_offset(lo: &Expr, hi: &Expr) -> Option<i64> {
    match hi {
        Expr::Bin {
            op: BinOp::Add,
            lhs,
            rhs,
        } if **lhs == *lo => rhs.as_int(),
        Expr::Bin {
            op: BinOp::Add,
            lhs,
            rhs,
        } if **rhs == *lo => lhs.as_int(),
        _ => None,
    }
}

struct Plan {
    trips: u64,
    /// Literal start, or `None` when the start is symbolic.
    start: Option<i64>,
}

fn plan(var: &str, lo: &Expr, hi: &Expr, step: i64, body: &Block, ctx: &FnCtx) -> Option<Plan> {
    let written = assigned_vars(body);
    if written.contains(var) || expr_mentions(lo, var) {
        return None;
    }
    if let (Some(a), Some(b)) = (lo.as_int(), hi.as_int()) {
        let trips = trip_count(b as i128 - a as i128, step as i128);
        let end = a as i128 + trips as i128 * step as i128;
        if trips > ctx.max_unroll as u128 || end < i64::MIN as i128 || end > i64::MAX as i128 {
            return None;
        }
        return Some(Plan {
            trips: trips as u64,
            start: Some(a),
        });
    }
    // Symbolic start: the bound `lo + c` must mean the same thing on every
    // test, so the start may only read locals the body leaves alone.
    let c = symbolic_offset(lo, hi)?;
    if !is_pure_total(lo) {
        return None;
    }
    let mut reads = std::collections::BTreeSet::new();
    expr_reads(lo, &mut reads);
    if reads
        .iter()
        .any(|r| !ctx.is_local(r) || written.contains(r))
    {
        return None;
    }
    let trips = trip_count(c as i128, step as i128);
    if trips > ctx.max_unroll as u128 {
        return None;
    }
    Some(Plan {
        trips: trips as u64,
        start: None,
    })
}

fn index_expr(lo: &Expr, plan: &Plan, offset: i64) -> Expr {
    match plan.start {
        Some(a) => Expr::int(a.wrapping_add(offset)),
        None if offset == 0 => lo.clone(),
        None => Expr::add(lo.clone(), Expr::int(offset)),
    }
}

fn block(b: Block, ctx: &mut FnCtx, total: &mut usize) -> Block {
    let mut out = Vec::with_capacity(b.len());
    for mut s in b {
        for sub in s.blocks_mut() {
            *sub = block(std::mem::take(sub), ctx, total);
        }
        let Stmt::For {
            var,
            lo,
            hi,
            step,
            body,
        } = &s
        else {
            out.push(s);
            continue;
        };
        let Some(st) = step.as_int().filter(|&v| v != 0) else {
            out.push(s);
            continue;
        };
        let Some(p) = plan(var, lo, hi, st, body, ctx) else {
            out.push(s);
            continue;
        };
        let body_size = count_stmts(body);
        let grown = *total - body_size - 1 + p.trips as usize * (body_size + 1) + 1;
        if grown > ctx.stmt_budget {
            ctx.diagnostics.push(PassDiagnostic {
                pass: super::Pass::LoopUnroll,
                function: ctx.function.clone(),
                message: format!(
                    "loop over `{var}` not unrolled: growth cap of {} statements",
                    ctx.stmt_budget
                ),
            });
            out.push(s);
            continue;
        }
        *total = grown;
        for j in 0..p.trips {
            out.push(Stmt::let_(
                var.clone(),
                index_expr(lo, &p, (j as i64).wrapping_mul(st)),
            ));
            out.extend(body.iter().cloned());
        }
        out.push(Stmt::let_(
            var.clone(),
            index_expr(lo, &p, (p.trips as i64).wrapping_mul(st)),
        ));
    }
    out
}

pub(super) fn run(body: Block, ctx: &mut FnCtx) -> Block {
    let mut total = count_stmts(&body);
    block(body, ctx, &mut total)
}
