use std::collections::BTreeSet;

use super::FnCtx;
use crate::ir::visit::{assigned_vars, contains_call, expr_reads, walk_block_exprs, walk_stmts};
use crate::ir::{Block, CmpOp, Expr, Lit, Stmt};

/// A predicate known to hold, with the names it reads.
#[derive(Clone)]
struct Fact {
    pred: Expr,
    reads: BTreeSet<String>,
    touches_host: bool,
}

impl Fact {
    fn new(pred: &Expr, ctx: &FnCtx) -> Fact {
        let mut reads = BTreeSet::new();
        expr_reads(pred, &mut reads);
        let mut touches_host = reads.iter().any(|r| !ctx.is_local(r));
        crate::ir::visit::walk_expr(pred, &mut |n| {
            touches_host |= matches!(n, Expr::Load { .. })
        });
        Fact {
            pred: pred.clone(),
            reads,
            touches_host,
        }
    }
}

fn swapped(e: &Expr) -> Option<Expr> {
    match e {
        Expr::Cmp {
            op: op @ (CmpOp::Eq | CmpOp::Ne),
            lhs,
            rhs,
        } => Some(Expr::cmp(*op, (**rhs).clone(), (**lhs).clone())),
        _ => None,
    }
}

fn negated(e: &Expr) -> Option<Expr> {
    match e {
        Expr::Cmp { op, lhs, rhs } => {
            Some(Expr::cmp(op.negate(), (**lhs).clone(), (**rhs).clone()))
        }
        _ => None,
    }
}

/// Decides `cond` from the facts by syntactic match or negation.
fn decide(cond: &Expr, facts: &[Fact]) -> Option<bool> {
    let same = |p: &Expr, q: &Expr| p == q || swapped(p).as_ref() == Some(q);
    for f in facts {
        if same(cond, &f.pred) {
            return Some(true);
        }
        if let Some(n) = negated(cond) {
            if same(&n, &f.pred) {
                return Some(false);
            }
        }
    }
    None
}

/// Everything a block may write: assigned names, stored arrays, and
/// whether it calls out (which can change host state).
struct Writes {
    names: BTreeSet<String>,
    calls: bool,
}

fn writes_of(b: &Block) -> Writes {
    let mut names = assigned_vars(b);
    walk_stmts(b, &mut |s| {
        if let Stmt::Store { array, .. } = s {
            names.insert(array.clone());
        }
    });
    let mut calls = false;
    walk_block_exprs(b, &mut |e| calls |= matches!(e, Expr::Call { .. }));
    Writes { names, calls }
}

fn invalidate(facts: &mut Vec<Fact>, w: &Writes) {
    facts.retain(|f| !(f.reads.iter().any(|r| w.names.contains(r)) || (w.calls && f.touches_host)));
}

fn stmt_writes(s: &Stmt) -> Writes {
    writes_of(&vec![s.clone()])
}

fn literal_truth(e: &Expr) -> Option<bool> {
    match e.as_lit()? {
        Lit::Int(v) => Some(v != 0),
        Lit::Float(_) => None,
    }
}

fn block(b: Block, facts: &mut Vec<Fact>, ctx: &FnCtx) -> Block {
    let mut out = Vec::with_capacity(b.len());
    for s in b {
        match s {
            Stmt::If {
                cond,
                then_body,
                else_body,
            } => {
                let decided = literal_truth(&cond).or_else(|| decide(&cond, facts));
                match decided {
                    Some(taken) => {
                        let chosen = if taken { then_body } else { else_body };
                        // The condition is still evaluated for its traps
                        // unless it is trivially safe.
                        if !crate::ir::visit::is_pure_total(&cond) {
                            invalidate(
                                facts,
                                &Writes {
                                    names: BTreeSet::new(),
                                    calls: contains_call(&cond),
                                },
                            );
                            out.push(Stmt::Expr(cond));
                        }
                        let inner = block(chosen, facts, ctx);
                        out.extend(inner);
                    }
                    None => {
                        let mut ft = facts.clone();
                        let mut fe = facts.clone();
                        let then_body = block(then_body, &mut ft, ctx);
                        let else_body = block(else_body, &mut fe, ctx);
                        let w = Writes {
                            names: writes_of(&then_body)
                                .names
                                .union(&writes_of(&else_body).names)
                                .cloned()
                                .collect(),
                            calls: contains_call(&cond)
                                || writes_of(&then_body).calls
                                || writes_of(&else_body).calls,
                        };
                        invalidate(facts, &w);
                        out.push(Stmt::If {
                            cond,
                            then_body,
                            else_body,
                        });
                    }
                }
            }
            Stmt::While { cond, body } => {
                if literal_truth(&cond) == Some(false) {
                    continue;
                }
                let w = writes_of(&body);
                invalidate(facts, &w);
                let mut inner = facts.clone();
                let body = block(body, &mut inner, ctx);
                out.push(Stmt::While { cond, body });
            }
            Stmt::For {
                var,
                lo,
                hi,
                step,
                body,
            } => {
                if let (Some(a), Some(h), Some(st)) = (lo.as_int(), hi.as_int(), step.as_int()) {
                    if (st > 0 && a >= h) || (st < 0 && a <= h) {
                        // Never entered: only the loop variable assignment remains.
                        facts.retain(|f| !f.reads.contains(&var));
                        out.push(Stmt::Let {
                            name: var,
                            value: Expr::int(a),
                        });
                        continue;
                    }
                }
                let mut w = writes_of(&body);
                w.names.insert(var.clone());
                invalidate(facts, &w);
                let mut inner = facts.clone();
                let body = block(body, &mut inner, ctx);
                out.push(Stmt::For {
                    var,
                    lo,
                    hi,
                    step,
                    body,
                });
            }
            Stmt::Guard { ref pred, .. } | Stmt::Assume { ref pred, .. } => {
                let f = Fact::new(pred, ctx);
                out.push(s);
                facts.push(f);
            }
            s => {
                invalidate(facts, &stmt_writes(&s));
                out.push(s);
            }
        }
    }
    out
}

pub(super) fn run(body: Block, ctx: &FnCtx) -> Block {
    block(body, &mut Vec::new(), ctx)
}
