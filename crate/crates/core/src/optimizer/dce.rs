use std::collections::BTreeSet;

use super::{always_returns, FnCtx};
use crate::ir::visit::{expr_reads, is_pure_total};
use crate::ir::{Block, Expr, Stmt};

type Live = BTreeSet<String>;

fn reads(e: &Expr, live: &mut Live) {
    expr_reads(e, live);
}

/// Drops statements that follow an unconditional return.
fn truncate_unreachable(b: &mut Block) {
    if let Some(i) = b
        .iter()
        .position(|s| always_returns(std::slice::from_ref(s)))
    {
        b.truncate(i + 1);
    }
    for s in b.iter_mut() {
        for sub in s.blocks_mut() {
            truncate_unreachable(sub);
        }
    }
}

fn removable_def(name: &str, value: &Expr, live: &Live, ctx: &FnCtx) -> bool {
    if !ctx.is_local(name) {
        return false;
    }
    if matches!(value, Expr::Var(v) if v == name) {
        return true;
    }
    !live.contains(name) && is_pure_total(value)
}

/// Backward liveness over a block. Returns the rewritten block and the
/// names live on entry.
fn block(b: Block, live_out: &Live, ctx: &FnCtx) -> (Block, Live) {
    let mut live = live_out.clone();
    let mut out: Vec<Stmt> = Vec::with_capacity(b.len());
    for s in b.into_iter().rev() {
        match s {
            Stmt::Let {
                ref name,
                ref value,
            }
            | Stmt::Assign {
                ref name,
                ref value,
            } if removable_def(name, value, &live, ctx) => {}
            Stmt::Let {
                ref name,
                ref value,
            }
            | Stmt::Assign {
                ref name,
                ref value,
            } => {
                if ctx.is_local(name) {
                    live.remove(name);
                }
                reads(value, &mut live);
                out.push(s);
            }
            Stmt::Return(ref e) => {
                live.clear();
                reads(e, &mut live);
                out.push(s);
            }
            Stmt::Expr(ref e) if is_pure_total(e) => {}
            Stmt::If {
                cond,
                then_body,
                else_body,
            } => {
                let (t, lt) = block(then_body, &live, ctx);
                let (e, le) = block(else_body, &live, ctx);
                if t.is_empty() && e.is_empty() && is_pure_total(&cond) {
                    continue;
                }
                live = lt.union(&le).cloned().collect();
                reads(&cond, &mut live);
                out.push(Stmt::If {
                    cond,
                    then_body: t,
                    else_body: e,
                });
            }
            Stmt::For {
                var,
                lo,
                hi,
                step,
                body,
            } => {
                let mut head = live.clone();
                head.insert(var.clone());
                reads(&hi, &mut head);
                reads(&step, &mut head);
                let body = loop {
                    let (nb, lb) = block(body.clone(), &head, ctx);
                    let next: Live = head.union(&lb).cloned().collect();
                    if next == head {
                        break nb;
                    }
                    head = next;
                };
                live = head;
                live.remove(&var);
                reads(&lo, &mut live);
                out.push(Stmt::For {
                    var,
                    lo,
                    hi,
                    step,
                    body,
                });
            }
            Stmt::While { cond, body } => {
                let mut head = live.clone();
                reads(&cond, &mut head);
                let body = loop {
                    let (nb, lb) = block(body.clone(), &head, ctx);
                    let next: Live = head.union(&lb).cloned().collect();
                    if next == head {
                        break nb;
                    }
                    head = next;
                };
                live = head;
                out.push(Stmt::While { cond, body });
            }
            s => {
                for e in s.exprs() {
                    reads(e, &mut live);
                }
                out.push(s);
            }
        }
    }
    out.reverse();
    (out, live)
}

pub(super) fn run(mut body: Block, ctx: &FnCtx) -> Block {
    truncate_unreachable(&mut body);
    block(body, &Live::new(), ctx).0
}
