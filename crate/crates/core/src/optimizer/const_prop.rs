use std::collections::BTreeMap;

use super::{always_returns, FnCtx};
use crate::ir::visit::{assigned_vars, rewrite_expr};
use crate::ir::{eval_binop, eval_cmp, Block, CmpOp, Expr, Lit, Stmt};

type Env = BTreeMap<String, Lit>;

/// Substitutes known constants and folds operations on literals. Anything
/// that would trap is left in place.
pub fn fold_expr(e: &mut Expr, env: &BTreeMap<String, Lit>) {
    rewrite_expr(e, &mut |n| {
        let folded = match n {
            Expr::Var(v) => env.get(v.as_str()).copied(),
            Expr::Bin { op, lhs, rhs } => match (lhs.as_lit(), rhs.as_lit()) {
                (Some(a), Some(b)) => eval_binop(*op, a.value(), b.value())
                    .ok()
                    .and_then(Lit::from_value),
                _ => None,
            },
            Expr::Cmp { op, lhs, rhs } => match (lhs.as_lit(), rhs.as_lit()) {
                (Some(a), Some(b)) => eval_cmp(*op, a.value(), b.value())
                    .ok()
                    .and_then(Lit::from_value),
                _ => None,
            },
            _ => None,
        };
        if let Some(l) = folded {
            *n = Expr::Lit(l);
        }
    });
}

fn kill(env: &mut Env, names: impl IntoIterator<Item = String>) {
    for n in names {
        env.remove(&n);
    }
}

/// Keeps only bindings both environments agree on.
fn join(a: Env, b: &Env) -> Env {
    a.into_iter().filter(|(k, v)| b.get(k) == Some(v)).collect()
}

fn learn_guard(env: &mut Env, pred: &Expr, ctx: &FnCtx) {
    if let Expr::Cmp {
        op: CmpOp::Eq,
        lhs,
        rhs,
    } = pred
    {
        let pair = match (&**lhs, &**rhs) {
            (Expr::Var(v), Expr::Lit(l @ Lit::Int(_)))
            | (Expr::Lit(l @ Lit::Int(_)), Expr::Var(v)) => Some((v, *l)),
            _ => None,
        };
        if let Some((v, l)) = pair {
            if ctx.is_local(v) {
                env.insert(v.clone(), l);
            }
        }
    }
}

fn block(b: Block, env: &mut Env, ctx: &FnCtx) -> Block {
    let mut out = Vec::with_capacity(b.len());
    for mut s in b {
        match &mut s {
            Stmt::Let { name, value } | Stmt::Assign { name, value } => {
                fold_expr(value, env);
                match value.as_lit() {
                    Some(l) if ctx.is_local(name) => {
                        env.insert(name.clone(), l);
                    }
                    _ => {
                        env.remove(name.as_str());
                    }
                }
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
            } => {
                fold_expr(cond, env);
                let mut env_then = env.clone();
                let mut env_else = env.clone();
                *then_body = block(std::mem::take(then_body), &mut env_then, ctx);
                *else_body = block(std::mem::take(else_body), &mut env_else, ctx);
                let taken = cond.as_lit().map(|l| l.value() != crate::ir::Value::Int(0));
                *env = match (taken, always_returns(then_body), always_returns(else_body)) {
                    (Some(true), ..) | (None, false, true) => env_then,
                    (Some(false), ..) | (None, true, false) => env_else,
                    _ => join(env_then, &env_else),
                };
            }
            Stmt::For {
                var,
                lo,
                hi,
                step,
                body,
            } => {
                fold_expr(lo, env);
                let mut killed = assigned_vars(body);
                killed.insert(var.clone());
                kill(env, killed);
                fold_expr(hi, env);
                fold_expr(step, env);
                let mut inner = env.clone();
                *body = block(std::mem::take(body), &mut inner, ctx);
            }
            Stmt::While { cond, body } => {
                kill(env, assigned_vars(body));
                fold_expr(cond, env);
                let mut inner = env.clone();
                *body = block(std::mem::take(body), &mut inner, ctx);
            }
            Stmt::Guard { pred, .. } | Stmt::Assume { pred, .. } => {
                fold_expr(pred, env);
                learn_guard(env, pred, ctx);
            }
            other => {
                for e in other.exprs_mut() {
                    fold_expr(e, env);
                }
            }
        }
        out.push(s);
    }
    out
}

pub(super) fn run(body: Block, ctx: &FnCtx) -> Block {
    block(body, &mut Env::new(), ctx)
}
