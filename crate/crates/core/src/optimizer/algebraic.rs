use crate::ir::visit::{is_pure_total, rewrite_expr};
use crate::ir::{eval_binop, BinOp, Block, Expr, Lit, Value};

fn int_lit(e: &Expr) -> Option<i64> {
    match e.as_lit()? {
        Lit::Int(v) => Some(v),
        Lit::Float(_) => None,
    }
}

fn fold(op: BinOp, a: i64, b: i64) -> Option<i64> {
    eval_binop(op, Value::Int(a), Value::Int(b)).ok()?.as_int()
}

/// One local simplification of an integer expression node.
fn simplify(e: &mut Expr) {
    let Expr::Bin { op, lhs, rhs } = e else {
        return;
    };
    let (op, l, r) = (*op, int_lit(lhs), int_lit(rhs));
    // Constants go to the right of commutative operators.
    if matches!(
        op,
        BinOp::Add | BinOp::Mul | BinOp::And | BinOp::Or | BinOp::Xor
    ) && l.is_some()
        && r.is_none()
    {
        std::mem::swap(lhs, rhs);
        return simplify(e);
    }
    let replacement = match (op, r) {
        (BinOp::Add | BinOp::Sub | BinOp::Or | BinOp::Xor | BinOp::Shl | BinOp::Shr, Some(0)) => {
            Some((**lhs).clone())
        }
        (BinOp::Mul | BinOp::Div, Some(1)) => Some((**lhs).clone()),
        (BinOp::Mul | BinOp::And, Some(0)) if is_pure_total(lhs) => Some(Expr::int(0)),
        (BinOp::Mod, Some(1 | -1)) if is_pure_total(lhs) => Some(Expr::int(0)),
        (BinOp::Sub | BinOp::Xor, None) if lhs == rhs && is_pure_total(lhs) && int_typed(lhs) => {
            Some(Expr::int(0))
        }
        _ => None,
    };
    if let Some(rep) = replacement {
        *e = rep;
        return;
    }
    // Reassociate chains of constant additions and multiplications.
    let Some(c2) = r else { return };
    if let Expr::Bin {
        op: inner,
        lhs: x,
        rhs: c1,
    } = &mut **lhs
    {
        let Some(c1) = int_lit(c1) else { return };
        let merged = match (op, *inner) {
            (BinOp::Add, BinOp::Add) => fold(BinOp::Add, c1, c2).map(|c| (BinOp::Add, c)),
            (BinOp::Sub, BinOp::Add) => fold(BinOp::Sub, c1, c2).map(|c| (BinOp::Add, c)),
            (BinOp::Add, BinOp::Sub) => fold(BinOp::Sub, c2, c1).map(|c| (BinOp::Add, c)),
            (BinOp::Mul, BinOp::Mul) => fold(BinOp::Mul, c1, c2).map(|c| (BinOp::Mul, c)),
            _ => None,
        };
        if let Some((new_op, c)) = merged {
            *e = Expr::bin(
                new_op,
                std::mem::replace(&mut **x, Expr::int(0)),
                Expr::int(c),
            );
            simplify(e);
        }
    }
}

/// Conservative check that an expression is integer-valued: `sub x x`
/// on floats is NaN for infinities.
fn int_typed(e: &Expr) -> bool {
    let mut has_int_lit = false;
    crate::ir::visit::walk_expr(e, &mut |n| {
        has_int_lit |= matches!(n, Expr::Lit(Lit::Int(_)))
    });
    has_int_lit || matches!(e, Expr::Cmp { .. })
}

fn block(b: &mut Block) {
    for s in b.iter_mut() {
        for e in s.exprs_mut() {
            rewrite_expr(e, &mut simplify);
        }
        for sub in s.blocks_mut() {
            block(sub);
        }
    }
}

pub(super) fn run(mut body: Block) -> Block {
    block(&mut body);
    body
}
