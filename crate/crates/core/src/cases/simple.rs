//! Minimal handlers for measuring guard and instrumentation overhead.

use crate::ir::{parse_module, HandlerModule};

pub const HANDLER: &str = "f";

const SOURCE: &str = r#"
(module
  (fn f (a:int) -> int
    (let x (spec-generic a a))
    (return (mul x x)))
  (fn g (a:int b:int) -> int
    (let y (spec-range b b 1 64))
    (return (mul a y))))
"#;

/// `f(a) = a * a` with a generic point on `a`; `g(a, b) = a * b` with a
/// range point on `b` over `[1, 64]`.
pub fn build_simplebench() -> HandlerModule {
    parse_module(SOURCE).expect("simple source parses")
}
