use super::*;
use crate::ir::{interpret, parse_module, print_module, ExecError, HostState, Value};

fn opt(src: &str, passes: &str) -> HandlerModule {
    optimize_module(
        &parse_module(src).unwrap(),
        &PassPipeline::parse(passes).unwrap(),
    )
    .0
}

fn body_text(m: &HandlerModule) -> String {
    print_module(m)
}

fn run(m: &HandlerModule, args: &[i64]) -> Result<(Value, u64), ExecError> {
    let args: Vec<Value> = args.iter().map(|&v| Value::Int(v)).collect();
    interpret(m, "f", &args, &mut HostState::new())
}

#[test]
fn folds_constants() {
    let m = opt(
        "(fn f () -> int (let x (mul 3 4)) (return (add x 1)))",
        "default",
    );
    assert_eq!(
        m.functions[0].body,
        vec![Stmt::Return(crate::ir::Expr::int(13))]
    );
}

#[test]
fn never_folds_traps() {
    let m = opt("(fn f () -> int (let x (div 3 0)) (return 1))", "default");
    assert_eq!(run(&m, &[]).unwrap_err(), ExecError::DivByZero);
}

#[test]
fn pipeline_parsing() {
    assert_eq!(PassPipeline::parse("default").unwrap(), default_pipeline());
    assert!(PassPipeline::parse("none").unwrap().passes.is_empty());
    assert_eq!(
        PassPipeline::parse("dce,dce").unwrap().passes,
        vec![Pass::Dce, Pass::Dce]
    );
    assert!(PassPipeline::parse("vectorize").is_err());
    assert_eq!(
        default_pipeline().to_string(),
        "const_prop,branch_fold,loop_unroll,const_prop,algebraic,dce"
    );
}

#[test]
fn empty_pipeline_is_identity() {
    let src = "(fn f (a:int) -> int (let x (add 1 2)) (return (add a x)))";
    assert_eq!(opt(src, "none"), parse_module(src).unwrap());
}

#[test]
fn literal_branches_fold() {
    let m = opt(
        "(fn f (a:int) -> int (let k 1) (if (eq k 1) (then (set a (add a 1))) (else (set a 0))) (while (lt k 0) (set a 5)) (return a))",
        "const_prop,branch_fold,dce",
    );
    let text = body_text(&m);
    assert!(!text.contains("(if") && !text.contains("while"), "{text}");
    assert_eq!(run(&m, &[4]).unwrap().0, Value::Int(5));
}

#[test]
fn assume_fact_removes_remainder_path() {
    let src = "(fn f (n:int b:int) -> int
        (guard NmB (eq (mod n b) 0))
        (if (eq (mod n b) 0) (then (return 1)) (else (let r (mod n b)) (return (add r 100)))))";
    let m = opt(src, "default");
    let text = body_text(&m);
    assert!(!text.contains("100"), "{text}");
    assert!(text.contains("(guard NmB"), "{text}");
    assert_eq!(run(&m, &[8, 4]).unwrap().0, Value::Int(1));
    assert!(run(&m, &[9, 4]).unwrap_err().is_guard_fail());
}

#[test]
fn negated_fact_takes_else() {
    let src = "(fn f (n:int) -> int (assume P (lt n 10)) (if (ge n 10) (then (return 1)) (else (return 2))))";
    let m = opt(src, "branch_fold");
    assert!(!body_text(&m).contains("(if"));
    assert_eq!(run(&m, &[3]).unwrap().0, Value::Int(2));
}

#[test]
fn facts_die_on_assignment() {
    let src = "(fn f (n:int) -> int (guard P (lt n 10)) (set n (add n 20)) (if (lt n 10) (then (return 1)) (else (return 2))))";
    let m = opt(src, "branch_fold");
    assert!(body_text(&m).contains("(if"));
    assert_eq!(run(&m, &[3]).unwrap().0, Value::Int(2));
}

#[test]
fn guard_teaches_constant() {
    let src = "(fn f (b:int) -> int (guard B (eq b 4)) (return (mul b b)))";
    let m = opt(src, "const_prop");
    assert!(body_text(&m).contains("(return 16)"));
    assert!(run(&m, &[5]).unwrap_err().is_guard_fail());
}

#[test]
fn unrolls_literal_loops() {
    let src = "(fn f () -> int (let s 0) (for i 0 8 1 (set s (add s i))) (return (add s i)))";
    let m0 = parse_module(src).unwrap();
    let m = opt(src, "loop_unroll");
    assert!(!body_text(&m).contains("(for"));
    let (v0, ops0) = run(&m0, &[]).unwrap();
    let (v1, ops1) = run(&m, &[]).unwrap();
    assert_eq!(v0, v1);
    assert_eq!(v0, Value::Int(28 + 8));
    assert!(ops1 < ops0);
    let folded = opt(src, "default");
    assert_eq!(
        folded.functions[0].body,
        vec![Stmt::Return(crate::ir::Expr::int(36))]
    );
}

#[test]
fn unrolls_symbolic_bounds() {
    let src = "(fn f (k:int) -> int (let s 0) (for i k (add k 8) 1 (set s (add s i))) (return s))";
    let m = opt(src, "default");
    assert!(!body_text(&m).contains("(for"), "{}", body_text(&m));
    let m0 = parse_module(src).unwrap();
    for k in [-5, 0, 7] {
        let (a, ops0) = run(&m0, &[k]).unwrap();
        let (b, ops1) = run(&m, &[k]).unwrap();
        assert_eq!(a, b);
        assert!(ops1 < ops0);
    }
}

#[test]
fn unroll_respects_limits() {
    let big = "(fn f () -> int (let s 0) (for i 0 65 1 (set s (add s i))) (return s))";
    assert!(body_text(&opt(big, "loop_unroll")).contains("(for"));
    let writes_var =
        "(fn f () -> int (let s 0) (for i 0 8 1 (set i (add i 1)) (set s (add s 1))) (return s))";
    assert!(body_text(&opt(writes_var, "loop_unroll")).contains("(for"));
    let writes_bound =
        "(fn f (k:int) -> int (let s 0) (for i k (add k 8) 1 (set k (sub k 1))) (return s))";
    assert!(body_text(&opt(writes_bound, "loop_unroll")).contains("(for"));
}

#[test]
fn growth_cap_reports_diagnostic() {
    let src = "(fn f () -> int (let s 0)
        (for i 0 64 1 (for j 0 64 1 (set s (add s j))))
        (return s))";
    let mut p = PassPipeline::parse("loop_unroll").unwrap();
    p.max_growth = 4;
    let (m, diags) = optimize_module(&parse_module(src).unwrap(), &p);
    assert!(!diags.is_empty());
    assert!(m.stmt_count() <= 4 * 5);
    assert_eq!(run(&m, &[]).unwrap().0, Value::Int(64 * (63 * 64 / 2)));
}

#[test]
fn dce_removes_dead_code() {
    let src = "(fn f (a:int) -> int (let x (mul a 3)) (let y (load_free a)) (return a) (let z 1))"
        .replace("(load_free a)", "(add a 1)");
    let m = opt(&src, "dce");
    assert_eq!(m.functions[0].body.len(), 1);
    let keeps_guard = "(fn f (a:int) -> int (guard G (eq a 1)) (let x 3) (return a))";
    let m = opt(keeps_guard, "dce");
    assert!(body_text(&m).contains("(guard G"));
}

#[test]
fn dce_keeps_trapping_lets() {
    let src = "(extern A int[]) (fn f (i:int) -> int (let x (load A i)) (return 0))";
    let m = opt(src, "dce");
    assert_eq!(m.functions[0].body.len(), 2);
}

#[test]
fn algebraic_identities() {
    let src = "(fn f (a:int) -> int (return (add (mul (add (add a 2) 3) 1) 0)))";
    let m = opt(src, "algebraic");
    assert!(
        body_text(&m).contains("(return (add a 5))"),
        "{}",
        body_text(&m)
    );
    let m2 = opt(
        "(fn f (a:int) -> int (return (mul (mul 2 a) 4)))",
        "algebraic",
    );
    assert!(body_text(&m2).contains("(return (mul a 8))"));
}

#[test]
fn default_never_worse_on_constant_free_code() {
    let src = "(fn f (a:int b:int) -> int (let s 0) (while (lt s a) (set s (add s b))) (return s))";
    let m0 = parse_module(src).unwrap();
    let m = opt(src, "default");
    let (v0, o0) = run(&m0, &[10, 3]).unwrap();
    let (v1, o1) = run(&m, &[10, 3]).unwrap();
    assert_eq!(v0, v1);
    assert!(o1 <= o0);
}
