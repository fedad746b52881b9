use super::*;

const SQUARE: &str = "(fn f (a:int) -> int (return (mul a a)))";

fn run(
    src: &str,
    func: &str,
    args: &[Value],
    host: &mut HostState,
) -> Result<(Value, u64), ExecError> {
    let m = parse_module(src).expect("parses");
    interpret(&m, func, args, host)
}

#[test]
fn parses_square() {
    let m = parse_module(SQUARE).unwrap();
    assert_eq!(m.functions.len(), 1);
    assert_eq!(m.functions[0].name, "f");
    let (v, ops) = run(SQUARE, "f", &[Value::Int(7)], &mut HostState::new()).unwrap();
    assert_eq!(v, Value::Int(49));
    assert_eq!(ops, 4);
}

#[test]
fn empty_text_has_no_functions() {
    match parse_module("") {
        Err(ParseError::Invalid(d)) => assert!(d.iter().any(|d| d.message == "no functions")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn syntax_errors_carry_position() {
    match parse_module("(fn f (a:int) -> int\n  (return (mul a a))") {
        Err(ParseError::Syntax { line, .. }) => assert!(line >= 1),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        parse_module("(fn f () -> int (return 1)))"),
        Err(ParseError::Syntax { .. })
    ));
}

#[test]
fn extern_initializer_rejected() {
    assert!(parse_module("(extern n int 5) (fn f () -> int (return n))").is_err());
    assert!(parse_module("(extern n int) (fn f () -> int (return n))").is_ok());
}

#[test]
fn validation_errors() {
    let bad = [
        "(fn f (a:int) -> int (return b))",
        "(fn f (a:int) -> int (let x 1))",
        "(fn f (a:int) -> int (return (add a 1.5)))",
        "(fn f (a:int) -> int (return (call g a)))",
        "(fn f (a:int) -> int (let x (spec-enum L a 1 2)) (let y (spec-enum L a 1 2)) (return x))",
        "(fn f (a:int) -> int (return (spec-enum L a 1 1)))",
        "(fn f (a:int) -> int (return (spec-range L a 5 1)))",
        "(fn f (a:int) (a:int) -> int (return a))",
        "(fn f (a:int) -> int (if a (then (let x 1))) (return x))",
        "(fn f (a:int) -> int (return (spec-enum L (call f a) 1 2)))",
        "(fn f (a:int) -> int (spec-assume P (eq (call f a) 0)) (return a))",
        "(extern a int) (fn f (b:int) -> int (let a 1) (return a))",
    ];
    for src in bad {
        assert!(parse_module(src).is_err(), "accepted: {src}");
    }
}

#[test]
fn definite_assignment_through_both_branches() {
    let src = "(fn f (a:int) -> int (if a (then (let x 1)) (else (let x 2))) (return x))";
    let (v, _) = run(src, "f", &[Value::Int(0)], &mut HostState::new()).unwrap();
    assert_eq!(v, Value::Int(2));
}

#[test]
fn round_trip_is_canonical() {
    let src = "(module (extern A int[] 4) (extern n int)
      (fn g (x:int y:int) -> int (return (mul x y)))
      (fn f (a:int) -> int
        (let s 0)
        (for i 0 (spec-range R n 1 64) 1
          (if (lt i a) (then (set s (add s (load A i)))) (else (store A i -7))))
        (while (gt s 100) (set s (sub s 1)))
        (spec-assume P (eq (mod a 2) 0))
        (spec-custom C fastpath)
        (let r (spec-generic G a))
        (return (call g s r))))";
    let m = parse_module(src).unwrap_or_else(|e| panic!("{e}"));
    let text = print_module(&m);
    let again = parse_module(&text).unwrap();
    assert_eq!(again, m);
    assert_eq!(print_module(&again), text);
    assert!(text.starts_with("(module\n  (extern A int[] 4)\n"));
    assert!(text.contains("\n    (for i 0 (spec-range R n 1 64) 1\n"));
}

#[test]
fn non_finite_floats_round_trip() {
    let m = parse_module(&format!(
        "(fn f (x:float) -> float (return (add x (fbits {}))))",
        f64::INFINITY.to_bits() as i64
    ))
    .unwrap();
    let again = parse_module(&print_module(&m)).unwrap();
    assert_eq!(again, m);
}

#[test]
fn traps_are_errors() {
    let mut host = HostState::new();
    host.add_int_array("A", vec![1, 2, 3]).unwrap();
    let div = "(fn f (a:int) -> int (return (div 10 a)))";
    assert_eq!(
        run(div, "f", &[Value::Int(0)], &mut host).unwrap_err(),
        ExecError::DivByZero
    );
    let oob = "(extern A int[]) (fn f (i:int) -> int (return (load A i)))";
    assert!(matches!(
        run(oob, "f", &[Value::Int(3)], &mut host),
        Err(ExecError::OutOfBounds { .. })
    ));
    assert!(matches!(
        run(oob, "f", &[Value::Int(-1)], &mut host),
        Err(ExecError::OutOfBounds { .. })
    ));
    assert_eq!(
        run(oob, "f", &[Value::Int(2)], &mut host).unwrap().0,
        Value::Int(3)
    );
    let zero = "(fn f (s:int) -> int (for i 0 10 s (do i)) (return 0))";
    assert_eq!(
        run(zero, "f", &[Value::Int(0)], &mut host).unwrap_err(),
        ExecError::ZeroStep
    );
    let st = "(extern A int[]) (fn f (i:int) -> int (store A i 9) (return 0))";
    assert!(matches!(
        run(st, "f", &[Value::Int(7)], &mut host),
        Err(ExecError::OutOfBounds { .. })
    ));
    assert_eq!(host.int_array("A").unwrap(), &[1, 2, 3]);
}

#[test]
fn unbound_external_and_unknown_function() {
    let m = parse_module("(extern B int[]) (fn f () -> int (return (load B 0)))").unwrap();
    let mut host = HostState::new();
    assert_eq!(
        interpret(&m, "f", &[], &mut host).unwrap_err(),
        ExecError::UnboundExternal("B".into())
    );
    host.add_int_array("B", vec![5]).unwrap();
    assert_eq!(
        interpret(&m, "g", &[], &mut host).unwrap_err(),
        ExecError::UnknownFunction("g".into())
    );
    assert_eq!(interpret(&m, "f", &[], &mut host).unwrap().0, Value::Int(5));
}

#[test]
fn loop_cost_model() {
    // entry 1 + lo 1 + step 1; 4 passing tests of 2 + hi 1; 3 bodies of
    // (do i) = 2; 3 increments of 3 + step 1; return 2.
    let src = "(fn f () -> int (for i 0 3 1 (do i)) (return i))";
    let (v, ops) = run(src, "f", &[], &mut HostState::new()).unwrap();
    assert_eq!(v, Value::Int(3));
    assert_eq!(ops, 3 + 4 * 3 + 3 * 2 + 3 * 4 + 2);
}

#[test]
fn for_loop_reevaluates_hi_and_counts_down() {
    let src = "(fn f (n:int) -> int (let c 0) (for i 0 n 1 (set n (sub n 1)) (set c (add c 1))) (return c))";
    assert_eq!(
        run(src, "f", &[Value::Int(10)], &mut HostState::new())
            .unwrap()
            .0,
        Value::Int(5)
    );
    let down = "(fn f () -> int (let c 0) (for i 10 0 -3 (set c (add c i))) (return c))";
    assert_eq!(
        run(down, "f", &[], &mut HostState::new()).unwrap().0,
        Value::Int(10 + 7 + 4 + 1)
    );
}

#[test]
fn extern_scalars_read_and_write() {
    let mut host = HostState::new();
    host.add_scalar("n", Value::Int(4)).unwrap();
    let src = "(extern n int) (fn f () -> int (set n (add n 1)) (return n))";
    assert_eq!(run(src, "f", &[], &mut host).unwrap().0, Value::Int(5));
    assert_eq!(host.scalar("n"), Some(Value::Int(5)));
}

#[test]
fn arrays_pass_as_arguments() {
    let mut host = HostState::new();
    let a = host.add_int_array("X", vec![4, 5]).unwrap();
    let src =
        "(fn g (v:int[]) -> int (return (load v 1))) (fn f (v:int[]) -> int (return (call g v)))";
    assert_eq!(
        run(src, "f", &[Value::Array(a)], &mut host).unwrap().0,
        Value::Int(5)
    );
    assert!(matches!(
        run(src, "f", &[Value::Int(1)], &mut host),
        Err(ExecError::ArgType { .. })
    ));
    assert!(matches!(
        run(src, "f", &[], &mut host),
        Err(ExecError::Arity { .. })
    ));
}

#[test]
fn recursion_depth_is_bounded() {
    let src =
        "(fn f (n:int) -> int (if (eq n 0) (then (return 0))) (return (add 1 (call f (sub n 1)))))";
    assert_eq!(
        run(src, "f", &[Value::Int(100)], &mut HostState::new())
            .unwrap()
            .0,
        Value::Int(100)
    );
    assert_eq!(
        run(src, "f", &[Value::Int(10_000)], &mut HostState::new()).unwrap_err(),
        ExecError::CallDepth
    );
}

#[test]
fn spec_annotations_are_transparent() {
    let annotated = "(fn f (a:int b:int) -> int
        (spec-assume P (gt a 0))
        (return (mul (spec-generic A a) (spec-range B b 1 64))))";
    let plain = "(fn f (a:int b:int) -> int (return (mul a b)))";
    let args = [Value::Int(6), Value::Int(7)];
    let x = run(annotated, "f", &args, &mut HostState::new()).unwrap();
    let y = run(plain, "f", &args, &mut HostState::new()).unwrap();
    assert_eq!(x, y);
    assert_eq!(x.0, Value::Int(42));
}

#[test]
fn guard_fail_and_sampling() {
    let src = "(fn f (a:int) -> int (guard G (eq a 3)) (sample S 2 freq a) (return a))";
    let m = parse_module(src).unwrap();
    let mut host = HostState::new();
    let mut profiles = crate::profile::Profiles::new();
    for _ in 0..5 {
        interpret_with_profiles(&m, "f", &[Value::Int(3)], &mut host, &mut profiles).unwrap();
    }
    assert_eq!(profiles["S"].samples_taken(), 3);
    let err =
        interpret_with_profiles(&m, "f", &[Value::Int(4)], &mut host, &mut profiles).unwrap_err();
    assert_eq!(err, ExecError::GuardFail { label: "G".into() });
}

#[test]
fn float_arithmetic() {
    let src = "(fn f (x:float) -> float (return (div (mul x 3.0) 2.0)))";
    assert_eq!(
        run(src, "f", &[Value::Float(1.0)], &mut HostState::new())
            .unwrap()
            .0,
        Value::Float(1.5)
    );
    let z = "(fn f (x:float) -> float (return (div 1.0 x)))";
    assert_eq!(
        run(z, "f", &[Value::Float(0.0)], &mut HostState::new()).unwrap_err(),
        ExecError::DivByZero
    );
}

#[test]
fn wrapping_integer_arithmetic() {
    let src = "(fn f (x:int) -> int (return (add x 1)))";
    assert_eq!(
        run(src, "f", &[Value::Int(i64::MAX)], &mut HostState::new())
            .unwrap()
            .0,
        Value::Int(i64::MIN)
    );
    let d = "(fn f (x:int) -> int (return (div x -1)))";
    assert_eq!(
        run(d, "f", &[Value::Int(i64::MIN)], &mut HostState::new())
            .unwrap()
            .0,
        Value::Int(i64::MIN)
    );
}
