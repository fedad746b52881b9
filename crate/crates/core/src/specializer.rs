//! Rewrites a handler module for one configuration.
//!
//! Decided value points become literals, guarded by a check of the original
//! expression placed just before the statement that uses it. Loop headers
//! that are re-evaluated each iteration get a second check at the end of the
//! loop body. Enabled assumptions become guards (or trusted `assume`
//! statements when unguarded) and are recorded as facts for the optimizer.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::ir::visit::rewrite_expr;
use crate::ir::{
    validate_module, Block, CmpOp, Diagnostic, Expr, Function, HandlerModule, Sample, SampleSink,
    Stmt, Type, ValueKind,
};
use crate::profile::{Profiles, ValueProfile};
use crate::spec::{collect_spec_points, Decision, PointKind, SpecConfig, SpecError};

#[derive(Debug, Error)]
pub enum SpecializeError {
    #[error(transparent)]
    Config(#[from] SpecError),
    #[error("no generator registered for custom kind `{0}`")]
    UnregisteredCustom(String),
    #[error("generator `{kind}` is already registered")]
    DuplicateGenerator { kind: String },
    #[error("generator for `{label}` failed: {message}")]
    Generator { label: String, message: String },
    #[error("cannot instrument `{label}`: {reason}")]
    Instrument { label: String, reason: String },
    #[error("rewritten module is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

/// Where a guard for a decided point was placed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GuardSite {
    pub label: String,
    pub function: String,
    pub path: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecializedModule {
    pub module: HandlerModule,
    pub config: SpecConfig,
    pub guards: Vec<GuardSite>,
    pub assume_facts: Vec<(String, Expr)>,
}

/// Developer-defined code generator for `spec-custom` points.
pub trait CustomGenerator: Send + Sync {
    fn generate(
        &self,
        target: &Function,
        params: &BTreeMap<String, String>,
        profile: Option<&ValueProfile>,
    ) -> Result<Function, String>;
}

impl<F> CustomGenerator for F
where
    F: Fn(&Function, &BTreeMap<String, String>, Option<&ValueProfile>) -> Result<Function, String>
        + Send
        + Sync,
{
    fn generate(
        &self,
        target: &Function,
        params: &BTreeMap<String, String>,
        profile: Option<&ValueProfile>,
    ) -> Result<Function, String> {
        self(target, params, profile)
    }
}

#[derive(Clone, Default)]
pub struct CustomRegistry {
    generators: BTreeMap<String, Arc<dyn CustomGenerator>>,
}

impl CustomRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        kind: &str,
        generator: Arc<dyn CustomGenerator>,
    ) -> Result<(), SpecializeError> {
        if self.generators.contains_key(kind) {
            return Err(SpecializeError::DuplicateGenerator {
                kind: kind.to_string(),
            });
        }
        self.generators.insert(kind.to_string(), generator);
        Ok(())
    }

    pub fn get(&self, kind: &str) -> Option<&Arc<dyn CustomGenerator>> {
        self.generators.get(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.generators.keys().map(String::as_str)
    }
}

impl std::fmt::Debug for CustomRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.generators.keys()).finish()
    }
}

/// A labelled predicate that becomes a guard.
type Check = (String, Expr);

struct Rewriter<'c> {
    config: &'c SpecConfig,
    function: String,
    guards: Vec<GuardSite>,
    facts: Vec<(String, Expr)>,
    customs: Vec<(String, String, BTreeMap<String, String>)>,
}

impl Rewriter<'_> {
    fn site(&mut self, label: &str, path: &[usize]) {
        if !self.guards.iter().any(|g| g.label == label) {
            self.guards.push(GuardSite {
                label: label.to_string(),
                function: self.function.clone(),
                path: path.to_vec(),
            });
        }
    }

    /// Resolves the `spec-*` forms in one expression, returning guard
    /// predicates to check before it is evaluated.
    fn resolve(&self, e: &mut Expr) -> Vec<(String, Expr)> {
        let mut checks = Vec::new();
        rewrite_expr(e, &mut |n| {
            let Expr::Spec(sv) = n else { return };
            let wrapped = sv.expr.clone();
            match self.config.decision(&sv.label) {
                Decision::Const(v) => {
                    if self.config.guard(&sv.label) {
                        checks.push((
                            sv.label.clone(),
                            Expr::cmp(CmpOp::Eq, wrapped, Expr::int(*v)),
                        ));
                    }
                    *n = Expr::int(*v);
                }
                _ => *n = wrapped,
            }
        });
        checks
    }

    fn block(&mut self, b: Block, path: &mut Vec<usize>) -> Block {
        let mut out = Vec::with_capacity(b.len());
        for s in b {
            match s {
                Stmt::SpecAssume { label, pred } => {
                    if *self.config.decision(&label) == Decision::EnableAssume {
                        self.facts.push((label.clone(), pred.clone()));
                        if self.config.guard(&label) {
                            path.push(out.len());
                            self.site(&label, path);
                            path.pop();
                            out.push(Stmt::Guard { label, pred });
                        } else {
                            out.push(Stmt::Assume { label, pred });
                        }
                    }
                }
                Stmt::SpecCustom { label, kind } => {
                    if let Decision::Custom(params) = self.config.decision(&label) {
                        self.customs.push((label, kind, params.clone()));
                    }
                }
                mut s => {
                    let (pre, post) = self.resolve_stmt(&mut s);
                    for (label, pred) in pre {
                        path.push(out.len());
                        self.site(&label, path);
                        path.pop();
                        out.push(Stmt::Guard { label, pred });
                    }
                    path.push(out.len());
                    for (bi, sub) in s.blocks_mut().into_iter().enumerate() {
                        path.push(bi);
                        *sub = self.block(std::mem::take(sub), path);
                        path.pop();
                    }
                    path.pop();
                    if !post.is_empty() {
                        if let Stmt::For { body, .. } | Stmt::While { body, .. } = &mut s {
                            body.extend(
                                post.into_iter()
                                    .map(|(label, pred)| Stmt::Guard { label, pred }),
                            );
                        }
                    }
                    out.push(s);
                }
            }
        }
        out
    }

    /// Guards to place before the statement and at the end of a loop body.
    fn resolve_stmt(&self, s: &mut Stmt) -> (Vec<Check>, Vec<Check>) {
        match s {
            Stmt::For { lo, hi, step, .. } => {
                let mut pre = self.resolve(lo);
                let repeat: Vec<_> = self
                    .resolve(hi)
                    .into_iter()
                    .chain(self.resolve(step))
                    .collect();
                pre.extend(repeat.iter().cloned());
                (pre, repeat)
            }
            Stmt::While { cond, .. } => {
                let c = self.resolve(cond);
                (c.clone(), c)
            }
            _ => {
                let mut pre = Vec::new();
                for e in s.exprs_mut() {
                    pre.extend(self.resolve(e));
                }
                (pre, Vec::new())
            }
        }
    }
}

/// Removes every annotation, keeping the wrapped expressions.
pub fn strip_annotations(m: &HandlerModule) -> HandlerModule {
    let config = SpecConfig::new();
    let mut out = m.clone();
    for f in &mut out.functions {
        let mut rw = Rewriter {
            config: &config,
            function: f.name.clone(),
            guards: Vec::new(),
            facts: Vec::new(),
            customs: Vec::new(),
        };
        f.body = rw.block(std::mem::take(&mut f.body), &mut Vec::new());
    }
    out
}

/// Produces the module for configuration `c`. Sampling flags in `c` are
/// applied first, then decisions, then custom generators.
pub fn specialize(
    m: &HandlerModule,
    c: &SpecConfig,
    reg: &CustomRegistry,
    profiles: &Profiles,
) -> Result<SpecializedModule, SpecializeError> {
    let mut space = collect_spec_points(m);
    space.profiles = profiles.clone();
    c.validate(&space)?;
    for (label, d) in c.decisions() {
        if let (Some(PointKind::Custom(kind)), Decision::Custom(_)) =
            (space.point(label).map(|p| &p.kind), d)
        {
            if reg.get(kind).is_none() {
                return Err(SpecializeError::UnregisteredCustom(kind.clone()));
            }
        }
    }
    let requests: Vec<(String, u64)> = c
        .sampled_labels()
        .map(|(l, k)| (l.to_string(), k))
        .collect();
    let mut module = if requests.is_empty() {
        m.clone()
    } else {
        instrument(m, &requests)?
    };

    let mut guards = Vec::new();
    let mut facts = Vec::new();
    let mut customs = Vec::new();
    for f in &mut module.functions {
        let mut rw = Rewriter {
            config: c,
            function: f.name.clone(),
            guards: Vec::new(),
            facts: Vec::new(),
            customs: Vec::new(),
        };
        f.body = rw.block(std::mem::take(&mut f.body), &mut Vec::new());
        guards.extend(rw.guards);
        facts.extend(rw.facts);
        customs.extend(
            rw.customs
                .into_iter()
                .map(|(l, k, p)| (l, k, p, f.name.clone())),
        );
    }

    for (label, kind, params, fname) in customs {
        let generator = reg
            .get(&kind)
            .ok_or_else(|| SpecializeError::UnregisteredCustom(kind.clone()))?;
        let target = module
            .function(&fname)
            .expect("custom point lives in a module function");
        let generated = generator
            .generate(target, &params, profiles.get(&label))
            .map_err(|message| SpecializeError::Generator {
                label: label.clone(),
                message,
            })?;
        if generated.name != target.name
            || generated.params != target.params
            || generated.ret != target.ret
        {
            return Err(SpecializeError::Generator {
                label,
                message: format!("generated function does not match the signature of `{fname}`"),
            });
        }
        *module.function_mut(&fname).expect("checked above") = generated;
    }

    validate_module(&module).map_err(SpecializeError::Invalid)?;
    Ok(SpecializedModule {
        module,
        config: c.clone(),
        guards,
        assume_facts: facts,
    })
}

fn key_var(label: &str) -> String {
    format!("__spec_key_{label}")
}

fn out_var(label: &str) -> String {
    format!("__spec_out_{label}")
}

fn wrapped_in(label: &str, e: &Expr, out: &mut Vec<Expr>) {
    crate::ir::visit::walk_expr(e, &mut |n| {
        if let Expr::Spec(sv) = n {
            if sv.label == label {
                out.push(sv.expr.clone());
            }
        }
    });
}

fn instrument_values(b: &mut Block, label: &str, every_k: u64, sink: SampleSink) {
    let sample = |value: Expr| {
        Stmt::Sample(Sample {
            label: label.to_string(),
            every_k,
            sink,
            value,
            output: None,
        })
    };
    let mut i = 0;
    while i < b.len() {
        let mut before = Vec::new();
        let mut repeat = Vec::new();
        match &b[i] {
            Stmt::For { lo, hi, step, .. } => {
                wrapped_in(label, lo, &mut before);
                wrapped_in(label, hi, &mut repeat);
                wrapped_in(label, step, &mut repeat);
                before.extend(repeat.iter().cloned());
            }
            Stmt::While { cond, .. } => {
                wrapped_in(label, cond, &mut repeat);
                before.extend(repeat.iter().cloned());
            }
            s => s
                .exprs()
                .into_iter()
                .for_each(|e| wrapped_in(label, e, &mut before)),
        }
        for sub in b[i].blocks_mut() {
            instrument_values(sub, label, every_k, sink);
        }
        if let Stmt::For { body, .. } | Stmt::While { body, .. } = &mut b[i] {
            body.extend(repeat.into_iter().map(sample));
        }
        let n = before.len();
        for (j, v) in before.into_iter().enumerate() {
            b.insert(i + j, sample(v));
        }
        i += n + 1;
    }
}

fn instrument_returns(b: &mut Block, label: &str, every_k: u64) {
    let mut i = 0;
    while i < b.len() {
        if let Stmt::Return(e) = &b[i] {
            let e = e.clone();
            let out = out_var(label);
            b.splice(
                i..=i,
                [
                    Stmt::let_(out.clone(), e),
                    Stmt::Sample(Sample {
                        label: label.to_string(),
                        every_k,
                        sink: SampleSink::Pairs,
                        value: Expr::var(key_var(label)),
                        output: Some(Expr::var(out.clone())),
                    }),
                    Stmt::Return(Expr::var(out)),
                ],
            );
            i += 3;
            continue;
        }
        for sub in b[i].blocks_mut() {
            instrument_returns(sub, label, every_k);
        }
        i += 1;
    }
}

/// Injects sampling for each `(label, every_k)`. Value points sample the
/// wrapped expression; custom points record (key, result) pairs of their
/// function, keyed by its first integer parameter.
pub fn instrument(
    m: &HandlerModule,
    requests: &[(String, u64)],
) -> Result<HandlerModule, SpecializeError> {
    let space = collect_spec_points(m);
    let mut out = m.clone();
    for (label, every_k) in requests {
        let fail = |reason: &str| SpecializeError::Instrument {
            label: label.clone(),
            reason: reason.to_string(),
        };
        if *every_k == 0 {
            return Err(fail("sampling period must be positive"));
        }
        let point = space
            .point(label)
            .ok_or_else(|| SpecError::UnknownLabel(label.clone()))?;
        let f = out
            .function_mut(&point.function)
            .expect("point function exists");
        match &point.kind {
            PointKind::Assume => return Err(fail("assumption points are not instrumentable")),
            PointKind::Enum(_) | PointKind::Generic => {
                instrument_values(&mut f.body, label, *every_k, SampleSink::Frequency)
            }
            PointKind::Range { lo, hi } => instrument_values(
                &mut f.body,
                label,
                *every_k,
                SampleSink::Histogram { lo: *lo, hi: *hi },
            ),
            PointKind::Custom(_) => {
                let key = f
                    .params
                    .iter()
                    .find(|p| p.ty == Type::Int)
                    .ok_or_else(|| fail("target has no int parameter"))?;
                if f.ret != Type::Int {
                    return Err(fail("target must return int"));
                }
                let entry = Stmt::let_(key_var(label), Expr::var(key.name.clone()));
                instrument_returns(&mut f.body, label, *every_k);
                f.body.insert(0, entry);
            }
        }
    }
    validate_module(&out).map_err(SpecializeError::Invalid)?;
    Ok(out)
}

/// Wrapped expressions of every value point labelled `label`.
pub fn wrapped_exprs(m: &HandlerModule, label: &str) -> Vec<(ValueKind, Expr)> {
    let mut out = Vec::new();
    for f in &m.functions {
        crate::ir::visit::walk_block_exprs(&f.body, &mut |e| {
            if let Expr::Spec(sv) = e {
                if sv.label == label {
                    out.push((sv.kind.clone(), sv.expr.clone()));
                }
            }
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{
        interpret, interpret_with_profiles, parse_module, print_module, ExecError, HostState, Value,
    };

    const SRC: &str = "(fn f (b:int n:int) -> int
        (spec-assume P (eq (mod n 2) 0))
        (let s 0)
        (for i 0 (spec-enum B b 2 4 8) 1 (set s (add s n)))
        (return (add s (spec-generic N n))))";

    fn run(m: &HandlerModule, args: &[i64]) -> Result<Value, ExecError> {
        let args: Vec<Value> = args.iter().map(|&v| Value::Int(v)).collect();
        interpret(m, "f", &args, &mut HostState::new()).map(|r| r.0)
    }

    fn spec(src: &str, cfg: &str) -> SpecializedModule {
        specialize(
            &parse_module(src).unwrap(),
            &SpecConfig::parse(cfg).unwrap(),
            &CustomRegistry::new(),
            &Profiles::new(),
        )
        .unwrap()
    }

    #[test]
    fn const_replaces_and_guards() {
        let sm = spec(SRC, "B=4");
        let text = print_module(&sm.module);
        assert!(text.contains("(guard B (eq b 4))"), "{text}");
        assert!(text.contains("(for i 0 4 1"), "{text}");
        assert!(!text.contains("spec-"), "{text}");
        assert_eq!(sm.guards.len(), 1);
        assert_eq!(sm.guards[0].path, vec![1]);
        assert_eq!(run(&sm.module, &[4, 6]).unwrap(), Value::Int(30));
        assert_eq!(
            run(&sm.module, &[5, 6]).unwrap_err(),
            ExecError::GuardFail { label: "B".into() }
        );
    }

    #[test]
    fn header_guard_repeats_in_body() {
        let sm = spec(SRC, "B=4");
        let Stmt::For { body, .. } = &sm.module.functions[0].body[2] else {
            panic!("loop expected")
        };
        assert!(matches!(body.last(), Some(Stmt::Guard { label, .. }) if label == "B"));
        // Changing b inside the loop is caught at the end of the body.
        let src = "(fn f (b:int) -> int (let c 0) (for i 0 (spec-enum B b 2 4) 1 (set b 2) (set c (add c 1))) (return c))";
        let sm = spec(src, "B=4");
        assert_eq!(
            run(&sm.module, &[4]).unwrap_err(),
            ExecError::GuardFail { label: "B".into() }
        );
        let generic = parse_module(src).unwrap();
        assert_eq!(run(&generic, &[4]).unwrap(), Value::Int(2));
    }

    #[test]
    fn unguarded_const_has_no_guard() {
        let sm = spec(SRC, "B=4@noguard");
        assert!(sm.guards.is_empty());
        assert!(!print_module(&sm.module).contains("guard"));
    }

    #[test]
    fn assume_emits_guard_and_fact() {
        let sm = spec(SRC, "P=assume");
        assert_eq!(sm.assume_facts.len(), 1);
        assert_eq!(sm.guards.len(), 1);
        assert_eq!(
            run(&sm.module, &[2, 3]).unwrap_err(),
            ExecError::GuardFail { label: "P".into() }
        );
        let unguarded = spec(SRC, "P=assume@noguard");
        assert!(print_module(&unguarded.module).contains("(assume P"));
        assert!(unguarded.guards.is_empty());
        assert_eq!(unguarded.assume_facts.len(), 1);
    }

    #[test]
    fn disabled_equals_stripped() {
        let m = parse_module(SRC).unwrap();
        let sm = spec(SRC, "");
        assert_eq!(sm.module, strip_annotations(&m));
        for args in [[2, 3], [8, 10], [4, -1]] {
            let a: Vec<Value> = args.iter().map(|&v| Value::Int(v)).collect();
            assert_eq!(
                interpret(&sm.module, "f", &a, &mut HostState::new()).unwrap(),
                interpret(&m, "f", &a, &mut HostState::new()).unwrap()
            );
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let m = parse_module(SRC).unwrap();
        let reg = CustomRegistry::new();
        for bad in ["B=3", "Q=1", "P=5", "N=assume"] {
            let c = SpecConfig::parse(bad).unwrap();
            assert!(specialize(&m, &c, &reg, &Profiles::new()).is_err(), "{bad}");
        }
    }

    fn custom_src() -> &'static str {
        "(fn f (k:int) -> int (spec-custom fp memo) (if (gt k 10) (then (return 1))) (return (mul k k)))"
    }

    #[test]
    fn custom_generator_replaces_function() {
        let m = parse_module(custom_src()).unwrap();
        let mut reg = CustomRegistry::new();
        let g = |t: &Function,
                 p: &BTreeMap<String, String>,
                 _: Option<&ValueProfile>|
         -> Result<Function, String> {
            let v: i64 = p
                .get("v")
                .ok_or("missing v")?
                .parse()
                .map_err(|_| "bad v")?;
            let mut f = t.clone();
            f.body.insert(
                0,
                Stmt::if_(
                    Expr::cmp(CmpOp::Eq, Expr::var("k"), Expr::int(v)),
                    vec![Stmt::Return(Expr::int(-v))],
                    vec![],
                ),
            );
            Ok(f)
        };
        reg.register("memo", Arc::new(g)).unwrap();
        assert!(reg.register("memo", Arc::new(g)).is_err());
        let c = SpecConfig::parse("fp=on(v=3)").unwrap();
        let sm = specialize(&m, &c, &reg, &Profiles::new()).unwrap();
        assert_eq!(run(&sm.module, &[3]).unwrap(), Value::Int(-3));
        assert_eq!(run(&sm.module, &[4]).unwrap(), Value::Int(16));
        assert!(specialize(
            &m,
            &SpecConfig::parse("fp=on").unwrap(),
            &reg,
            &Profiles::new()
        )
        .is_err());
        assert!(matches!(
            specialize(&m, &c, &CustomRegistry::new(), &Profiles::new()),
            Err(SpecializeError::UnregisteredCustom(_))
        ));
    }

    #[test]
    fn generator_signature_is_checked() {
        let m = parse_module(custom_src()).unwrap();
        let mut reg = CustomRegistry::new();
        let g = |t: &Function,
                 _: &BTreeMap<String, String>,
                 _: Option<&ValueProfile>|
         -> Result<Function, String> {
            let mut f = t.clone();
            f.name = "other".into();
            Ok(f)
        };
        reg.register("memo", Arc::new(g)).unwrap();
        let r = specialize(
            &m,
            &SpecConfig::parse("fp=on").unwrap(),
            &reg,
            &Profiles::new(),
        );
        assert!(matches!(r, Err(SpecializeError::Generator { .. })));
    }

    #[test]
    fn instrument_counts_samples() {
        let m = parse_module("(fn f (n:int) -> int (return (add 1 (spec-generic N n))))").unwrap();
        let im = instrument(&m, &[("N".into(), 1)]).unwrap();
        let mut host = HostState::new();
        let mut profiles = Profiles::new();
        for _ in 0..5 {
            let (v, _) =
                interpret_with_profiles(&im, "f", &[Value::Int(256)], &mut host, &mut profiles)
                    .unwrap();
            assert_eq!(v, Value::Int(257));
        }
        assert_eq!(
            profiles["N"].as_frequency().unwrap().entries(),
            BTreeMap::from([(256, 5)])
        );

        let im = instrument(&m, &[("N".into(), 10)]).unwrap();
        let mut profiles = Profiles::new();
        for i in 0..100 {
            interpret_with_profiles(&im, "f", &[Value::Int(i)], &mut host, &mut profiles).unwrap();
        }
        assert_eq!(profiles["N"].samples_taken(), 10);
    }

    #[test]
    fn instrument_range_uses_histogram() {
        let m = parse_module("(fn g (a:int b:int) -> int (return (mul a (spec-range R b 1 64))))")
            .unwrap();
        let im = instrument(&m, &[("R".into(), 1)]).unwrap();
        let mut profiles = Profiles::new();
        interpret_with_profiles(
            &im,
            "g",
            &[Value::Int(6), Value::Int(7)],
            &mut HostState::new(),
            &mut profiles,
        )
        .unwrap();
        assert_eq!(profiles["R"].as_histogram().unwrap().buckets()[6], 1);
    }

    #[test]
    fn instrument_custom_records_pairs() {
        let m = parse_module(custom_src()).unwrap();
        let im = instrument(&m, &[("fp".into(), 1)]).unwrap();
        let mut profiles = Profiles::new();
        for k in [3, 3, 12, 5] {
            let (v, _) = interpret_with_profiles(
                &im,
                "f",
                &[Value::Int(k)],
                &mut HostState::new(),
                &mut profiles,
            )
            .unwrap();
            assert_eq!(v, run(&m, &[k]).unwrap());
        }
        let t = profiles["fp"].as_frequency().unwrap();
        assert_eq!(t.top_n(1), vec![(3, 2)]);
        assert_eq!(t.output(3), Some(9));
        assert_eq!(t.output(12), Some(1));
    }

    #[test]
    fn instrument_rejects_assume_and_unknown() {
        let m = parse_module(SRC).unwrap();
        assert!(matches!(
            instrument(&m, &[("P".into(), 1)]),
            Err(SpecializeError::Instrument { .. })
        ));
        assert!(instrument(&m, &[("Z".into(), 1)]).is_err());
        assert!(instrument(&m, &[("N".into(), 0)]).is_err());
    }

    #[test]
    fn sampling_flag_instruments_during_specialize() {
        let sm = spec(SRC, "B=4;N=off@sample=2");
        assert!(print_module(&sm.module).contains("(sample N 2 freq n)"));
    }
}
