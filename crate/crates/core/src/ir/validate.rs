use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::visit::{contains_call, contains_spec, walk_expr};
use super::{Block, Expr, Function, HandlerModule, SampleSink, Stmt, Type, ValueKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.function {
            Some(func) => write!(f, "in `{func}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

struct Checker<'m> {
    module: &'m HandlerModule,
    externs: BTreeMap<&'m str, Type>,
    labels: BTreeSet<String>,
    diags: Vec<Diagnostic>,
}

/// Per-function state: variable types and the set of definitely assigned
/// variables at the current program point.
struct FnScope<'f> {
    func: &'f Function,
    types: BTreeMap<String, Type>,
}

impl<'m> Checker<'m> {
    fn error(&mut self, func: Option<&str>, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            function: func.map(str::to_string),
            message: message.into(),
        });
    }

    fn label(&mut self, func: &str, label: &str) {
        if !self.labels.insert(label.to_string()) {
            self.error(
                Some(func),
                format!("duplicate specialization label `{label}`"),
            );
        }
    }

    fn array_type(&mut self, sc: &FnScope, defined: &BTreeSet<String>, name: &str) -> Option<Type> {
        let fname = &sc.func.name;
        if let Some(t) = sc.types.get(name) {
            if !defined.contains(name) {
                self.error(Some(fname), format!("`{name}` used before definition"));
            }
            if !t.is_array() {
                self.error(Some(fname), format!("`{name}` is not an array"));
                return None;
            }
            return Some(*t);
        }
        match self.externs.get(name) {
            Some(t) if t.is_array() => Some(*t),
            Some(_) => {
                self.error(Some(fname), format!("extern `{name}` is not an array"));
                None
            }
            None => {
                self.error(Some(fname), format!("unknown array or external `{name}`"));
                None
            }
        }
    }

    fn expr(&mut self, sc: &FnScope, defined: &BTreeSet<String>, e: &Expr) -> Option<Type> {
        let fname = sc.func.name.as_str();
        match e {
            Expr::Lit(super::Lit::Int(_)) => Some(Type::Int),
            Expr::Lit(super::Lit::Float(_)) => Some(Type::Float),
            Expr::Var(v) => {
                if let Some(t) = sc.types.get(v) {
                    if !defined.contains(v) {
                        self.error(Some(fname), format!("`{v}` used before definition"));
                    }
                    Some(*t)
                } else if let Some(t) = self.externs.get(v.as_str()) {
                    Some(*t)
                } else {
                    self.error(Some(fname), format!("unknown variable or external `{v}`"));
                    None
                }
            }
            Expr::Load { array, index } => {
                let at = self.array_type(sc, defined, array);
                self.int_expr(sc, defined, index, "array index");
                at.and_then(Type::element)
            }
            Expr::Bin { op, lhs, rhs } => {
                let l = self.expr(sc, defined, lhs);
                let r = self.expr(sc, defined, rhs);
                match (l, r) {
                    (Some(l), Some(r)) if l != r || l.is_array() => {
                        self.error(
                            Some(fname),
                            format!("type mismatch in `{}`: {l} vs {r}", op.keyword()),
                        );
                        None
                    }
                    (Some(Type::Float), _) if op.int_only() => {
                        self.error(Some(fname), format!("`{}` requires integers", op.keyword()));
                        None
                    }
                    (Some(t), Some(_)) => Some(t),
                    _ => None,
                }
            }
            Expr::Cmp { op, lhs, rhs } => {
                let l = self.expr(sc, defined, lhs);
                let r = self.expr(sc, defined, rhs);
                if let (Some(l), Some(r)) = (l, r) {
                    if l != r || l.is_array() {
                        self.error(
                            Some(fname),
                            format!("type mismatch in `{}`: {l} vs {r}", op.keyword()),
                        );
                    }
                }
                Some(Type::Int)
            }
            Expr::Call { func, args } => {
                let callee = match self.module.function(func) {
                    Some(f) => f,
                    None => {
                        self.error(Some(fname), format!("call to unknown function `{func}`"));
                        args.iter().for_each(|a| {
                            self.expr(sc, defined, a);
                        });
                        return None;
                    }
                };
                if callee.params.len() != args.len() {
                    self.error(
                        Some(fname),
                        format!(
                            "`{func}` expects {} argument(s), got {}",
                            callee.params.len(),
                            args.len()
                        ),
                    );
                }
                for (i, a) in args.iter().enumerate() {
                    let t = self.expr(sc, defined, a);
                    if let (Some(t), Some(p)) = (t, callee.params.get(i)) {
                        if t != p.ty {
                            self.error(
                                Some(fname),
                                format!(
                                    "argument `{}` of `{func}` expects {}, got {t}",
                                    p.name, p.ty
                                ),
                            );
                        }
                    }
                }
                Some(callee.ret)
            }
            Expr::Spec(s) => {
                self.label(fname, &s.label);
                if contains_call(&s.expr) {
                    self.error(
                        Some(fname),
                        format!("spec point `{}` wraps a call", s.label),
                    );
                }
                if contains_spec(&s.expr) {
                    self.error(
                        Some(fname),
                        format!("spec point `{}` wraps another spec point", s.label),
                    );
                }
                match &s.kind {
                    ValueKind::Enum(vs) => {
                        let distinct: BTreeSet<_> = vs.iter().collect();
                        if vs.is_empty() || distinct.len() != vs.len() {
                            self.error(
                                Some(fname),
                                format!("spec-enum `{}` needs distinct values", s.label),
                            );
                        }
                    }
                    ValueKind::Range { lo, hi } if lo > hi => {
                        self.error(Some(fname), format!("spec-range `{}` has lo > hi", s.label));
                    }
                    _ => {}
                }
                self.int_expr(sc, defined, &s.expr, "spec point value");
                Some(Type::Int)
            }
        }
    }

    fn int_expr(&mut self, sc: &FnScope, defined: &BTreeSet<String>, e: &Expr, what: &str) {
        if let Some(t) = self.expr(sc, defined, e) {
            if t != Type::Int {
                self.error(Some(&sc.func.name), format!("{what} must be int, got {t}"));
            }
        }
    }

    fn pure_pred(&mut self, func: &str, label: &str, pred: &Expr) {
        if contains_call(pred) {
            self.error(
                Some(func),
                format!("predicate of `{label}` must not call functions"),
            );
        }
        if contains_spec(pred) {
            self.error(
                Some(func),
                format!("predicate of `{label}` must not contain spec points"),
            );
        }
    }

    fn define(
        &mut self,
        sc: &mut FnScope,
        defined: &mut BTreeSet<String>,
        name: &str,
        ty: Option<Type>,
    ) {
        let fname = sc.func.name.clone();
        if self.externs.contains_key(name) {
            self.error(Some(&fname), format!("local `{name}` shadows an external"));
            return;
        }
        if let Some(ty) = ty {
            match sc.types.get(name) {
                Some(prev) if *prev != ty => {
                    self.error(
                        Some(&fname),
                        format!("`{name}` redefined with type {ty}, was {prev}"),
                    );
                }
                Some(_) => {}
                None => {
                    sc.types.insert(name.to_string(), ty);
                }
            }
        }
        defined.insert(name.to_string());
    }

    /// Checks a block; returns true if every path through it returns.
    fn block(&mut self, sc: &mut FnScope, defined: &mut BTreeSet<String>, b: &Block) -> bool {
        let mut returns = false;
        for s in b {
            self.stmt_spec_calls(&sc.func.name, s);
            returns |= self.stmt(sc, defined, s);
        }
        returns
    }

    // A statement that carries a spec-value may not also perform calls: the
    // guard inserted before it must observe the same state the annotation
    // would have.
    fn stmt_spec_calls(&mut self, func: &str, s: &Stmt) {
        let exprs = s.exprs();
        if exprs.iter().any(|e| contains_spec(e)) && exprs.iter().any(|e| contains_call(e)) {
            self.error(
                Some(func),
                "a statement with a spec point must not contain calls",
            );
        }
    }

    fn stmt(&mut self, sc: &mut FnScope, defined: &mut BTreeSet<String>, s: &Stmt) -> bool {
        let fname = sc.func.name.clone();
        match s {
            Stmt::Let { name, value } => {
                let t = self.expr(sc, defined, value);
                self.define(sc, defined, name, t);
                false
            }
            Stmt::Assign { name, value } => {
                let t = self.expr(sc, defined, value);
                // Locals are function-scoped, so `set` on a fresh name
                // defines it just like `let`.
                match self.externs.get(name.as_str()).copied() {
                    Some(tt) if tt.is_array() => {
                        self.error(
                            Some(&fname),
                            format!("cannot assign to extern array `{name}`"),
                        );
                    }
                    Some(tt) => {
                        if t.is_some_and(|t| t != tt) {
                            self.error(
                                Some(&fname),
                                format!("cannot assign {} to `{name}` of type {tt}", t.unwrap()),
                            );
                        }
                    }
                    None => self.define(sc, defined, name, t),
                }
                false
            }
            Stmt::Store {
                array,
                index,
                value,
            } => {
                let at = self.array_type(sc, defined, array);
                self.int_expr(sc, defined, index, "array index");
                let vt = self.expr(sc, defined, value);
                if let (Some(at), Some(vt)) = (at, vt) {
                    if at.element() != Some(vt) {
                        self.error(
                            Some(&fname),
                            format!("cannot store {vt} into `{array}` of type {at}"),
                        );
                    }
                }
                false
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
            } => {
                self.int_expr(sc, defined, cond, "condition");
                let mut d_then = defined.clone();
                let mut d_else = defined.clone();
                let r_then = self.block(sc, &mut d_then, then_body);
                let r_else = self.block(sc, &mut d_else, else_body);
                *defined = match (r_then, r_else) {
                    (true, true) => defined.clone(),
                    (true, false) => d_else,
                    (false, true) => d_then,
                    (false, false) => d_then.intersection(&d_else).cloned().collect(),
                };
                r_then && r_else
            }
            Stmt::For {
                var,
                lo,
                hi,
                step,
                body,
            } => {
                self.int_expr(sc, defined, lo, "loop bound");
                self.define(sc, defined, var, Some(Type::Int));
                self.int_expr(sc, defined, step, "loop step");
                self.int_expr(sc, defined, hi, "loop bound");
                // A guard for a header spec point runs outside the header,
                // where the loop variable has a different value.
                let mut header_labels = Vec::new();
                spec_labels_in(hi, &mut header_labels);
                spec_labels_in(step, &mut header_labels);
                if !header_labels.is_empty()
                    && (super::visit::expr_mentions(hi, var)
                        || super::visit::expr_mentions(step, var))
                {
                    self.error(
                        Some(&fname),
                        format!("spec point in the header of loop `{var}` reads the loop variable"),
                    );
                }
                let mut d_body = defined.clone();
                self.block(sc, &mut d_body, body);
                false
            }
            Stmt::While { cond, body } => {
                self.int_expr(sc, defined, cond, "condition");
                let mut d_body = defined.clone();
                self.block(sc, &mut d_body, body);
                false
            }
            Stmt::Return(e) => {
                if let Some(t) = self.expr(sc, defined, e) {
                    if t != sc.func.ret {
                        self.error(
                            Some(&fname),
                            format!("returns {t}, declared {}", sc.func.ret),
                        );
                    }
                }
                true
            }
            Stmt::Expr(e) => {
                self.expr(sc, defined, e);
                false
            }
            Stmt::SpecAssume { label, pred } => {
                self.label(&fname, label);
                self.pure_pred(&fname, label, pred);
                self.int_expr(sc, defined, pred, "assumption");
                false
            }
            Stmt::SpecCustom { label, .. } => {
                self.label(&fname, label);
                false
            }
            Stmt::Guard { label, pred } | Stmt::Assume { label, pred } => {
                self.pure_pred(&fname, label, pred);
                self.int_expr(sc, defined, pred, "guard predicate");
                false
            }
            Stmt::Sample(smp) => {
                if smp.every_k == 0 {
                    self.error(Some(&fname), "sampling period must be positive");
                }
                if let SampleSink::Histogram { lo, hi } = smp.sink {
                    if lo > hi {
                        self.error(Some(&fname), "histogram has lo > hi");
                    }
                }
                if smp.output.is_some() != (smp.sink == SampleSink::Pairs) {
                    self.error(
                        Some(&fname),
                        "only `pairs` samples carry an output expression",
                    );
                }
                self.int_expr(sc, defined, &smp.value, "sampled value");
                if let Some(o) = &smp.output {
                    self.int_expr(sc, defined, o, "sampled output");
                }
                false
            }
        }
    }

    fn function(&mut self, f: &'m Function) {
        let mut sc = FnScope {
            func: f,
            types: BTreeMap::new(),
        };
        let mut defined = BTreeSet::new();
        let mut seen = BTreeSet::new();
        if matches!(f.ret, Type::IntArray | Type::FloatArray) {
            self.error(Some(&f.name), "functions must return int or float");
        }
        for p in &f.params {
            if !seen.insert(p.name.as_str()) {
                self.error(Some(&f.name), format!("duplicate parameter `{}`", p.name));
            }
            self.define(&mut sc, &mut defined, &p.name, Some(p.ty));
        }
        if !self.block(&mut sc, &mut defined, &f.body) {
            self.error(Some(&f.name), "not every path returns a value");
        }
    }
}

/// Checks structural and type invariants of a module.
pub fn validate_module(m: &HandlerModule) -> Result<(), Vec<Diagnostic>> {
    let mut c = Checker {
        module: m,
        externs: BTreeMap::new(),
        labels: BTreeSet::new(),
        diags: Vec::new(),
    };
    if m.functions.is_empty() {
        c.error(None, "no functions");
    }
    for e in &m.externs {
        if c.externs.insert(e.name.as_str(), e.ty).is_some() {
            c.error(None, format!("duplicate extern `{}`", e.name));
        }
        if e.len.is_some() && !e.ty.is_array() {
            c.error(None, format!("initializer on external `{}`", e.name));
        }
    }
    let mut names = BTreeSet::new();
    for f in &m.functions {
        if !names.insert(f.name.as_str()) {
            c.error(None, format!("duplicate function `{}`", f.name));
        }
        if c.externs.contains_key(f.name.as_str()) {
            c.error(None, format!("function `{}` shadows an external", f.name));
        }
    }
    for f in &m.functions {
        c.function(f);
    }
    if c.diags.is_empty() {
        Ok(())
    } else {
        Err(c.diags)
    }
}

/// Collects every spec-value node in an expression tree.
fn spec_labels_in(e: &Expr, out: &mut Vec<String>) {
    walk_expr(e, &mut |n| {
        if let Expr::Spec(s) = n {
            out.push(s.label.clone());
        }
    });
}
