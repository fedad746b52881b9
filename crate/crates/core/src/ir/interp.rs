//! Counting reference interpreter.
//!
//! A module is lowered once against a [`HostState`] into a [`Program`] whose
//! variables are resolved to frame slots and whose externs are resolved to
//! host handles. Every evaluated expression node and executed statement adds
//! to `ExecCtx::ops`; loop headers charge their test and increment work, a
//! guard costs one op, and assumption or spec annotations cost nothing.

use std::collections::HashMap;

use thiserror::Error;

use super::host::{ArrayData, ArrayRef, HostState};
use super::{
    eval_binop, eval_cmp, BinOp, Block, CmpOp, Expr, HandlerModule, SampleSink, Stmt, Type, Value,
};
use crate::profile::{Profiles, ValueProfile};

pub const MAX_CALL_DEPTH: usize = 256;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("division by zero")]
    DivByZero,
    #[error("index {index} out of bounds for `{array}` (len {len})")]
    OutOfBounds {
        array: String,
        index: i64,
        len: usize,
    },
    #[error("for-loop step is zero")]
    ZeroStep,
    #[error("guard `{label}` failed")]
    GuardFail { label: String },
    #[error("call depth exceeds {MAX_CALL_DEPTH}")]
    CallDepth,
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{func}` expects {expected} argument(s), got {got}")]
    Arity {
        func: String,
        expected: usize,
        got: usize,
    },
    #[error("argument `{param}` of `{func}` has the wrong type")]
    ArgType { func: String, param: String },
    #[error("external `{0}` is not bound by the host")]
    UnboundExternal(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("variable `{0}` read before assignment")]
    Uninitialized(String),
    #[error("`{0}` finished without returning")]
    NoReturn(String),
    #[error("op budget exhausted")]
    OutOfFuel,
}

impl ExecError {
    pub fn is_guard_fail(&self) -> bool {
        matches!(self, ExecError::GuardFail { .. })
    }
}

/// Mutable execution context shared by nested calls.
pub struct ExecCtx<'a> {
    pub host: &'a mut HostState,
    pub profiles: &'a mut Profiles,
    pub ops: u64,
    /// Execution stops with `OutOfFuel` once `ops` exceeds this.
    pub op_limit: u64,
}

impl<'a> ExecCtx<'a> {
    pub fn new(host: &'a mut HostState, profiles: &'a mut Profiles) -> Self {
        ExecCtx {
            host,
            profiles,
            ops: 0,
            op_limit: u64::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum ArrSrc {
    Host(ArrayRef),
    Slot(u32),
}

#[derive(Debug, Clone)]
enum XExpr {
    Lit(Value),
    Local(u32),
    Global(usize),
    Load(ArrSrc, Box<XExpr>),
    Bin(BinOp, Box<XExpr>, Box<XExpr>),
    Cmp(CmpOp, Box<XExpr>, Box<XExpr>),
    Call(usize, Vec<XExpr>),
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Local(u32),
    Global(usize),
}

#[derive(Debug, Clone)]
enum XStmt {
    Set(Target, XExpr),
    Store(ArrSrc, XExpr, XExpr),
    If(XExpr, Vec<XStmt>, Vec<XStmt>),
    For {
        var: Target,
        lo: XExpr,
        hi: XExpr,
        step: XExpr,
        body: Vec<XStmt>,
    },
    While(XExpr, Vec<XStmt>),
    Return(XExpr),
    Eval(XExpr),
    Guard(String, XExpr),
    Sample {
        label: String,
        every_k: u64,
        sink: SampleSink,
        value: XExpr,
        output: Option<XExpr>,
    },
}

#[derive(Debug, Clone)]
struct XFunc {
    name: String,
    params: Vec<Type>,
    param_names: Vec<String>,
    slot_names: Vec<String>,
    body: Vec<XStmt>,
}

/// A module lowered against one host binding.
#[derive(Debug, Clone)]
pub struct Program {
    funcs: Vec<XFunc>,
    by_name: HashMap<String, usize>,
}

struct Lowering<'a> {
    host: &'a HostState,
    module: &'a HandlerModule,
    fn_index: &'a HashMap<String, usize>,
    slots: HashMap<String, u32>,
    slot_names: Vec<String>,
}

impl Lowering<'_> {
    fn slot(&mut self, name: &str) -> u32 {
        if let Some(&s) = self.slots.get(name) {
            return s;
        }
        let s = self.slot_names.len() as u32;
        self.slots.insert(name.to_string(), s);
        self.slot_names.push(name.to_string());
        s
    }

    fn is_extern(&self, name: &str) -> bool {
        self.module.extern_decl(name).is_some()
    }

    fn collect_locals(&mut self, b: &Block) {
        super::visit::walk_stmts(b, &mut |s| match s {
            Stmt::Let { name, .. } | Stmt::Assign { name, .. } | Stmt::For { var: name, .. }
                if !self.module.extern_decl(name).is_some() && !self.slots.contains_key(name) =>
            {
                let n = self.slot_names.len() as u32;
                self.slots.insert(name.clone(), n);
                self.slot_names.push(name.clone());
            }
            _ => {}
        });
    }

    fn global(&self, name: &str) -> Result<usize, ExecError> {
        self.host
            .scalar_index(name)
            .ok_or_else(|| ExecError::UnboundExternal(name.to_string()))
    }

    fn target(&self, name: &str) -> Result<Target, ExecError> {
        if let Some(&s) = self.slots.get(name) {
            Ok(Target::Local(s))
        } else if self.is_extern(name) {
            Ok(Target::Global(self.global(name)?))
        } else {
            Err(ExecError::TypeMismatch(format!(
                "assignment to unknown variable `{name}`"
            )))
        }
    }

    fn array(&self, name: &str) -> Result<ArrSrc, ExecError> {
        if let Some(&s) = self.slots.get(name) {
            Ok(ArrSrc::Slot(s))
        } else {
            self.host
                .array_ref(name)
                .map(ArrSrc::Host)
                .ok_or_else(|| ExecError::UnboundExternal(name.to_string()))
        }
    }

    fn expr(&self, e: &Expr) -> Result<XExpr, ExecError> {
        Ok(match e {
            Expr::Lit(l) => XExpr::Lit(l.value()),
            Expr::Var(v) => {
                if let Some(&s) = self.slots.get(v) {
                    XExpr::Local(s)
                } else if let Some(r) = self.host.array_ref(v).filter(|_| self.is_extern(v)) {
                    XExpr::Lit(Value::Array(r))
                } else if self.is_extern(v) {
                    XExpr::Global(self.global(v)?)
                } else {
                    return Err(ExecError::Uninitialized(v.clone()));
                }
            }
            Expr::Load { array, index } => {
                XExpr::Load(self.array(array)?, Box::new(self.expr(index)?))
            }
            Expr::Bin { op, lhs, rhs } => {
                XExpr::Bin(*op, Box::new(self.expr(lhs)?), Box::new(self.expr(rhs)?))
            }
            Expr::Cmp { op, lhs, rhs } => {
                XExpr::Cmp(*op, Box::new(self.expr(lhs)?), Box::new(self.expr(rhs)?))
            }
            Expr::Call { func, args } => {
                let idx = *self
                    .fn_index
                    .get(func)
                    .ok_or_else(|| ExecError::UnknownFunction(func.clone()))?;
                XExpr::Call(
                    idx,
                    args.iter()
                        .map(|a| self.expr(a))
                        .collect::<Result<_, _>>()?,
                )
            }
            // Annotations are transparent: only the wrapped expression runs.
            Expr::Spec(s) => self.expr(&s.expr)?,
        })
    }

    fn block(&self, b: &Block) -> Result<Vec<XStmt>, ExecError> {
        let mut out = Vec::with_capacity(b.len());
        for s in b {
            let x = match s {
                Stmt::Let { name, value } | Stmt::Assign { name, value } => {
                    XStmt::Set(self.target(name)?, self.expr(value)?)
                }
                Stmt::Store {
                    array,
                    index,
                    value,
                } => XStmt::Store(self.array(array)?, self.expr(index)?, self.expr(value)?),
                Stmt::If {
                    cond,
                    then_body,
                    else_body,
                } => XStmt::If(
                    self.expr(cond)?,
                    self.block(then_body)?,
                    self.block(else_body)?,
                ),
                Stmt::For {
                    var,
                    lo,
                    hi,
                    step,
                    body,
                } => XStmt::For {
                    var: self.target(var)?,
                    lo: self.expr(lo)?,
                    hi: self.expr(hi)?,
                    step: self.expr(step)?,
                    body: self.block(body)?,
                },
                Stmt::While { cond, body } => XStmt::While(self.expr(cond)?, self.block(body)?),
                Stmt::Return(e) => XStmt::Return(self.expr(e)?),
                Stmt::Expr(e) => XStmt::Eval(self.expr(e)?),
                Stmt::Guard { label, pred } => XStmt::Guard(label.clone(), self.expr(pred)?),
                Stmt::Sample(smp) => XStmt::Sample {
                    label: smp.label.clone(),
                    every_k: smp.every_k.max(1),
                    sink: smp.sink,
                    value: self.expr(&smp.value)?,
                    output: smp.output.as_ref().map(|o| self.expr(o)).transpose()?,
                },
                Stmt::SpecAssume { .. } | Stmt::SpecCustom { .. } | Stmt::Assume { .. } => continue,
            };
            out.push(x);
        }
        Ok(out)
    }
}

fn check_binding(m: &HandlerModule, host: &HostState) -> Result<(), ExecError> {
    for e in &m.externs {
        if e.ty.is_array() {
            let data = host
                .array_by_name(&e.name)
                .ok_or_else(|| ExecError::UnboundExternal(e.name.clone()))?;
            if data.array_type() != e.ty {
                return Err(ExecError::TypeMismatch(format!(
                    "external `{}` bound as {}",
                    e.name,
                    data.array_type()
                )));
            }
            if let Some(n) = e.len {
                if data.len() != n {
                    return Err(ExecError::TypeMismatch(format!(
                        "external `{}` declared with {n} elements, bound with {}",
                        e.name,
                        data.len()
                    )));
                }
            }
        } else {
            let v = host
                .scalar(&e.name)
                .ok_or_else(|| ExecError::UnboundExternal(e.name.clone()))?;
            if v.type_of(host) != Some(e.ty) {
                return Err(ExecError::TypeMismatch(format!(
                    "external `{}` is not {}",
                    e.name, e.ty
                )));
            }
        }
    }
    Ok(())
}

enum Flow {
    Next,
    Return(Value),
}

impl Program {
    /// Lowers `m` against `host`. Fails if an extern is unbound or bound
    /// with the wrong type.
    pub fn compile(m: &HandlerModule, host: &HostState) -> Result<Program, ExecError> {
        check_binding(m, host)?;
        let by_name: HashMap<String, usize> = m
            .functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.clone(), i))
            .collect();
        let mut funcs = Vec::with_capacity(m.functions.len());
        for f in &m.functions {
            let mut low = Lowering {
                host,
                module: m,
                fn_index: &by_name,
                slots: HashMap::new(),
                slot_names: Vec::new(),
            };
            for p in &f.params {
                low.slot(&p.name);
            }
            low.collect_locals(&f.body);
            let body = low.block(&f.body)?;
            funcs.push(XFunc {
                name: f.name.clone(),
                params: f.params.iter().map(|p| p.ty).collect(),
                param_names: f.params.iter().map(|p| p.name.clone()).collect(),
                slot_names: low.slot_names,
                body,
            });
        }
        Ok(Program { funcs, by_name })
    }

    pub fn has_function(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    /// Calls `func` with `args`, charging ops to `ctx`.
    pub fn call(&self, func: &str, args: &[Value], ctx: &mut ExecCtx) -> Result<Value, ExecError> {
        let idx = *self
            .by_name
            .get(func)
            .ok_or_else(|| ExecError::UnknownFunction(func.to_string()))?;
        let f = &self.funcs[idx];
        if f.params.len() != args.len() {
            return Err(ExecError::Arity {
                func: f.name.clone(),
                expected: f.params.len(),
                got: args.len(),
            });
        }
        for ((ty, name), a) in f.params.iter().zip(&f.param_names).zip(args) {
            if a.type_of(ctx.host) != Some(*ty) {
                return Err(ExecError::ArgType {
                    func: f.name.clone(),
                    param: name.clone(),
                });
            }
        }
        self.invoke(idx, args.to_vec(), ctx, 0)
    }

    fn invoke(
        &self,
        idx: usize,
        args: Vec<Value>,
        ctx: &mut ExecCtx,
        depth: usize,
    ) -> Result<Value, ExecError> {
        if depth >= MAX_CALL_DEPTH {
            return Err(ExecError::CallDepth);
        }
        let f = &self.funcs[idx];
        let mut frame: Vec<Option<Value>> = vec![None; f.slot_names.len()];
        for (slot, a) in frame.iter_mut().zip(args) {
            *slot = Some(a);
        }
        let mut run = Run {
            prog: self,
            func: f,
            frame,
            depth,
        };
        match run.block(&f.body, ctx)? {
            Flow::Return(v) => Ok(v),
            Flow::Next => Err(ExecError::NoReturn(f.name.clone())),
        }
    }
}

struct Run<'p> {
    prog: &'p Program,
    func: &'p XFunc,
    frame: Vec<Option<Value>>,
    depth: usize,
}

fn charge(ctx: &mut ExecCtx, n: u64) -> Result<(), ExecError> {
    ctx.ops += n;
    if ctx.ops > ctx.op_limit {
        return Err(ExecError::OutOfFuel);
    }
    Ok(())
}

fn int(v: Value) -> Result<i64, ExecError> {
    v.as_int()
        .ok_or_else(|| ExecError::TypeMismatch(format!("expected int, got {v}")))
}

impl Run<'_> {
    fn array_ref(&self, src: ArrSrc) -> Result<ArrayRef, ExecError> {
        match src {
            ArrSrc::Host(r) => Ok(r),
            ArrSrc::Slot(s) => match self.read(s)? {
                Value::Array(r) => Ok(r),
                v => Err(ExecError::TypeMismatch(format!("expected array, got {v}"))),
            },
        }
    }

    fn read(&self, s: u32) -> Result<Value, ExecError> {
        self.frame[s as usize]
            .ok_or_else(|| ExecError::Uninitialized(self.func.slot_names[s as usize].clone()))
    }

    fn write(&mut self, t: Target, v: Value, ctx: &mut ExecCtx) {
        match t {
            Target::Local(s) => self.frame[s as usize] = Some(v),
            Target::Global(i) => ctx.host.set_scalar_at(i, v),
        }
    }

    fn read_target(&self, t: Target, ctx: &ExecCtx) -> Result<Value, ExecError> {
        match t {
            Target::Local(s) => self.read(s),
            Target::Global(i) => Ok(ctx.host.scalar_at(i)),
        }
    }

    fn expr(&mut self, e: &XExpr, ctx: &mut ExecCtx) -> Result<Value, ExecError> {
        charge(ctx, 1)?;
        match e {
            XExpr::Lit(v) => Ok(*v),
            XExpr::Local(s) => self.read(*s),
            XExpr::Global(i) => Ok(ctx.host.scalar_at(*i)),
            XExpr::Load(src, index) => {
                let i = int(self.expr(index, ctx)?)?;
                let r = self.array_ref(*src)?;
                let arr = ctx
                    .host
                    .array(r)
                    .ok_or_else(|| ExecError::UnboundExternal(format!("array#{}", r.0)))?;
                let oob = || ExecError::OutOfBounds {
                    array: arr.name.clone(),
                    index: i,
                    len: arr.data.len(),
                };
                let u = usize::try_from(i).map_err(|_| oob())?;
                match &arr.data {
                    ArrayData::Int(v) => v.get(u).map(|&x| Value::Int(x)).ok_or_else(oob),
                    ArrayData::Float(v) => v.get(u).map(|&x| Value::Float(x)).ok_or_else(oob),
                }
            }
            XExpr::Bin(op, l, r) => {
                let a = self.expr(l, ctx)?;
                let b = self.expr(r, ctx)?;
                eval_binop(*op, a, b)
            }
            XExpr::Cmp(op, l, r) => {
                let a = self.expr(l, ctx)?;
                let b = self.expr(r, ctx)?;
                eval_cmp(*op, a, b)
            }
            XExpr::Call(idx, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.expr(a, ctx)?);
                }
                self.prog.invoke(*idx, vals, ctx, self.depth + 1)
            }
        }
    }

    fn block(&mut self, b: &[XStmt], ctx: &mut ExecCtx) -> Result<Flow, ExecError> {
        for s in b {
            if let Flow::Return(v) = self.stmt(s, ctx)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Next)
    }

    fn stmt(&mut self, s: &XStmt, ctx: &mut ExecCtx) -> Result<Flow, ExecError> {
        match s {
            XStmt::Set(t, e) => {
                charge(ctx, 1)?;
                let v = self.expr(e, ctx)?;
                self.write(*t, v, ctx);
            }
            XStmt::Store(src, index, value) => {
                charge(ctx, 1)?;
                let i = int(self.expr(index, ctx)?)?;
                let v = self.expr(value, ctx)?;
                let r = self.array_ref(*src)?;
                let arr = ctx
                    .host
                    .array_mut(r)
                    .ok_or_else(|| ExecError::UnboundExternal(format!("array#{}", r.0)))?;
                let len = arr.data.len();
                let slot = usize::try_from(i).ok().filter(|&u| u < len);
                let Some(u) = slot else {
                    return Err(ExecError::OutOfBounds {
                        array: arr.name.clone(),
                        index: i,
                        len,
                    });
                };
                match (&mut arr.data, v) {
                    (ArrayData::Int(d), Value::Int(x)) => d[u] = x,
                    (ArrayData::Float(d), Value::Float(x)) => d[u] = x,
                    _ => {
                        return Err(ExecError::TypeMismatch(format!(
                            "store of {v} into `{}`",
                            arr.name
                        )))
                    }
                }
            }
            XStmt::If(c, t, e) => {
                charge(ctx, 1)?;
                let branch = if int(self.expr(c, ctx)?)? != 0 { t } else { e };
                return self.block(branch, ctx);
            }
            XStmt::For {
                var,
                lo,
                hi,
                step,
                body,
            } => {
                charge(ctx, 1)?;
                let start = int(self.expr(lo, ctx)?)?;
                self.write(*var, Value::Int(start), ctx);
                let s0 = int(self.expr(step, ctx)?)?;
                if s0 == 0 {
                    return Err(ExecError::ZeroStep);
                }
                let up = s0 > 0;
                loop {
                    charge(ctx, 2)?;
                    let h = int(self.expr(hi, ctx)?)?;
                    let cur = int(self.read_target(*var, ctx)?)?;
                    if (up && cur >= h) || (!up && cur <= h) {
                        break;
                    }
                    if let Flow::Return(v) = self.block(body, ctx)? {
                        return Ok(Flow::Return(v));
                    }
                    charge(ctx, 3)?;
                    let st = int(self.expr(step, ctx)?)?;
                    if st == 0 {
                        return Err(ExecError::ZeroStep);
                    }
                    let cur = int(self.read_target(*var, ctx)?)?;
                    self.write(*var, Value::Int(cur.wrapping_add(st)), ctx);
                }
            }
            XStmt::While(c, body) => loop {
                charge(ctx, 1)?;
                if int(self.expr(c, ctx)?)? == 0 {
                    break;
                }
                if let Flow::Return(v) = self.block(body, ctx)? {
                    return Ok(Flow::Return(v));
                }
            },
            XStmt::Return(e) => {
                charge(ctx, 1)?;
                return Ok(Flow::Return(self.expr(e, ctx)?));
            }
            XStmt::Eval(e) => {
                charge(ctx, 1)?;
                self.expr(e, ctx)?;
            }
            XStmt::Guard(label, pred) => {
                charge(ctx, 1)?;
                // The check itself is priced flat; a predicate that would
                // trap counts as a failed guard so the generic path decides.
                let before = ctx.ops;
                let ok = self
                    .expr(pred, ctx)
                    .ok()
                    .and_then(Value::as_int)
                    .is_some_and(|v| v != 0);
                ctx.ops = before;
                if !ok {
                    return Err(ExecError::GuardFail {
                        label: label.clone(),
                    });
                }
            }
            XStmt::Sample {
                label,
                every_k,
                sink,
                value,
                output,
            } => {
                charge(ctx, 1)?;
                let take = ctx
                    .profiles
                    .entry(label.clone())
                    .or_insert_with(|| match sink {
                        SampleSink::Histogram { lo, hi } => {
                            ValueProfile::histogram(*lo, *hi, *every_k)
                        }
                        _ => ValueProfile::frequency(*every_k),
                    })
                    .tick();
                if take {
                    let v = int(self.expr(value, ctx)?)?;
                    let out = match output {
                        Some(o) => Some(int(self.expr(o, ctx)?)?),
                        None => None,
                    };
                    let p = ctx.profiles.get_mut(label).expect("profile inserted above");
                    let cost = p.record_cost();
                    match out {
                        Some(o) => p.record_pair(v, o),
                        None => p.record(v),
                    }
                    charge(ctx, cost)?;
                }
            }
        }
        Ok(Flow::Next)
    }
}

/// Compiles and runs `func` once. Returns the result and ops executed.
pub fn interpret(
    m: &HandlerModule,
    func: &str,
    args: &[Value],
    host: &mut HostState,
) -> Result<(Value, u64), ExecError> {
    let mut profiles = Profiles::new();
    interpret_with_profiles(m, func, args, host, &mut profiles)
}

pub fn interpret_with_profiles(
    m: &HandlerModule,
    func: &str,
    args: &[Value],
    host: &mut HostState,
    profiles: &mut Profiles,
) -> Result<(Value, u64), ExecError> {
    let prog = Program::compile(m, host)?;
    if !prog.has_function(func) {
        return Err(ExecError::UnknownFunction(func.to_string()));
    }
    let mut ctx = ExecCtx::new(host, profiles);
    let v = prog.call(func, args, &mut ctx)?;
    Ok((v, ctx.ops))
}
