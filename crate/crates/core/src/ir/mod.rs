//! Structured intermediate representation for handler code.
//!
//! Handler modules are trees of statements and expressions. Persistent state
//! never lives in a module: every array or scalar a handler touches is an
//! `extern` declaration bound by the fixed code through a [`HostState`].
//!
//! The textual form is an s-expression dialect, see [`parse_module`] and
//! [`print_module`]. [`interpret`] is the counting reference interpreter.

mod host;
mod interp;
mod parse;
mod print;
mod validate;
pub mod visit;

pub use host::{ArrayData, ArrayRef, HostArray, HostError, HostState};
pub use interp::{interpret, interpret_with_profiles, ExecCtx, ExecError, Program, MAX_CALL_DEPTH};
pub use parse::{parse_module, ParseError};
pub use print::{print_expr, print_module};
pub use validate::{validate_module, Diagnostic};

use std::fmt;

/// Static type of a variable, parameter, extern or expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Type {
    Int,
    Float,
    IntArray,
    FloatArray,
}

impl Type {
    pub fn is_array(self) -> bool {
        matches!(self, Type::IntArray | Type::FloatArray)
    }

    /// Element type of an array type.
    pub fn element(self) -> Option<Type> {
        match self {
            Type::IntArray => Some(Type::Int),
            Type::FloatArray => Some(Type::Float),
            _ => None,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Type::Int => "int",
            Type::Float => "float",
            Type::IntArray => "int[]",
            Type::FloatArray => "float[]",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Type> {
        Some(match s {
            "int" => Type::Int,
            "float" => Type::Float,
            "int[]" => Type::IntArray,
            "float[]" => Type::FloatArray,
            _ => return None,
        })
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Runtime value. Booleans are `Int` 0/1.
#[derive(Debug, Clone, Copy)]
pub enum Value {
    Int(i64),
    Float(f64),
    Array(ArrayRef),
}

impl Value {
    pub fn as_int(self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_float(self) -> Option<f64> {
        match self {
            Value::Float(v) => Some(v),
            _ => None,
        }
    }

    pub fn type_of(self, host: &HostState) -> Option<Type> {
        match self {
            Value::Int(_) => Some(Type::Int),
            Value::Float(_) => Some(Type::Float),
            Value::Array(r) => host.array(r).map(|a| a.data.array_type()),
        }
    }
}

// Floats compare bitwise so NaN payloads round-trip and results are
// deterministic.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            (Value::Array(a), Value::Array(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Array(r) => write!(f, "array#{}", r.0),
        }
    }
}

/// Literal constant embedded in code.
#[derive(Debug, Clone, Copy)]
pub enum Lit {
    Int(i64),
    Float(f64),
}

impl Lit {
    pub fn value(self) -> Value {
        match self {
            Lit::Int(v) => Value::Int(v),
            Lit::Float(v) => Value::Float(v),
        }
    }

    pub fn from_value(v: Value) -> Option<Lit> {
        match v {
            Value::Int(i) => Some(Lit::Int(i)),
            Value::Float(x) => Some(Lit::Float(x)),
            Value::Array(_) => None,
        }
    }

    pub fn as_int(self) -> Option<i64> {
        match self {
            Lit::Int(v) => Some(v),
            Lit::Float(_) => None,
        }
    }
}

impl PartialEq for Lit {
    fn eq(&self, other: &Self) -> bool {
        self.value() == other.value()
    }
}

impl Eq for Lit {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl BinOp {
    pub const ALL: [BinOp; 10] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Mod,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::Shr,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Mod => "mod",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
        }
    }

    pub fn from_keyword(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.keyword() == s)
    }

    /// Operators only defined on integers.
    pub fn int_only(self) -> bool {
        matches!(
            self,
            BinOp::And | BinOp::Or | BinOp::Xor | BinOp::Shl | BinOp::Shr
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [
        CmpOp::Eq,
        CmpOp::Ne,
        CmpOp::Lt,
        CmpOp::Le,
        CmpOp::Gt,
        CmpOp::Ge,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
        }
    }

    pub fn from_keyword(s: &str) -> Option<CmpOp> {
        CmpOp::ALL.into_iter().find(|op| op.keyword() == s)
    }

    /// The comparison that holds exactly when `self` does not.
    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }
}

/// Candidate set declared by a value specialization point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueKind {
    Enum(Vec<i64>),
    Range { lo: i64, hi: i64 },
    Generic,
}

/// A value specialization point wrapping one integer expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecValue {
    pub label: String,
    pub kind: ValueKind,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(Lit),
    Var(String),
    Load {
        array: String,
        index: Box<Expr>,
    },
    Bin {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Cmp {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        func: String,
        args: Vec<Expr>,
    },
    Spec(Box<SpecValue>),
}

impl Expr {
    pub fn int(v: i64) -> Expr {
        Expr::Lit(Lit::Int(v))
    }

    pub fn float(v: f64) -> Expr {
        Expr::Lit(Lit::Float(v))
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn load(array: impl Into<String>, index: Expr) -> Expr {
        Expr::Load {
            array: array.into(),
            index: Box::new(index),
        }
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn cmp(op: CmpOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Cmp {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn add(lhs: Expr, rhs: Expr) -> Expr {
        Expr::bin(BinOp::Add, lhs, rhs)
    }

    pub fn mul(lhs: Expr, rhs: Expr) -> Expr {
        Expr::bin(BinOp::Mul, lhs, rhs)
    }

    pub fn call(func: impl Into<String>, args: Vec<Expr>) -> Expr {
        Expr::Call {
            func: func.into(),
            args,
        }
    }

    pub fn spec(label: impl Into<String>, kind: ValueKind, expr: Expr) -> Expr {
        Expr::Spec(Box::new(SpecValue {
            label: label.into(),
            kind,
            expr,
        }))
    }

    pub fn as_lit(&self) -> Option<Lit> {
        match self {
            Expr::Lit(l) => Some(*l),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        self.as_lit().and_then(Lit::as_int)
    }

    /// Number of expression nodes, i.e. the ops charged for one evaluation.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Lit(_) | Expr::Var(_) => 1,
            Expr::Load { index, .. } => 1 + index.node_count(),
            Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
                1 + lhs.node_count() + rhs.node_count()
            }
            Expr::Call { args, .. } => 1 + args.iter().map(Expr::node_count).sum::<usize>(),
            Expr::Spec(s) => s.expr.node_count(),
        }
    }
}

/// Where an instrumentation statement stores its samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSink {
    /// Frequency table of observed values.
    Frequency,
    /// Fixed-bucket histogram over `[lo, hi]`.
    Histogram { lo: i64, hi: i64 },
    /// Frequency table of inputs plus the output observed for each input.
    Pairs,
}

/// Injected profiling statement: records `value` on every `every_k`-th
/// dynamic execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub label: String,
    pub every_k: u64,
    pub sink: SampleSink,
    pub value: Expr,
    pub output: Option<Expr>,
}

pub type Block = Vec<Stmt>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Let {
        name: String,
        value: Expr,
    },
    Assign {
        name: String,
        value: Expr,
    },
    Store {
        array: String,
        index: Expr,
        value: Expr,
    },
    If {
        cond: Expr,
        then_body: Block,
        else_body: Block,
    },
    For {
        var: String,
        lo: Expr,
        hi: Expr,
        step: Expr,
        body: Block,
    },
    While {
        cond: Expr,
        body: Block,
    },
    Return(Expr),
    Expr(Expr),
    SpecAssume {
        label: String,
        pred: Expr,
    },
    SpecCustom {
        label: String,
        kind: String,
    },
    /// Specialization guard: diverts to the generic version when `pred` is 0.
    Guard {
        label: String,
        pred: Expr,
    },
    /// Trusted assumption (an assume point enabled without a guard).
    Assume {
        label: String,
        pred: Expr,
    },
    Sample(Sample),
}

impl Stmt {
    pub fn let_(name: impl Into<String>, value: Expr) -> Stmt {
        Stmt::Let {
            name: name.into(),
            value,
        }
    }

    pub fn assign(name: impl Into<String>, value: Expr) -> Stmt {
        Stmt::Assign {
            name: name.into(),
            value,
        }
    }

    pub fn store(array: impl Into<String>, index: Expr, value: Expr) -> Stmt {
        Stmt::Store {
            array: array.into(),
            index,
            value,
        }
    }

    pub fn if_(cond: Expr, then_body: Block, else_body: Block) -> Stmt {
        Stmt::If {
            cond,
            then_body,
            else_body,
        }
    }

    pub fn for_(var: impl Into<String>, lo: Expr, hi: Expr, step: Expr, body: Block) -> Stmt {
        Stmt::For {
            var: var.into(),
            lo,
            hi,
            step,
            body,
        }
    }

    /// Sub-blocks of a compound statement, in order.
    pub fn blocks(&self) -> Vec<&Block> {
        match self {
            Stmt::If {
                then_body,
                else_body,
                ..
            } => vec![then_body, else_body],
            Stmt::For { body, .. } | Stmt::While { body, .. } => vec![body],
            _ => Vec::new(),
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Block> {
        match self {
            Stmt::If {
                then_body,
                else_body,
                ..
            } => vec![then_body, else_body],
            Stmt::For { body, .. } | Stmt::While { body, .. } => vec![body],
            _ => Vec::new(),
        }
    }

    /// Expressions evaluated directly by this statement (not by nested blocks).
    pub fn exprs(&self) -> Vec<&Expr> {
        match self {
            Stmt::Let { value, .. } | Stmt::Assign { value, .. } => vec![value],
            Stmt::Store { index, value, .. } => vec![index, value],
            Stmt::If { cond, .. } | Stmt::While { cond, .. } => vec![cond],
            Stmt::For { lo, hi, step, .. } => vec![lo, hi, step],
            Stmt::Return(e) | Stmt::Expr(e) => vec![e],
            Stmt::SpecAssume { pred, .. }
            | Stmt::Guard { pred, .. }
            | Stmt::Assume { pred, .. } => {
                vec![pred]
            }
            Stmt::SpecCustom { .. } => Vec::new(),
            Stmt::Sample(s) => {
                let mut v = vec![&s.value];
                if let Some(o) = &s.output {
                    v.push(o);
                }
                v
            }
        }
    }

    pub fn exprs_mut(&mut self) -> Vec<&mut Expr> {
        match self {
            Stmt::Let { value, .. } | Stmt::Assign { value, .. } => vec![value],
            Stmt::Store { index, value, .. } => vec![index, value],
            Stmt::If { cond, .. } | Stmt::While { cond, .. } => vec![cond],
            Stmt::For { lo, hi, step, .. } => vec![lo, hi, step],
            Stmt::Return(e) | Stmt::Expr(e) => vec![e],
            Stmt::SpecAssume { pred, .. }
            | Stmt::Guard { pred, .. }
            | Stmt::Assume { pred, .. } => {
                vec![pred]
            }
            Stmt::SpecCustom { .. } => Vec::new(),
            Stmt::Sample(s) => {
                let mut v = vec![&mut s.value];
                if let Some(o) = &mut s.output {
                    v.push(o);
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

impl Param {
    pub fn new(name: impl Into<String>, ty: Type) -> Self {
        Param {
            name: name.into(),
            ty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Type,
    pub body: Block,
}

/// Declaration of host-owned state referenced by handler code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extern {
    pub name: String,
    pub ty: Type,
    /// Declared length for arrays; checked against the host binding.
    pub len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HandlerModule {
    pub externs: Vec<Extern>,
    pub functions: Vec<Function>,
}

impl HandlerModule {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut Function> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn extern_decl(&self, name: &str) -> Option<&Extern> {
        self.externs.iter().find(|e| e.name == name)
    }

    /// Functions containing a `spec-custom` annotation, with the point label.
    pub fn custom_targets(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for f in &self.functions {
            visit::walk_stmts(&f.body, &mut |s| {
                if let Stmt::SpecCustom { label, .. } = s {
                    out.push((label.clone(), f.name.clone()));
                }
            });
        }
        out
    }

    /// Total statement count across all functions.
    pub fn stmt_count(&self) -> usize {
        self.functions
            .iter()
            .map(|f| visit::count_stmts(&f.body))
            .sum()
    }
}

/// Shared arithmetic used by both the interpreter and constant folding, so
/// folded results are bit-identical to executed ones.
pub fn eval_binop(op: BinOp, lhs: Value, rhs: Value) -> Result<Value, ExecError> {
    match (lhs, rhs) {
        (Value::Int(a), Value::Int(b)) => {
            let v = match op {
                BinOp::Add => a.wrapping_add(b),
                BinOp::Sub => a.wrapping_sub(b),
                BinOp::Mul => a.wrapping_mul(b),
                BinOp::Div => {
                    if b == 0 {
                        return Err(ExecError::DivByZero);
                    }
                    a.wrapping_div(b)
                }
                BinOp::Mod => {
                    if b == 0 {
                        return Err(ExecError::DivByZero);
                    }
                    a.wrapping_rem(b)
                }
                BinOp::And => a & b,
                BinOp::Or => a | b,
                BinOp::Xor => a ^ b,
                BinOp::Shl => a.wrapping_shl(b as u32),
                BinOp::Shr => a.wrapping_shr(b as u32),
            };
            Ok(Value::Int(v))
        }
        (Value::Float(a), Value::Float(b)) => {
            let v = match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(ExecError::DivByZero);
                    }
                    a / b
                }
                BinOp::Mod => {
                    if b == 0.0 {
                        return Err(ExecError::DivByZero);
                    }
                    a % b
                }
                _ => {
                    return Err(ExecError::TypeMismatch(format!(
                        "{} on floats",
                        op.keyword()
                    )))
                }
            };
            Ok(Value::Float(v))
        }
        _ => Err(ExecError::TypeMismatch(format!(
            "operands of {}",
            op.keyword()
        ))),
    }
}

pub fn eval_cmp(op: CmpOp, lhs: Value, rhs: Value) -> Result<Value, ExecError> {
    let ord = match (lhs, rhs) {
        (Value::Int(a), Value::Int(b)) => a.partial_cmp(&b),
        (Value::Float(a), Value::Float(b)) => a.partial_cmp(&b),
        _ => {
            return Err(ExecError::TypeMismatch(format!(
                "operands of {}",
                op.keyword()
            )))
        }
    };
    use std::cmp::Ordering::*;
    let r = match (op, ord) {
        (CmpOp::Eq, o) => o == Some(Equal),
        (CmpOp::Ne, o) => o != Some(Equal),
        (CmpOp::Lt, o) => o == Some(Less),
        (CmpOp::Le, o) => matches!(o, Some(Less | Equal)),
        (CmpOp::Gt, o) => o == Some(Greater),
        (CmpOp::Ge, o) => matches!(o, Some(Greater | Equal)),
    };
    Ok(Value::Int(r as i64))
}

#[cfg(test)]
mod tests;
