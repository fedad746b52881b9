//! Semantics-preserving pass pipeline over handler modules.
//!
//! Passes work one function at a time. None of them removes a reachable
//! guard or folds an operation that would trap, so a specialized module
//! returns the same value, trap, or guard failure before and after.

mod algebraic;
mod branch_fold;
mod const_prop;
mod dce;
mod unroll;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ir::visit::count_stmts;
use crate::ir::{HandlerModule, Stmt};
use crate::specializer::SpecializedModule;

pub use const_prop::fold_expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pass {
    ConstProp,
    BranchFold,
    LoopUnroll,
    Dce,
    Algebraic,
}

impl Pass {
    pub const ALL: [Pass; 5] = [
        Pass::ConstProp,
        Pass::BranchFold,
        Pass::LoopUnroll,
        Pass::Dce,
        Pass::Algebraic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pass::ConstProp => "const_prop",
            Pass::BranchFold => "branch_fold",
            Pass::LoopUnroll => "loop_unroll",
            Pass::Dce => "dce",
            Pass::Algebraic => "algebraic",
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown pass `{0}` (expected const_prop, branch_fold, loop_unroll, dce, algebraic, default or none)")]
pub struct UnknownPass(pub String);

impl FromStr for Pass {
    type Err = UnknownPass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pass::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| UnknownPass(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassPipeline {
    pub passes: Vec<Pass>,
    /// Largest trip count a loop may have to be fully unrolled.
    pub max_unroll: u64,
    /// Unrolling stops once a function exceeds this multiple of its
    /// statement count at pipeline start.
    pub max_growth: usize,
}

impl Default for PassPipeline {
    fn default() -> Self {
        default_pipeline()
    }
}

impl PassPipeline {
    pub fn new(passes: Vec<Pass>) -> Self {
        PassPipeline {
            passes,
            max_unroll: 64,
            max_growth: 32,
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    /// Parses a comma-separated pass list; `default` expands to the
    /// default pipeline and `none` (or an empty list) is the identity.
    pub fn parse(text: &str) -> Result<Self, UnknownPass> {
        let mut passes = Vec::new();
        for name in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "default" => passes.extend(default_pipeline().passes),
                "none" => {}
                other => passes.push(other.parse()?),
            }
        }
        Ok(Self::new(passes))
    }
}

impl fmt::Display for PassPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.passes.iter().map(|p| p.name()).collect();
        f.write_str(&names.join(","))
    }
}

pub fn default_pipeline() -> PassPipeline {
    PassPipeline::new(vec![
        Pass::ConstProp,
        Pass::BranchFold,
        Pass::LoopUnroll,
        Pass::ConstProp,
        Pass::Algebraic,
        Pass::Dce,
    ])
}

/// Note from a pass that declined to transform something.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassDiagnostic {
    pub pass: Pass,
    pub function: String,
    pub message: String,
}

impl fmt::Display for PassDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in `{}`: {}", self.pass, self.function, self.message)
    }
}

/// Per-function state shared by the passes.
pub(crate) struct FnCtx<'a> {
    pub externs: &'a BTreeSet<String>,
    pub function: String,
    pub max_unroll: u64,
    pub stmt_budget: usize,
    pub diagnostics: Vec<PassDiagnostic>,
}

impl FnCtx<'_> {
    pub fn is_local(&self, name: &str) -> bool {
        !self.externs.contains(name)
    }
}

/// True if every path through `b` ends in a return.
pub(crate) fn always_returns(b: &[Stmt]) -> bool {
    b.iter().any(|s| match s {
        Stmt::Return(_) => true,
        Stmt::If {
            then_body,
            else_body,
            ..
        } => always_returns(then_body) && always_returns(else_body),
        _ => false,
    })
}

/// Runs `p` over every function of the module.
pub fn optimize_module(
    m: &HandlerModule,
    p: &PassPipeline,
) -> (HandlerModule, Vec<PassDiagnostic>) {
    let externs: BTreeSet<String> = m.externs.iter().map(|e| e.name.clone()).collect();
    let mut out = m.clone();
    let mut diagnostics = Vec::new();
    for f in &mut out.functions {
        let mut ctx = FnCtx {
            externs: &externs,
            function: f.name.clone(),
            max_unroll: p.max_unroll,
            stmt_budget: count_stmts(&f.body).max(1).saturating_mul(p.max_growth),
            diagnostics: Vec::new(),
        };
        for pass in &p.passes {
            let body = std::mem::take(&mut f.body);
            f.body = match pass {
                Pass::ConstProp => const_prop::run(body, &ctx),
                Pass::BranchFold => branch_fold::run(body, &ctx),
                Pass::LoopUnroll => unroll::run(body, &mut ctx),
                Pass::Dce => dce::run(body, &ctx),
                Pass::Algebraic => algebraic::run(body),
            };
        }
        diagnostics.extend(ctx.diagnostics);
    }
    for d in &diagnostics {
        log::debug!("{d}");
    }
    (out, diagnostics)
}

/// Optimizes a specialized module. Guard sites and assume facts are
/// carried over unchanged.
pub fn run_pipeline(sm: &SpecializedModule, p: &PassPipeline) -> SpecializedModule {
    run_pipeline_with_diagnostics(sm, p).0
}

pub fn run_pipeline_with_diagnostics(
    sm: &SpecializedModule,
    p: &PassPipeline,
) -> (SpecializedModule, Vec<PassDiagnostic>) {
    let (module, diags) = optimize_module(&sm.module, p);
    (
        SpecializedModule {
            module,
            ..sm.clone()
        },
        diags,
    )
}

#[cfg(test)]
mod tests;
