//! Developer-defined generators for `spec-custom` points: a memoizing
//! fast path over the hottest inputs, and a longest-prefix-match lookup
//! compiled into a tree of nested prefix checks.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

use crate::ir::{BinOp, CmpOp, Expr, Function, Param, Stmt, Type};
use crate::profile::ValueProfile;
use crate::specializer::CustomGenerator;

/// Result of a lookup that matches no rule.
pub const NO_MATCH: i64 = -1;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CustomError {
    #[error("key {key} observed with conflicting outputs; target is not pure")]
    ConflictingOutputs { key: i64 },
    #[error("prefix {prefix}/{len} has bits set beyond its length")]
    NonCanonical { prefix: Ipv4Addr, len: u8 },
    #[error("prefix length {0} exceeds 32")]
    LengthTooLarge(u8),
    #[error("duplicate rule {prefix}/{len}")]
    DuplicateRule { prefix: Ipv4Addr, len: u8 },
    #[error("unsupported target: {0}")]
    BadTarget(String),
    #[error("bad parameter `{name}`: {reason}")]
    BadParam { name: String, reason: String },
    #[error("cannot parse rule `{0}`")]
    RuleSyntax(String),
}

/// The single `int -> int` parameter a generated function is keyed on.
fn key_param(target: &Function) -> Result<&Param, CustomError> {
    match target.params.as_slice() {
        [p] if p.ty == Type::Int && target.ret == Type::Int => Ok(p),
        _ => Err(CustomError::BadTarget(format!(
            "`{}` must take one int and return int",
            target.name
        ))),
    }
}

/// Prepends equality checks for the first `n` distinct keys of `pairs`,
/// each returning its memoized output. Misses fall through to the
/// original body.
pub fn gen_fastpath(
    pairs: &[(i64, i64)],
    n: usize,
    target: &Function,
) -> Result<Function, CustomError> {
    if n == 0 {
        return Ok(target.clone());
    }
    let key = key_param(target)?.name.clone();
    let mut seen: BTreeMap<i64, i64> = BTreeMap::new();
    let mut arms = Vec::new();
    for &(k, out) in pairs {
        match seen.get(&k) {
            Some(&prev) if prev != out => return Err(CustomError::ConflictingOutputs { key: k }),
            Some(_) => {}
            None => {
                seen.insert(k, out);
                if arms.len() < n {
                    arms.push((k, out));
                }
            }
        }
    }
    let mut body = target.body.clone();
    for (k, out) in arms.into_iter().rev() {
        let hit = Expr::cmp(CmpOp::Eq, Expr::var(key.clone()), Expr::int(k));
        body = vec![Stmt::if_(hit, vec![Stmt::Return(Expr::int(out))], body)];
    }
    Ok(Function {
        body,
        ..target.clone()
    })
}

/// One routing rule over 32-bit addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LpmRule {
    pub prefix: u32,
    pub len: u8,
    pub value: i64,
}

impl LpmRule {
    pub fn new(prefix: u32, len: u8, value: i64) -> Self {
        LpmRule { prefix, len, value }
    }

    pub fn mask(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - u32::from(len.min(32)))
        }
    }

    pub fn matches(&self, addr: u32) -> bool {
        addr & Self::mask(self.len) == self.prefix
    }

    /// Rejects lengths over 32 and prefixes with bits past the length.
    pub fn check(&self) -> Result<(), CustomError> {
        if self.len > 32 {
            return Err(CustomError::LengthTooLarge(self.len));
        }
        if self.prefix & !Self::mask(self.len) != 0 {
            return Err(CustomError::NonCanonical {
                prefix: Ipv4Addr::from(self.prefix),
                len: self.len,
            });
        }
        Ok(())
    }

    /// Parses `A.B.C.D/len value`.
    pub fn parse_line(line: &str) -> Result<LpmRule, CustomError> {
        line.parse()
    }
}

impl FromStr for LpmRule {
    type Err = CustomError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CustomError::RuleSyntax(s.to_string());
        let mut words = s.split_whitespace();
        let (net, value) = match (words.next(), words.next(), words.next()) {
            (Some(n), Some(v), None) => (n, v),
            _ => return Err(bad()),
        };
        let (addr, len) = net.split_once('/').ok_or_else(bad)?;
        let addr: Ipv4Addr = addr.parse().map_err(|_| bad())?;
        let len: u8 = len.parse().map_err(|_| bad())?;
        let rule = LpmRule {
            prefix: u32::from(addr),
            len,
            value: value.parse().map_err(|_| bad())?,
        };
        rule.check()?;
        Ok(rule)
    }
}

impl fmt::Display for LpmRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} {}",
            Ipv4Addr::from(self.prefix),
            self.len,
            self.value
        )
    }
}

/// Parses a rule file: one rule per line, `#` comments and blank lines
/// ignored.
pub fn parse_rules(text: &str) -> Result<Vec<LpmRule>, CustomError> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::parse)
        .collect()
}

fn check_rules(rules: &[LpmRule]) -> Result<(), CustomError> {
    let mut seen = std::collections::BTreeSet::new();
    for r in rules {
        r.check()?;
        if !seen.insert((r.prefix, r.len)) {
            return Err(CustomError::DuplicateRule {
                prefix: Ipv4Addr::from(r.prefix),
                len: r.len,
            });
        }
    }
    Ok(())
}

fn prefix_test(addr: &str, r: &LpmRule) -> Expr {
    let masked = Expr::bin(
        BinOp::And,
        Expr::var(addr),
        Expr::int(i64::from(LpmRule::mask(r.len))),
    );
    Expr::cmp(CmpOp::Eq, masked, Expr::int(i64::from(r.prefix)))
}

fn subtree(addr: &str, idx: usize, rules: &[LpmRule], children: &[Vec<usize>]) -> Stmt {
    let r = &rules[idx];
    let mut then_body: Vec<Stmt> = children[idx]
        .iter()
        .map(|&c| subtree(addr, c, rules, children))
        .collect();
    then_body.push(Stmt::Return(Expr::int(r.value)));
    Stmt::if_(prefix_test(addr, r), then_body, Vec::new())
}

/// Compiles `rules` into `lookup(addr:int) -> int`. Each rule becomes a
/// prefix check whose body tests the strictly more specific rules it
/// contains before returning its own value, so the longest match wins.
/// Siblings are disjoint and tested least specific first.
pub fn gen_lpm_nested_if(rules: &[LpmRule]) -> Result<Function, CustomError> {
    check_rules(rules)?;
    let mut sorted = rules.to_vec();
    sorted.sort_by_key(|r| (r.len, r.prefix));
    let mut children = vec![Vec::new(); sorted.len()];
    let mut roots = Vec::new();
    for i in 0..sorted.len() {
        let r = sorted[i];
        // Most specific strictly shorter rule covering this one.
        let parent = (0..i)
            .rev()
            .find(|&j| sorted[j].len < r.len && sorted[j].matches(r.prefix));
        match parent {
            Some(p) => children[p].push(i),
            None => roots.push(i),
        }
    }
    let mut body: Vec<Stmt> = roots
        .iter()
        .map(|&i| subtree("addr", i, &sorted, &children))
        .collect();
    body.push(Stmt::Return(Expr::int(NO_MATCH)));
    Ok(Function {
        name: "lookup".into(),
        params: vec![Param::new("addr", Type::Int)],
        ret: Type::Int,
        body,
    })
}

fn param_usize(
    params: &BTreeMap<String, String>,
    name: &str,
    default: usize,
) -> Result<usize, String> {
    match params.get(name) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| {
            CustomError::BadParam {
                name: name.into(),
                reason: format!("`{v}` is not a count"),
            }
            .to_string()
        }),
    }
}

/// Fast-path generator over a pairs profile. Parameter `n` (default 8)
/// bounds the number of memoized keys.
#[derive(Debug, Clone, Copy, Default)]
pub struct FastPathGenerator;

pub const FASTPATH_KIND: &str = "fastpath";
pub const LPM_NI_KIND: &str = "lpm-ni";
pub const DEFAULT_FASTPATH_N: usize = 8;

impl CustomGenerator for FastPathGenerator {
    fn generate(
        &self,
        target: &Function,
        params: &BTreeMap<String, String>,
        profile: Option<&ValueProfile>,
    ) -> Result<Function, String> {
        let n = param_usize(params, "n", DEFAULT_FASTPATH_N)?;
        let mut pairs = Vec::new();
        if let Some(table) = profile.and_then(ValueProfile::as_frequency) {
            for (key, _) in table.top_n(n) {
                if table.is_conflicting(key) {
                    return Err(CustomError::ConflictingOutputs { key }.to_string());
                }
                if let Some(out) = table.output(key) {
                    pairs.push((key, out));
                }
            }
        }
        gen_fastpath(&pairs, n, target).map_err(|e| e.to_string())
    }
}

/// Replaces its target with the nested-if compilation of a fixed rule set.
#[derive(Debug, Clone)]
pub struct LpmNestedIfGenerator {
    pub rules: Vec<LpmRule>,
}

impl CustomGenerator for LpmNestedIfGenerator {
    fn generate(
        &self,
        target: &Function,
        _params: &BTreeMap<String, String>,
        _profile: Option<&ValueProfile>,
    ) -> Result<Function, String> {
        let key = key_param(target).map_err(|e| e.to_string())?.name.clone();
        let mut f = gen_lpm_nested_if(&self.rules).map_err(|e| e.to_string())?;
        if key != "addr" {
            for s in &mut f.body {
                rename_addr(s, &key);
            }
        }
        f.name = target.name.clone();
        f.params = target.params.clone();
        Ok(f)
    }
}

fn rename_addr(s: &mut Stmt, to: &str) {
    let with = Expr::var(to);
    for e in s.exprs_mut() {
        crate::ir::visit::substitute_var(e, "addr", &with);
    }
    for b in s.blocks_mut() {
        for inner in b {
            rename_addr(inner, to);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{interpret, parse_module, validate_module, HandlerModule, HostState, Value};

    fn ip(s: &str) -> u32 {
        u32::from(s.parse::<Ipv4Addr>().unwrap())
    }

    fn run(f: &Function, arg: impl Into<i64>) -> (i64, u64) {
        let m = HandlerModule {
            externs: vec![],
            functions: vec![f.clone()],
        };
        let (v, ops) = interpret(
            &m,
            &f.name,
            &[Value::Int(arg.into())],
            &mut HostState::new(),
        )
        .unwrap();
        (v.as_int().unwrap(), ops)
    }

    fn sample_rules() -> Vec<LpmRule> {
        vec![
            LpmRule::new(0, 0, 1),
            LpmRule::new(ip("10.0.0.0"), 8, 2),
            LpmRule::new(ip("10.1.0.0"), 16, 3),
        ]
    }

    #[test]
    fn nested_if_longest_match() {
        let f = gen_lpm_nested_if(&sample_rules()).unwrap();
        validate_module(&HandlerModule {
            externs: vec![],
            functions: vec![f.clone()],
        })
        .unwrap();
        assert_eq!(run(&f, ip("10.1.2.3")).0, 3);
        assert_eq!(run(&f, ip("10.2.0.1")).0, 2);
        assert_eq!(run(&f, ip("192.168.0.1")).0, 1);
        assert_eq!(crate::ir::visit::count_stmts(&f.body), 2 * 3 + 1);
    }

    #[test]
    fn nested_if_empty_is_sentinel() {
        let f = gen_lpm_nested_if(&[]).unwrap();
        assert_eq!(f.body, vec![Stmt::Return(Expr::int(NO_MATCH))]);
    }

    #[test]
    fn nested_if_rejects_bad_rules() {
        assert!(matches!(
            gen_lpm_nested_if(&[LpmRule::new(1, 8, 0)]),
            Err(CustomError::NonCanonical { .. })
        ));
        assert_eq!(
            gen_lpm_nested_if(&[LpmRule::new(0, 33, 0)]),
            Err(CustomError::LengthTooLarge(33))
        );
        let dup = [LpmRule::new(0, 0, 1), LpmRule::new(0, 0, 2)];
        assert!(matches!(
            gen_lpm_nested_if(&dup),
            Err(CustomError::DuplicateRule { .. })
        ));
    }

    #[test]
    fn rule_text_round_trip() {
        let r: LpmRule = "10.1.0.0/16 3".parse().unwrap();
        assert_eq!(r, LpmRule::new(ip("10.1.0.0"), 16, 3));
        assert_eq!(r.to_string(), "10.1.0.0/16 3");
        assert!("10.1.0.1/16 3".parse::<LpmRule>().is_err());
        assert!("10.1.0.0 3".parse::<LpmRule>().is_err());
        let rules = parse_rules("# table\n0.0.0.0/0 1\n\n10.0.0.0/8 2 # inline\n").unwrap();
        assert_eq!(rules.len(), 2);
    }

    fn square() -> Function {
        parse_module("(fn sq (x:int) -> int (return (mul x x)))")
            .unwrap()
            .functions
            .remove(0)
    }

    #[test]
    fn fastpath_chain() {
        let f = gen_fastpath(&[(3, 9), (5, 25), (3, 9)], 2, &square()).unwrap();
        for x in -10i64..10 {
            assert_eq!(run(&f, x).0, x * x, "x={x}");
        }
        let (_, hit) = run(&f, 3);
        let (_, miss) = run(&f, 7);
        assert!(hit < miss);
    }

    #[test]
    fn fastpath_identity_and_errors() {
        assert_eq!(gen_fastpath(&[(1, 1)], 0, &square()).unwrap(), square());
        assert_eq!(
            gen_fastpath(&[(2, 4), (2, 5)], 4, &square()),
            Err(CustomError::ConflictingOutputs { key: 2 })
        );
        let two = parse_module("(fn g (a:int b:int) -> int (return a))")
            .unwrap()
            .functions
            .remove(0);
        assert!(matches!(
            gen_fastpath(&[(1, 1)], 1, &two),
            Err(CustomError::BadTarget(_))
        ));
    }

    #[test]
    fn fastpath_generator_uses_top_keys() {
        let mut p = ValueProfile::frequency(1);
        for (k, times) in [(4, 5), (6, 3), (9, 1)] {
            for _ in 0..times {
                p.record_pair(k, k * k);
            }
        }
        let params = BTreeMap::from([("n".to_string(), "2".to_string())]);
        let f = FastPathGenerator
            .generate(&square(), &params, Some(&p))
            .unwrap();
        let text = crate::ir::print_module(&HandlerModule {
            externs: vec![],
            functions: vec![f],
        });
        assert!(
            text.contains("(eq x 4)") && text.contains("(eq x 6)") && !text.contains("(eq x 9)")
        );
        let bad = BTreeMap::from([("n".to_string(), "many".to_string())]);
        assert!(FastPathGenerator
            .generate(&square(), &bad, Some(&p))
            .is_err());
    }

    #[test]
    fn nested_if_generator_renames_key() {
        let target = parse_module("(fn route (dst:int) -> int (return -1))")
            .unwrap()
            .functions
            .remove(0);
        let g = LpmNestedIfGenerator {
            rules: sample_rules(),
        };
        let f = g.generate(&target, &BTreeMap::new(), None).unwrap();
        assert_eq!(f.name, "route");
        assert_eq!(run(&f, ip("10.1.9.9")).0, 3);
    }
}
