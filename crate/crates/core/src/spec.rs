//! Specialization points, spaces and configurations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ir::visit::walk_expr;
use crate::ir::{Block, Expr, HandlerModule, Stmt, ValueKind};
use crate::profile::Profiles;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpecError {
    #[error("unknown specialization point `{0}`")]
    UnknownLabel(String),
    #[error("label `{0}` is decided by both configurations")]
    Collision(String),
    #[error("invalid decision for `{label}`: {reason}")]
    InvalidDecision { label: String, reason: String },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PointKind {
    Enum(Vec<i64>),
    Range { lo: i64, hi: i64 },
    Generic,
    Assume,
    Custom(String),
}

impl PointKind {
    pub fn name(&self) -> &'static str {
        match self {
            PointKind::Enum(_) => "enum",
            PointKind::Range { .. } => "range",
            PointKind::Generic => "generic",
            PointKind::Assume => "assume",
            PointKind::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecPoint {
    pub label: String,
    pub kind: PointKind,
    pub function: String,
    /// Location of the annotated statement: its index in the function
    /// body, then for each nesting level the sub-block index followed by
    /// the statement index inside it.
    pub path: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpecSpace {
    pub points: Vec<SpecPoint>,
    pub profiles: Profiles,
}

impl SpecSpace {
    pub fn point(&self, label: &str) -> Option<&SpecPoint> {
        self.points.iter().find(|p| p.label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.points.iter().map(|p| p.label.as_str())
    }
}

fn collect_block(func: &str, b: &Block, path: &mut Vec<usize>, out: &mut Vec<SpecPoint>) {
    for (i, s) in b.iter().enumerate() {
        path.push(i);
        let mut push = |label: &str, kind: PointKind| {
            out.push(SpecPoint {
                label: label.to_string(),
                kind,
                function: func.to_string(),
                path: path.clone(),
            })
        };
        match s {
            Stmt::SpecAssume { label, .. } => push(label, PointKind::Assume),
            Stmt::SpecCustom { label, kind } => push(label, PointKind::Custom(kind.clone())),
            _ => {}
        }
        for e in s.exprs() {
            walk_expr(e, &mut |n| {
                if let Expr::Spec(sv) = n {
                    let kind = match &sv.kind {
                        ValueKind::Enum(vs) => PointKind::Enum(vs.clone()),
                        ValueKind::Range { lo, hi } => PointKind::Range { lo: *lo, hi: *hi },
                        ValueKind::Generic => PointKind::Generic,
                    };
                    push(&sv.label, kind);
                }
            });
        }
        for (bi, sub) in s.blocks().into_iter().enumerate() {
            path.push(bi);
            collect_block(func, sub, path, out);
            path.pop();
        }
        path.pop();
    }
}

/// One point per annotation, in source order.
pub fn collect_spec_points(m: &HandlerModule) -> SpecSpace {
    let mut points = Vec::new();
    for f in &m.functions {
        collect_block(&f.name, &f.body, &mut Vec::new(), &mut points);
    }
    SpecSpace {
        points,
        profiles: Profiles::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Const(i64),
    EnableAssume,
    Custom(BTreeMap<String, String>),
    Disabled,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Const(v) => write!(f, "{v}"),
            Decision::EnableAssume => f.write_str("assume"),
            Decision::Custom(params) if params.is_empty() => f.write_str("on"),
            Decision::Custom(params) => {
                let inner: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                write!(f, "on({})", inner.join(","))
            }
            Decision::Disabled => f.write_str("off"),
        }
    }
}

/// Stable identifier of a configuration's canonical text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConfigId(pub u64);

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Decisions per label plus per-label guard and sampling flags. Disabled
/// decisions are not stored, so equal configurations compare equal.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpecConfig {
    decisions: BTreeMap<String, Decision>,
    unguarded: BTreeSet<String>,
    sampling: BTreeMap<String, u64>,
}

impl SpecConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, label: &str, d: Decision) -> Self {
        self.set(label, d);
        self
    }

    pub fn set(&mut self, label: &str, d: Decision) {
        if d == Decision::Disabled {
            self.decisions.remove(label);
        } else {
            self.decisions.insert(label.to_string(), d);
        }
    }

    pub fn decision(&self, label: &str) -> &Decision {
        self.decisions.get(label).unwrap_or(&Decision::Disabled)
    }

    pub fn decisions(&self) -> &BTreeMap<String, Decision> {
        &self.decisions
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty() && self.unguarded.is_empty() && self.sampling.is_empty()
    }

    pub fn guard(&self, label: &str) -> bool {
        !self.unguarded.contains(label)
    }

    pub fn set_guard(&mut self, label: &str, on: bool) {
        if on {
            self.unguarded.remove(label);
        } else {
            self.unguarded.insert(label.to_string());
        }
    }

    pub fn without_guard(mut self, label: &str) -> Self {
        self.set_guard(label, false);
        self
    }

    /// Sampling period for an instrumented label.
    pub fn sampling(&self, label: &str) -> Option<u64> {
        self.sampling.get(label).copied()
    }

    pub fn sampled_labels(&self) -> impl Iterator<Item = (&str, u64)> {
        self.sampling.iter().map(|(l, k)| (l.as_str(), *k))
    }

    pub fn set_sampling(&mut self, label: &str, every_k: Option<u64>) {
        match every_k {
            Some(k) => {
                self.sampling.insert(label.to_string(), k.max(1));
            }
            None => {
                self.sampling.remove(label);
            }
        }
    }

    pub fn with_sampling(mut self, label: &str, every_k: u64) -> Self {
        self.set_sampling(label, Some(every_k));
        self
    }

    /// Canonical one-line text, e.g. `B=8;N=256;NmB=assume;fp=on(n=8)`.
    pub fn canonical(&self) -> String {
        let labels: BTreeSet<&str> = self
            .decisions
            .keys()
            .chain(&self.unguarded)
            .chain(self.sampling.keys())
            .map(String::as_str)
            .collect();
        let parts: Vec<String> = labels
            .into_iter()
            .map(|l| {
                let mut s = format!("{l}={}", self.decision(l));
                if !self.guard(l) {
                    s.push_str("@noguard");
                }
                if let Some(k) = self.sampling(l) {
                    s.push_str(&format!("@sample={k}"));
                }
                s
            })
            .collect();
        parts.join(";")
    }

    pub fn id(&self) -> ConfigId {
        ConfigId(fnv1a(&self.canonical()))
    }

    /// Parses the canonical text form. Whitespace around entries is ignored.
    pub fn parse(text: &str) -> Result<SpecConfig, SpecError> {
        let mut c = SpecConfig::new();
        for entry in text.split(';').map(str::trim).filter(|e| !e.is_empty()) {
            let (label, rest) = entry
                .split_once('=')
                .ok_or_else(|| SpecError::Parse(format!("`{entry}` lacks `=`")))?;
            let label = label.trim();
            if label.is_empty() {
                return Err(SpecError::Parse(format!("empty label in `{entry}`")));
            }
            let mut pieces = rest.split('@');
            let value = pieces.next().unwrap_or("").trim();
            let decision = parse_decision(value)
                .ok_or_else(|| SpecError::Parse(format!("bad value `{value}`")))?;
            c.set(label, decision);
            for flag in pieces.map(str::trim) {
                if flag == "noguard" {
                    c.set_guard(label, false);
                } else if flag == "guard" {
                    c.set_guard(label, true);
                } else if let Some(k) = flag.strip_prefix("sample=") {
                    let k: u64 = k
                        .parse()
                        .map_err(|_| SpecError::Parse(format!("bad sampling period `{k}`")))?;
                    if k == 0 {
                        return Err(SpecError::Parse("sampling period must be positive".into()));
                    }
                    c.set_sampling(label, Some(k));
                } else {
                    return Err(SpecError::Parse(format!("unknown flag `{flag}`")));
                }
            }
        }
        Ok(c)
    }

    /// Checks every decision against the declared point kinds.
    pub fn validate(&self, space: &SpecSpace) -> Result<(), SpecError> {
        let bad = |label: &str, reason: String| SpecError::InvalidDecision {
            label: label.to_string(),
            reason,
        };
        for (label, d) in &self.decisions {
            let p = space
                .point(label)
                .ok_or_else(|| SpecError::UnknownLabel(label.clone()))?;
            match (&p.kind, d) {
                (PointKind::Enum(vs), Decision::Const(v)) if !vs.contains(v) => {
                    return Err(bad(label, format!("{v} is not one of {vs:?}")));
                }
                (PointKind::Range { lo, hi }, Decision::Const(v)) if v < lo || v > hi => {
                    return Err(bad(label, format!("{v} is outside [{lo}, {hi}]")));
                }
                (
                    PointKind::Enum(_) | PointKind::Range { .. } | PointKind::Generic,
                    Decision::Const(_),
                ) => {}
                (PointKind::Assume, Decision::EnableAssume) => {}
                (PointKind::Custom(_), Decision::Custom(_)) => {}
                (k, d) => {
                    return Err(bad(
                        label,
                        format!("`{d}` does not apply to a {} point", k.name()),
                    ))
                }
            }
        }
        for label in self.unguarded.iter() {
            space
                .point(label)
                .ok_or_else(|| SpecError::UnknownLabel(label.clone()))?;
        }
        for label in self.sampling.keys() {
            let p = space
                .point(label)
                .ok_or_else(|| SpecError::UnknownLabel(label.clone()))?;
            if p.kind == PointKind::Assume {
                return Err(bad(
                    label,
                    "assumption points cannot be instrumented".into(),
                ));
            }
        }
        Ok(())
    }

    /// Merges two configurations with disjoint labels.
    pub fn merge(&self, other: &SpecConfig) -> Result<SpecConfig, SpecError> {
        let mut out = self.clone();
        let mine: BTreeSet<&String> = self
            .decisions
            .keys()
            .chain(&self.unguarded)
            .chain(self.sampling.keys())
            .collect();
        for l in other
            .decisions
            .keys()
            .chain(&other.unguarded)
            .chain(other.sampling.keys())
        {
            if mine.contains(l) {
                return Err(SpecError::Collision(l.clone()));
            }
        }
        out.decisions.extend(other.decisions.clone());
        out.unguarded.extend(other.unguarded.iter().cloned());
        out.sampling.extend(other.sampling.clone());
        Ok(out)
    }
}

impl fmt::Display for SpecConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

fn parse_decision(v: &str) -> Option<Decision> {
    match v {
        "assume" => return Some(Decision::EnableAssume),
        "on" => return Some(Decision::Custom(BTreeMap::new())),
        "off" | "disabled" => return Some(Decision::Disabled),
        _ => {}
    }
    if let Some(inner) = v.strip_prefix("on(").and_then(|r| r.strip_suffix(')')) {
        let mut params = BTreeMap::new();
        for kv in inner.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, val) = kv.split_once('=')?;
            params.insert(k.trim().to_string(), val.trim().to_string());
        }
        return Some(Decision::Custom(params));
    }
    v.parse().ok().map(Decision::Const)
}

/// `n` evenly spaced values across `[lo, hi]`, endpoints included.
pub fn range_samples(lo: i64, hi: i64, n: usize) -> Vec<i64> {
    if n <= 1 || lo == hi {
        return vec![lo];
    }
    let span = hi as i128 - lo as i128;
    let mut out: Vec<i64> = (0..n as i128)
        .map(|i| (lo as i128 + span * i / (n as i128 - 1)) as i64)
        .collect();
    out.dedup();
    out
}

/// Cartesian product of per-point choices in source order, first point
/// outermost. Each point contributes its values followed by Disabled;
/// custom points are left to the policy.
pub fn enumerate_configs(
    space: &SpecSpace,
    generic_values: &BTreeMap<String, Vec<i64>>,
    range_count: usize,
) -> Result<Vec<SpecConfig>, SpecError> {
    for (label, vals) in generic_values {
        let p = space
            .point(label)
            .ok_or_else(|| SpecError::UnknownLabel(label.clone()))?;
        match &p.kind {
            PointKind::Generic => {}
            PointKind::Range { lo, hi } => {
                if let Some(v) = vals.iter().find(|v| *v < lo || *v > hi) {
                    return Err(SpecError::InvalidDecision {
                        label: label.clone(),
                        reason: format!("{v} is outside [{lo}, {hi}]"),
                    });
                }
            }
            k => {
                return Err(SpecError::InvalidDecision {
                    label: label.clone(),
                    reason: format!("values cannot be supplied for a {} point", k.name()),
                })
            }
        }
    }
    let mut configs = vec![SpecConfig::new()];
    for p in &space.points {
        let mut choices: Vec<Decision> = match &p.kind {
            PointKind::Enum(vs) => vs.iter().map(|&v| Decision::Const(v)).collect(),
            PointKind::Range { lo, hi } => match generic_values.get(&p.label) {
                Some(vs) => vs.iter().map(|&v| Decision::Const(v)).collect(),
                None => range_samples(*lo, *hi, range_count)
                    .into_iter()
                    .map(Decision::Const)
                    .collect(),
            },
            PointKind::Generic => generic_values
                .get(&p.label)
                .map(|vs| vs.iter().map(|&v| Decision::Const(v)).collect())
                .unwrap_or_default(),
            PointKind::Assume => vec![Decision::EnableAssume],
            PointKind::Custom(_) => continue,
        };
        choices.push(Decision::Disabled);
        configs = configs
            .iter()
            .flat_map(|c| {
                choices
                    .iter()
                    .map(move |d| c.clone().with(&p.label, d.clone()))
            })
            .collect();
    }
    Ok(configs)
}

/// Pairwise merge of two configuration lists, `a`-major.
pub fn cartesian(a: &[SpecConfig], b: &[SpecConfig]) -> Result<Vec<SpecConfig>, SpecError> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x.merge(y)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn space_of(src: &str) -> SpecSpace {
        collect_spec_points(&parse_module(src).unwrap())
    }

    fn b_space() -> SpecSpace {
        space_of("(fn f (b:int) -> int (return (spec-enum B b 2 4 8 16 32 64)))")
    }

    #[test]
    fn collects_points_in_source_order() {
        let s = space_of(
            "(fn f (n:int b:int) -> int
               (let x (spec-enum B b 2 4))
               (if (gt n 0) (then (spec-assume NmB (eq (mod n x) 0))))
               (spec-custom fp fastpath)
               (return (add (spec-generic N n) (spec-range R x 1 8))))",
        );
        let kinds: Vec<(&str, &PointKind)> = s
            .points
            .iter()
            .map(|p| (p.label.as_str(), &p.kind))
            .collect();
        assert_eq!(
            kinds,
            vec![
                ("B", &PointKind::Enum(vec![2, 4])),
                ("NmB", &PointKind::Assume),
                ("fp", &PointKind::Custom("fastpath".into())),
                ("N", &PointKind::Generic),
                ("R", &PointKind::Range { lo: 1, hi: 8 }),
            ]
        );
        assert_eq!(s.points[1].path, vec![1, 0, 0]);
        assert!(space_of("(fn f () -> int (return 1))").points.is_empty());
    }

    #[test]
    fn enum_space_has_seven_configs() {
        let cs = enumerate_configs(&b_space(), &BTreeMap::new(), 1).unwrap();
        assert_eq!(cs.len(), 7);
        assert_eq!(cs[0].canonical(), "B=2");
        assert_eq!(cs[6], SpecConfig::new());
    }

    #[test]
    fn empty_space_has_one_config() {
        let cs = enumerate_configs(&SpecSpace::default(), &BTreeMap::new(), 3).unwrap();
        assert_eq!(cs, vec![SpecConfig::new()]);
    }

    #[test]
    fn generic_values_extend_the_product() {
        let s = space_of(
            "(fn f (b:int n:int) -> int (return (add (spec-enum B b 2 4) (spec-generic N n))))",
        );
        let gv = BTreeMap::from([("N".to_string(), vec![256])]);
        let cs = enumerate_configs(&s, &gv, 1).unwrap();
        assert_eq!(cs.len(), 6);
        assert_eq!(cs[0].canonical(), "B=2;N=256");
        assert_eq!(enumerate_configs(&s, &BTreeMap::new(), 1).unwrap().len(), 3);
    }

    #[test]
    fn enumerate_rejects_bad_generic_values() {
        let s = space_of("(fn f (b:int) -> int (return (spec-range R b 1 8)))");
        let out_of_range = BTreeMap::from([("R".to_string(), vec![9])]);
        assert!(enumerate_configs(&s, &out_of_range, 2).is_err());
        let unknown = BTreeMap::from([("Q".to_string(), vec![1])]);
        assert_eq!(
            enumerate_configs(&s, &unknown, 2),
            Err(SpecError::UnknownLabel("Q".into()))
        );
        assert_eq!(enumerate_configs(&s, &BTreeMap::new(), 3).unwrap().len(), 4);
    }

    #[test]
    fn assume_points_toggle() {
        let s = space_of("(fn f (n:int) -> int (spec-assume P (gt n 0)) (return n))");
        let cs = enumerate_configs(&s, &BTreeMap::new(), 1).unwrap();
        assert_eq!(
            cs.iter().map(|c| c.canonical()).collect::<Vec<_>>(),
            vec!["P=assume", ""]
        );
    }

    #[test]
    fn cartesian_counts_and_identity() {
        let b = enumerate_configs(&b_space(), &BTreeMap::new(), 1).unwrap();
        let b6 = &b[..6];
        let n = vec![
            SpecConfig::new(),
            SpecConfig::new().with("N", Decision::Const(256)),
        ];
        assert_eq!(cartesian(b6, &n).unwrap().len(), 12);
        assert_eq!(cartesian(b6, &[SpecConfig::new()]).unwrap(), b6.to_vec());
        let clash = [SpecConfig::new().with("B", Decision::Const(4))];
        assert_eq!(cartesian(b6, &clash), Err(SpecError::Collision("B".into())));
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = SpecConfig::parse("N=256; B=8@noguard;fp=on(n=8);NmB=assume;X=off;S=off@sample=10")
            .unwrap();
        assert_eq!(
            c.canonical(),
            "B=8@noguard;N=256;NmB=assume;S=off@sample=10;fp=on(n=8)"
        );
        assert_eq!(SpecConfig::parse(&c.canonical()).unwrap(), c);
        assert_eq!(c.decision("X"), &Decision::Disabled);
        assert!(!c.guard("B"));
        assert_eq!(c.sampling("S"), Some(10));
        assert!(SpecConfig::parse("B").is_err());
        assert!(SpecConfig::parse("B=x").is_err());
        assert!(SpecConfig::parse("B=1@sample=0").is_err());
    }

    #[test]
    fn ids_distinguish_configs() {
        let cs = enumerate_configs(&b_space(), &BTreeMap::new(), 1).unwrap();
        let ids: BTreeSet<ConfigId> = cs.iter().map(SpecConfig::id).collect();
        assert_eq!(ids.len(), cs.len());
        let a = SpecConfig::parse("B=8").unwrap();
        assert_eq!(a.id(), SpecConfig::new().with("B", Decision::Const(8)).id());
    }

    #[test]
    fn validation_checks_domains() {
        let s = space_of(
            "(fn f (b:int n:int) -> int (spec-assume P (gt n 0)) (return (add (spec-enum B b 2 4) (spec-range R n 1 8))))",
        );
        assert!(SpecConfig::parse("B=4;R=8;P=assume")
            .unwrap()
            .validate(&s)
            .is_ok());
        assert!(SpecConfig::parse("B=3").unwrap().validate(&s).is_err());
        assert!(SpecConfig::parse("R=9").unwrap().validate(&s).is_err());
        assert!(SpecConfig::parse("P=1").unwrap().validate(&s).is_err());
        assert!(SpecConfig::parse("B=assume").unwrap().validate(&s).is_err());
        assert!(SpecConfig::parse("Z=1").unwrap().validate(&s).is_err());
        assert!(SpecConfig::parse("P=off@sample=3")
            .unwrap()
            .validate(&s)
            .is_err());
    }

    #[test]
    fn range_sampling_is_even() {
        assert_eq!(range_samples(1, 64, 4), vec![1, 22, 43, 64]);
        assert_eq!(range_samples(1, 3, 10), vec![1, 2, 3]);
        assert_eq!(range_samples(5, 9, 1), vec![5]);
    }
}
