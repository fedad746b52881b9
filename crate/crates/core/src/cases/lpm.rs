//! Longest-prefix-match lookup over a host rule table, in four variants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::custom::{
    CustomError, FastPathGenerator, LpmNestedIfGenerator, LpmRule, FASTPATH_KIND, LPM_NI_KIND,
};
use crate::ir::{parse_module, HandlerModule, HostState, Value};
use crate::spec::{Decision, SpecConfig};
use crate::specializer::CustomRegistry;

pub const HANDLER: &str = "lookup";
pub const FP_LABEL: &str = "fp";
pub const NI_LABEL: &str = "ni";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LpmVariant {
    Baseline,
    FastPath,
    NestedIf,
    NestedIfFastPath,
}

impl LpmVariant {
    pub const ALL: [LpmVariant; 4] = [
        LpmVariant::Baseline,
        LpmVariant::FastPath,
        LpmVariant::NestedIf,
        LpmVariant::NestedIfFastPath,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LpmVariant::Baseline => "none",
            LpmVariant::FastPath => "fp",
            LpmVariant::NestedIf => "ni",
            LpmVariant::NestedIfFastPath => "ni-fp",
        }
    }

    fn has_fp(self) -> bool {
        matches!(self, LpmVariant::FastPath | LpmVariant::NestedIfFastPath)
    }

    fn has_ni(self) -> bool {
        matches!(self, LpmVariant::NestedIf | LpmVariant::NestedIfFastPath)
    }

    /// Configuration turning on every custom point of the variant, with a
    /// fast path over the `n` hottest keys.
    pub fn config(self, n: usize) -> SpecConfig {
        let mut c = SpecConfig::new();
        if self.has_ni() {
            c.set(NI_LABEL, Decision::Custom(BTreeMap::new()));
        }
        if self.has_fp() {
            c.set(
                FP_LABEL,
                Decision::Custom(BTreeMap::from([("n".to_string(), n.to_string())])),
            );
        }
        c
    }
}

impl fmt::Display for LpmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LpmVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LpmVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown LPM variant `{s}` (expected none, fp, ni or ni-fp)"))
    }
}

/// Linear scan keeping the longest matching rule. The nested-if point
/// comes first so a fast path, when both are on, wraps the generated
/// tree.
fn source(variant: LpmVariant) -> String {
    let mut points = String::new();
    if variant.has_ni() {
        points.push_str(&format!("(spec-custom {NI_LABEL} {LPM_NI_KIND})\n"));
    }
    if variant.has_fp() {
        points.push_str(&format!("(spec-custom {FP_LABEL} {FASTPATH_KIND})\n"));
    }
    format!(
        r#"
(module
  (extern P int[])
  (extern M int[])
  (extern LN int[])
  (extern V int[])
  (extern NR int)
  (fn lookup (addr:int) -> int
    {points}
    (let best -1)
    (let bestlen -1)
    (for r 0 NR 1
      (if (eq (and addr (load M r)) (load P r))
        (then
          (if (gt (load LN r) bestlen)
            (then
              (set best (load V r))
              (set bestlen (load LN r)))))))
    (return best)))
"#
    )
}

pub fn build_lpm(variant: LpmVariant, rules: &[LpmRule]) -> Result<HandlerModule, CustomError> {
    crate::custom::gen_lpm_nested_if(rules)?;
    Ok(parse_module(&source(variant)).expect("lpm source parses"))
}

/// Host arrays holding the rule table.
pub fn host(rules: &[LpmRule]) -> HostState {
    let mut h = HostState::new();
    let col = |f: &dyn Fn(&LpmRule) -> i64| rules.iter().map(f).collect::<Vec<i64>>();
    h.add_int_array("P", col(&|r| i64::from(r.prefix)))
        .expect("fresh host");
    h.add_int_array("M", col(&|r| i64::from(LpmRule::mask(r.len))))
        .expect("fresh host");
    h.add_int_array("LN", col(&|r| i64::from(r.len)))
        .expect("fresh host");
    h.add_int_array("V", col(&|r| r.value)).expect("fresh host");
    h.add_scalar("NR", Value::Int(rules.len() as i64))
        .expect("fresh host");
    h
}

/// Generators for both custom points over `rules`.
pub fn registry(rules: &[LpmRule]) -> CustomRegistry {
    let mut reg = CustomRegistry::new();
    reg.register(FASTPATH_KIND, Arc::new(FastPathGenerator))
        .expect("fresh registry");
    reg.register(
        LPM_NI_KIND,
        Arc::new(LpmNestedIfGenerator {
            rules: rules.to_vec(),
        }),
    )
    .expect("fresh registry");
    reg
}

/// `count` distinct canonical rules with lengths in `[8, 32]`, plus a
/// `/0` default rule when `with_default` is set. Values are rule indices.
pub fn random_rules(count: usize, with_default: bool, seed: u64) -> Vec<LpmRule> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut rules = Vec::with_capacity(count + 1);
    if with_default {
        seen.insert((0u32, 0u8));
        rules.push(LpmRule::new(0, 0, 0));
    }
    while rules.len() < count + usize::from(with_default) {
        let len: u8 = rng.random_range(8..=32);
        let prefix = rng.random::<u32>() & LpmRule::mask(len);
        if seen.insert((prefix, len)) {
            rules.push(LpmRule::new(prefix, len, rules.len() as i64));
        }
    }
    rules
}

/// An address inside `rule`, with random host bits.
pub fn address_in(rule: &LpmRule, rng: &mut impl Rng) -> u32 {
    rule.prefix | (rng.random::<u32>() & !LpmRule::mask(rule.len))
}

/// Addresses spread over the rules of the table, one per rule, shuffled
/// deterministically.
pub fn key_universe(rules: &[LpmRule], seed: u64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<i64> = rules
        .iter()
        .map(|r| i64::from(address_in(r, &mut rng)))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.shuffle(&mut rng);
    keys
}
