//! Benchmark handlers, host setups, workloads and exploration spaces.

pub mod batch;
pub mod lpm;
pub mod mmul;
pub mod simple;
pub mod workload;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::custom::LpmRule;
use crate::engine::{EngineError, Runtime};
use crate::ir::{HandlerModule, HostState};
use crate::policy::Workload;
use crate::profile::Profiles;
use crate::spec::{Decision, SpecConfig};
use crate::specializer::CustomRegistry;
pub use workload::{
    BatchWorkload, KeyWorkload, MatmulWorkload, WorkloadKind, WorkloadPhase, ZIPF_S,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchKind {
    Mmul,
    Lpm,
    Simple,
    Batch,
}

impl BenchKind {
    pub const ALL: [BenchKind; 4] = [
        BenchKind::Mmul,
        BenchKind::Lpm,
        BenchKind::Simple,
        BenchKind::Batch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchKind::Mmul => "mmul",
            BenchKind::Lpm => "lpm",
            BenchKind::Simple => "simple",
            BenchKind::Batch => "batch",
        }
    }

    pub fn handler(self) -> &'static str {
        match self {
            BenchKind::Mmul => mmul::HANDLER,
            BenchKind::Lpm => lpm::HANDLER,
            BenchKind::Simple => simple::HANDLER,
            BenchKind::Batch => batch::HANDLER,
        }
    }
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchKind::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown bench `{s}` (expected mmul, lpm, simple or batch)"))
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("phase line {line}: {reason}")]
    Phase { line: usize, reason: String },
    #[error(transparent)]
    Rules(#[from] crate::custom::CustomError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// A loaded-ready benchmark: module, host state, generators and workload.
pub struct BenchSetup {
    pub kind: BenchKind,
    pub module: HandlerModule,
    pub host: HostState,
    pub registry: CustomRegistry,
    pub workload: Box<dyn Workload>,
}

impl BenchSetup {
    pub fn handler(&self) -> &'static str {
        self.kind.handler()
    }

    /// Loads the module; returns the runtime, the registry and the workload.
    pub fn load(self) -> Result<(Runtime, CustomRegistry, Box<dyn Workload>), CaseError> {
        let rt = Runtime::load_generic(self.module, self.host)?;
        Ok((rt, self.registry, self.workload))
    }
}

/// Rule table used when none is given: 1000 random rules plus a default.
pub fn default_rules(seed: u64) -> Vec<LpmRule> {
    lpm::random_rules(1000, true, seed)
}

/// Builds the bench over `phases`. LPM uses the module carrying both
/// custom points, so any variant is reachable by configuration.
pub fn setup(
    kind: BenchKind,
    phases: Vec<WorkloadPhase>,
    rules: &[LpmRule],
    seed: u64,
) -> Result<BenchSetup, CaseError> {
    let reg = CustomRegistry::new();
    Ok(match kind {
        BenchKind::Mmul => {
            let max_n = phases
                .iter()
                .map(|p| match p.kind {
                    WorkloadKind::Matmul { n, .. } => n,
                    _ => 0,
                })
                .max()
                .unwrap_or(0);
            BenchSetup {
                kind,
                module: mmul::build_mmul(),
                host: mmul::host(max_n),
                registry: reg,
                workload: Box::new(MatmulWorkload::new(phases)),
            }
        }
        BenchKind::Lpm => BenchSetup {
            kind,
            module: lpm::build_lpm(lpm::LpmVariant::NestedIfFastPath, rules)?,
            host: lpm::host(rules),
            registry: lpm::registry(rules),
            workload: Box::new(KeyWorkload::new(phases, lpm::key_universe(rules, seed))),
        },
        BenchKind::Simple => BenchSetup {
            kind,
            module: simple::build_simplebench(),
            host: HostState::new(),
            registry: reg,
            workload: Box::new(KeyWorkload::new(phases, (1..=1024).collect())),
        },
        BenchKind::Batch => BenchSetup {
            kind,
            module: batch::build_batchbench(),
            host: batch::host(0, 0),
            registry: reg,
            workload: Box::new(BatchWorkload::new(phases)),
        },
    })
}

/// One phase of `duration` invocations with the bench's default knobs.
pub fn default_phase(kind: BenchKind, duration: u64, seed: u64) -> WorkloadPhase {
    let kind = match kind {
        BenchKind::Mmul => WorkloadKind::Matmul { n: 32, b: 8 },
        BenchKind::Lpm => WorkloadKind::Keys {
            s: ZIPF_S,
            universe: 1024,
        },
        BenchKind::Simple => WorkloadKind::Keys {
            s: ZIPF_S,
            universe: 256,
        },
        BenchKind::Batch => WorkloadKind::Batch {
            f: 64,
            e: 1,
            arrivals: 64,
        },
    };
    WorkloadPhase {
        kind,
        duration,
        seed,
    }
}

/// Two phases splitting `duration`, with different optimal settings.
pub fn default_two_phases(kind: BenchKind, duration: u64, seed: u64) -> Vec<WorkloadPhase> {
    let half = duration / 2;
    let mut first = default_phase(kind, half, seed);
    let mut second = default_phase(kind, duration - half, seed.wrapping_add(1));
    match kind {
        BenchKind::Mmul => {
            first.kind = WorkloadKind::Matmul { n: 16, b: 8 };
            second.kind = WorkloadKind::Matmul { n: 32, b: 8 };
        }
        BenchKind::Batch => {
            second.kind = WorkloadKind::Batch {
                f: 64,
                e: 1,
                arrivals: 4,
            };
        }
        BenchKind::Lpm | BenchKind::Simple => {
            second.kind = WorkloadKind::Keys {
                s: 2.0,
                universe: 16,
            };
        }
    }
    vec![first, second]
}

fn parse_num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, CaseError> {
    v.parse().map_err(|_| CaseError::Phase {
        line,
        reason: format!("bad value `{v}` for `{key}`"),
    })
}

/// Parses a phase file: one phase per line as whitespace-separated
/// `key=value` pairs, `#` comments allowed. Common keys are `duration`
/// (required) and `seed`; bench keys are `n`, `b` (mmul), `s`,
/// `universe` (lpm, simple) and `f`, `e`, `arrivals` (batch). Missing
/// bench keys take the defaults of [`default_phase`].
pub fn parse_phases(
    kind: BenchKind,
    text: &str,
    seed: u64,
) -> Result<Vec<WorkloadPhase>, CaseError> {
    let mut phases = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut phase = default_phase(kind, 0, seed.wrapping_add(phases.len() as u64));
        let mut has_duration = false;
        for pair in body.split_whitespace() {
            let (k, v) = pair.split_once('=').ok_or_else(|| CaseError::Phase {
                line,
                reason: format!("`{pair}` is not key=value"),
            })?;
            match (k, &mut phase.kind) {
                ("duration", _) => {
                    phase.duration = parse_num(line, k, v)?;
                    has_duration = true;
                }
                ("seed", _) => phase.seed = parse_num(line, k, v)?,
                ("n", WorkloadKind::Matmul { n, .. }) => *n = parse_num(line, k, v)?,
                ("b", WorkloadKind::Matmul { b, .. }) => *b = parse_num(line, k, v)?,
                ("s", WorkloadKind::Keys { s, .. }) => *s = parse_num(line, k, v)?,
                ("universe", WorkloadKind::Keys { universe, .. }) => {
                    *universe = parse_num(line, k, v)?
                }
                ("f", WorkloadKind::Batch { f, .. }) => *f = parse_num(line, k, v)?,
                ("e", WorkloadKind::Batch { e, .. }) => *e = parse_num(line, k, v)?,
                ("arrivals", WorkloadKind::Batch { arrivals, .. }) => {
                    *arrivals = parse_num(line, k, v)?
                }
                _ => {
                    return Err(CaseError::Phase {
                        line,
                        reason: format!("unknown key `{k}` for {kind}"),
                    })
                }
            }
        }
        if !has_duration {
            return Err(CaseError::Phase {
                line,
                reason: "missing `duration`".into(),
            });
        }
        match phase.kind {
            WorkloadKind::Keys { s, .. } if s <= 0.0 => {
                return Err(CaseError::Phase {
                    line,
                    reason: "zipf exponent must be positive".into(),
                })
            }
            WorkloadKind::Matmul { n, b } if n == 0 || b <= 0 => {
                return Err(CaseError::Phase {
                    line,
                    reason: "n and b must be positive".into(),
                })
            }
            _ => {}
        }
        phases.push(phase);
    }
    if phases.is_empty() {
        return Err(CaseError::Phase {
            line: 0,
            reason: "no phases".into(),
        });
    }
    Ok(phases)
}

/// One configuration per candidate of `label`, disabled first.
pub fn value_configs(label: &str, values: &[i64], guard: bool) -> Vec<SpecConfig> {
    std::iter::once(SpecConfig::new())
        .chain(values.iter().map(|&v| {
            let mut c = SpecConfig::new().with(label, Decision::Const(v));
            c.set_guard(label, guard);
            c
        }))
        .collect()
}

/// Fast-path sizes explored for LPM.
pub const FASTPATH_SIZES: [usize; 6] = [1, 2, 4, 8, 16, 32];

/// Configurations explored for each bench. B and BATCH are tuning knobs
/// whose value does not change results, so they run unguarded unless
/// `guard` asks otherwise; the simple bench explores the hottest values of
/// `a` from `profiles`.
pub fn explore_configs(
    kind: BenchKind,
    guard: Option<bool>,
    profiles: &Profiles,
) -> Vec<SpecConfig> {
    match kind {
        BenchKind::Mmul => value_configs("B", &mmul::B_VALUES, guard.unwrap_or(false)),
        BenchKind::Batch => value_configs("BATCH", &batch::BATCH_VALUES, guard.unwrap_or(false)),
        BenchKind::Simple => {
            let hot: Vec<i64> = profiles
                .get("a")
                .and_then(|p| p.top_n("a", 4).ok())
                .unwrap_or_default()
                .into_iter()
                .map(|(v, _)| v)
                .collect();
            value_configs("a", &hot, guard.unwrap_or(true))
        }
        BenchKind::Lpm => std::iter::once(SpecConfig::new())
            .chain(
                FASTPATH_SIZES
                    .iter()
                    .map(|&n| lpm::LpmVariant::FastPath.config(n)),
            )
            .collect(),
    }
}

/// Labels sampled before exploring, if the bench needs profiles.
pub fn instrument_labels(kind: BenchKind) -> &'static [&'static str] {
    match kind {
        BenchKind::Lpm => &[lpm::FP_LABEL],
        BenchKind::Simple => &["a"],
        BenchKind::Mmul | BenchKind::Batch => &[],
    }
}
