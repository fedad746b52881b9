//! Seeded invocation streams for the case-study handlers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use super::batch;
use crate::ir::{HostState, Value};
use crate::policy::Workload;

/// Default skew for key streams.
pub const ZIPF_S: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadKind {
    /// Fresh random `n x n` matrices per call, tile-size hint `b`.
    Matmul { n: usize, b: i64 },
    /// Zipf(`s`) ranks over the first `universe` keys of a key table.
    Keys { s: f64, universe: usize },
    /// `arrivals` new events before each call, with per-batch overhead
    /// `f` and per-event cost `e`.
    Batch { f: i64, e: i64, arrivals: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadPhase {
    pub kind: WorkloadKind,
    pub duration: u64,
    pub seed: u64,
}

/// Maps invocation numbers to phases and keeps a per-phase RNG, reseeded
/// on entry to each phase.
struct PhaseClock {
    phases: Vec<WorkloadPhase>,
    ends: Vec<u64>,
    current: Option<(usize, ChaCha8Rng)>,
}

impl PhaseClock {
    fn new(phases: Vec<WorkloadPhase>) -> Self {
        let ends = phases
            .iter()
            .scan(0u64, |acc, p| {
                *acc += p.duration;
                Some(*acc)
            })
            .collect();
        PhaseClock {
            phases,
            ends,
            current: None,
        }
    }

    fn index(&self, i: u64) -> Option<usize> {
        self.ends.iter().position(|&end| i < end)
    }

    fn enter(&mut self, i: u64) -> Option<(&WorkloadPhase, &mut ChaCha8Rng)> {
        let idx = self.index(i)?;
        if self.current.as_ref().map(|c| c.0) != Some(idx) {
            self.current = Some((idx, ChaCha8Rng::seed_from_u64(self.phases[idx].seed)));
        }
        let rng = &mut self.current.as_mut().expect("set above").1;
        Some((&self.phases[idx], rng))
    }

    fn total(&self) -> u64 {
        self.ends.last().copied().unwrap_or(0)
    }

    fn phase(&self, i: u64) -> String {
        self.index(i)
            .unwrap_or(self.phases.len().saturating_sub(1))
            .to_string()
    }
}

pub struct MatmulWorkload {
    clock: PhaseClock,
}

impl MatmulWorkload {
    pub fn new(phases: Vec<WorkloadPhase>) -> Self {
        MatmulWorkload {
            clock: PhaseClock::new(phases),
        }
    }
}

impl Workload for MatmulWorkload {
    fn next(&mut self, i: u64, host: &mut HostState) -> Option<Vec<Value>> {
        let (phase, rng) = self.clock.enter(i)?;
        let WorkloadKind::Matmul { n, b } = phase.kind else {
            panic!("matmul workload given a {:?} phase", phase.kind);
        };
        for name in ["L", "R"] {
            let m = host.int_array_mut(name).expect("matmul host");
            for v in &mut m[..n * n] {
                *v = rng.random_range(-8..=8);
            }
        }
        host.int_array_mut("O").expect("matmul host")[..n * n].fill(0);
        Some(vec![Value::Int(n as i64), Value::Int(b)])
    }

    fn phase(&self, i: u64) -> String {
        self.clock.phase(i)
    }

    fn total(&self) -> u64 {
        self.clock.total()
    }
}

/// Single-argument calls with Zipf-distributed keys.
pub struct KeyWorkload {
    clock: PhaseClock,
    keys: Vec<i64>,
}

impl KeyWorkload {
    pub fn new(phases: Vec<WorkloadPhase>, keys: Vec<i64>) -> Self {
        assert!(!keys.is_empty(), "key table is empty");
        KeyWorkload {
            clock: PhaseClock::new(phases),
            keys,
        }
    }
}

impl Workload for KeyWorkload {
    fn next(&mut self, i: u64, _host: &mut HostState) -> Option<Vec<Value>> {
        let n = self.keys.len();
        let (phase, rng) = self.clock.enter(i)?;
        let WorkloadKind::Keys { s, universe } = phase.kind else {
            panic!("key workload given a {:?} phase", phase.kind);
        };
        let universe = universe.clamp(1, n);
        let rank = if universe == 1 {
            1
        } else {
            Zipf::new(universe as f64, s)
                .expect("valid zipf parameters")
                .sample(rng) as usize
        };
        Some(vec![Value::Int(self.keys[(rank - 1) % n])])
    }

    fn phase(&self, i: u64) -> String {
        self.clock.phase(i)
    }

    fn total(&self) -> u64 {
        self.clock.total()
    }
}

/// Enqueues arrivals, then asks the handler to drain with hint `batch`.
pub struct BatchWorkload {
    clock: PhaseClock,
    pub batch_hint: i64,
    pub dropped: u64,
}

impl BatchWorkload {
    pub fn new(phases: Vec<WorkloadPhase>) -> Self {
        BatchWorkload {
            clock: PhaseClock::new(phases),
            batch_hint: 8,
            dropped: 0,
        }
    }
}

impl Workload for BatchWorkload {
    fn next(&mut self, i: u64, host: &mut HostState) -> Option<Vec<Value>> {
        let (phase, rng) = self.clock.enter(i)?;
        let WorkloadKind::Batch { f, e, arrivals } = phase.kind else {
            panic!("batch workload given a {:?} phase", phase.kind);
        };
        batch::set_costs(host, f, e);
        let mut dropped = 0;
        for _ in 0..arrivals {
            if !batch::enqueue(host, rng.random_range(0..1 << 20)) {
                dropped += 1;
            }
        }
        self.dropped += dropped;
        Some(vec![Value::Int(self.batch_hint)])
    }

    fn units(&self, result: &Value) -> u64 {
        result.as_int().map_or(0, |v| v.max(0) as u64)
    }

    fn phase(&self, i: u64) -> String {
        self.clock.phase(i)
    }

    fn total(&self) -> u64 {
        self.clock.total()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys_phase(seed: u64) -> WorkloadPhase {
        WorkloadPhase {
            kind: WorkloadKind::Keys {
                s: ZIPF_S,
                universe: 50,
            },
            duration: 200,
            seed,
        }
    }

    fn draw(w: &mut dyn Workload) -> Vec<Vec<Value>> {
        let mut h = HostState::new();
        (0..).map_while(|i| w.next(i, &mut h)).collect()
    }

    #[test]
    fn same_seed_same_stream() {
        let keys: Vec<i64> = (100..200).collect();
        let a = draw(&mut KeyWorkload::new(
            vec![keys_phase(7), keys_phase(8)],
            keys.clone(),
        ));
        let b = draw(&mut KeyWorkload::new(
            vec![keys_phase(7), keys_phase(8)],
            keys.clone(),
        ));
        let c = draw(&mut KeyWorkload::new(
            vec![keys_phase(9), keys_phase(8)],
            keys,
        ));
        assert_eq!(a.len(), 400);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a[200..], b[200..]);
    }

    #[test]
    fn phases_are_indexed() {
        let w = KeyWorkload::new(vec![keys_phase(1), keys_phase(2)], vec![1]);
        assert_eq!(
            (w.phase(0), w.phase(199), w.phase(200)),
            ("0".into(), "0".into(), "1".into())
        );
        assert_eq!(w.total(), 400);
    }

    #[test]
    fn batch_queue_drops_when_full() {
        let mut h = batch::host(1, 1);
        let phase = WorkloadPhase {
            kind: WorkloadKind::Batch {
                f: 1,
                e: 1,
                arrivals: 100,
            },
            duration: 2,
            seed: 0,
        };
        let mut w = BatchWorkload::new(vec![phase]);
        w.next(0, &mut h).unwrap();
        w.next(1, &mut h).unwrap();
        assert_eq!(batch::queue_len(&h), batch::QUEUE_CAP as i64);
        assert_eq!(w.dropped, 200 - batch::QUEUE_CAP as u64);
        assert!(w.next(2, &mut h).is_none());
    }
}
