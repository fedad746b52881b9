//! Shared helpers for integration tests: oracles and a random module
//! generator.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specforge::cases::mmul;
use specforge::custom::{LpmRule, NO_MATCH};
use specforge::ir::{ExecError, HostState, Value};
use specforge::optimizer::{Pass, PassPipeline};

pub fn naive_matmul(l: &[i64], r: &[i64], n: usize) -> Vec<i64> {
    let mut o = vec![0; n * n];
    for i in 0..n {
        for j in 0..n {
            o[i * n + j] = (0..n).map(|k| l[i * n + k] * r[k * n + j]).sum();
        }
    }
    o
}

pub fn random_matrix(n: usize, rng: &mut impl Rng) -> Vec<i64> {
    (0..n * n).map(|_| rng.random_range(-8..=8)).collect()
}

/// Loads `l` and `r` into a matmul host and zeroes the output, which the
/// handler accumulates into.
pub fn load_matrices(h: &mut HostState, l: &[i64], r: &[i64]) {
    h.int_array_mut("O").unwrap().fill(0);
    h.int_array_mut("L").unwrap()[..l.len()].copy_from_slice(l);
    h.int_array_mut("R").unwrap()[..r.len()].copy_from_slice(r);
}

pub fn read_product(h: &HostState, n: usize) -> Vec<i64> {
    h.int_array("O").unwrap()[..n * n].to_vec()
}

pub fn matmul_args(n: usize, b: i64) -> Vec<Value> {
    vec![Value::Int(n as i64), Value::Int(b)]
}

pub fn fresh_mmul_host(n: usize) -> HostState {
    mmul::host(n)
}

pub fn lpm_oracle(rules: &[LpmRule], addr: u32) -> i64 {
    rules
        .iter()
        .filter(|r| r.matches(addr))
        .max_by_key(|r| r.len)
        .map_or(NO_MATCH, |r| r.value)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Writes random, always-terminating functions `f(a, b)` over an extern
/// array `A` of length 8. Loop bounds are never assigned inside their
/// loop, so every program halts; traps and guard failures are possible.
pub struct ModuleGen<'r> {
    rng: &'r mut ChaCha8Rng,
    readable: Vec<String>,
    assignable: Vec<String>,
    fresh: usize,
}

const LOCALS: [&str; 3] = ["v0", "v1", "v2"];

impl<'r> ModuleGen<'r> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        let mut readable = vec!["a".to_string(), "b".to_string()];
        readable.extend(LOCALS.iter().map(|s| s.to_string()));
        let assignable = LOCALS.iter().map(|s| s.to_string()).collect();
        ModuleGen {
            rng,
            readable,
            assignable,
            fresh: 0,
        }
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    fn var(&mut self) -> String {
        self.readable.choose(self.rng).unwrap().clone()
    }

    fn lit(&mut self) -> String {
        self.rng.random_range(-6..=6).to_string()
    }

    fn atom(&mut self) -> String {
        if self.rng.random_bool(0.4) {
            self.lit()
        } else {
            self.var()
        }
    }

    fn cond(&mut self, depth: u32) -> String {
        let op = ["eq", "ne", "lt", "le", "gt", "ge"]
            .choose(self.rng)
            .unwrap();
        format!("({op} {} {})", self.expr(depth), self.atom())
    }

    pub fn expr(&mut self, depth: u32) -> String {
        if depth == 0 {
            return self.atom();
        }
        match self.rng.random_range(0..10) {
            0 | 1 => self.atom(),
            2..=5 => {
                let op = ["add", "sub", "mul", "and", "or", "xor"]
                    .choose(self.rng)
                    .unwrap();
                format!("({op} {} {})", self.expr(depth - 1), self.expr(depth - 1))
            }
            6 => {
                let op = ["div", "mod"].choose(self.rng).unwrap();
                format!("({op} {} {})", self.expr(depth - 1), self.atom())
            }
            7 => {
                let op = ["shl", "shr"].choose(self.rng).unwrap();
                format!(
                    "({op} {} {})",
                    self.expr(depth - 1),
                    self.rng.random_range(0..5)
                )
            }
            8 => self.cond(depth - 1),
            _ => {
                let idx = if self.rng.random_bool(0.9) {
                    format!("(and {} 7)", self.expr(depth - 1))
                } else {
                    self.expr(depth - 1)
                };
                format!("(load A {idx})")
            }
        }
    }

    fn block(&mut self, depth: u32, len: usize) -> String {
        (0..len)
            .map(|_| self.stmt(depth))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn stmt(&mut self, depth: u32) -> String {
        let choice = if depth == 0 {
            self.rng.random_range(0..3)
        } else {
            self.rng.random_range(0..9)
        };
        match choice {
            0 | 1 if !self.assignable.is_empty() => {
                let v = self.assignable.choose(self.rng).unwrap().clone();
                format!("(set {v} {})", self.expr(2))
            }
            0..=2 => {
                format!("(store A (and {} 7) {})", self.expr(1), self.expr(2))
            }
            3 => {
                let n = self.rng.random_range(0..3);
                let m = self.rng.random_range(0..3);
                format!(
                    "(if {} (then {}) (else {}))",
                    self.cond(2),
                    self.block(depth - 1, n + 1),
                    self.block(depth - 1, m)
                )
            }
            4 | 5 => {
                let iv = self.fresh("i");
                let (lo, hi, frozen) = match self.rng.random_range(0..3) {
                    0 => (
                        self.rng.random_range(-2..3).to_string(),
                        self.rng.random_range(0..7).to_string(),
                        None,
                    ),
                    1 => {
                        let v = self.assignable.choose(self.rng).cloned();
                        match v {
                            Some(v) => {
                                let k = self.rng.random_range(0..7);
                                (v.clone(), format!("(add {v} {k})"), Some(v))
                            }
                            None => ("0".into(), "3".into(), None),
                        }
                    }
                    // The bound may change between tests but stays below 8.
                    _ => ("0".into(), format!("(and {} 7)", self.var()), None),
                };
                let step = if self.rng.random_bool(0.8) { 1 } else { 2 };
                let saved = self.assignable.clone();
                if let Some(f) = &frozen {
                    self.assignable.retain(|v| v != f);
                }
                self.readable.push(iv.clone());
                let n = self.rng.random_range(1..4);
                let body = self.block(depth - 1, n);
                self.readable.pop();
                self.assignable = saved;
                format!("(for {iv} {lo} {hi} {step} {body})")
            }
            6 => {
                let label = self.fresh("G");
                let op = ["eq", "ne", "lt", "ge"].choose(self.rng).unwrap();
                let v = self.var();
                let k = self.rng.random_range(-3..=3);
                format!("(guard {label} ({op} {v} {k}))")
            }
            7 => format!("(return {})", self.expr(2)),
            _ => {
                let w = self.fresh("w");
                let k = self.rng.random_range(0..5);
                self.readable.push(w.clone());
                let n = self.rng.random_range(0..3);
                let body = self.block(depth - 1, n);
                self.readable.pop();
                format!("(set {w} 0) (while (lt {w} {k}) (set {w} (add {w} 1)) {body})")
            }
        }
    }

    /// Source text of a fresh random module.
    pub fn module(&mut self) -> String {
        let lets: Vec<String> = LOCALS
            .iter()
            .map(|v| format!("(let {v} {})", self.expr_init()))
            .collect();
        let n = self.rng.random_range(1..7);
        let body = self.block(3, n);
        let ret = self.expr(2);
        format!(
            "(module (extern A int[]) (fn f (a:int b:int) -> int {} {body} (return {ret})))",
            lets.join(" ")
        )
    }

    fn expr_init(&mut self) -> String {
        match self.rng.random_range(0..3) {
            0 => self.lit(),
            1 => ["a", "b"].choose(self.rng).unwrap().to_string(),
            _ => format!(
                "(add {} {})",
                ["a", "b"].choose(self.rng).unwrap(),
                self.lit()
            ),
        }
    }
}

pub fn random_pipeline(rng: &mut ChaCha8Rng) -> PassPipeline {
    if rng.random_bool(0.3) {
        return PassPipeline::default();
    }
    let len = rng.random_range(0..9);
    PassPipeline::new((0..len).map(|_| *Pass::ALL.choose(rng).unwrap()).collect())
}

pub fn random_host(rng: &mut ChaCha8Rng) -> HostState {
    let mut h = HostState::new();
    h.add_int_array("A", (0..8).map(|_| rng.random_range(-5..=5)).collect())
        .unwrap();
    h
}

/// Outcome compared across optimization: the value or the error, plus the
/// final array contents.
pub type Outcome = (Result<Value, ExecError>, Vec<i64>);

pub fn run_outcome(m: &specforge::ir::HandlerModule, args: &[Value], host: &HostState) -> Outcome {
    let mut h = host.clone();
    let r = specforge::ir::interpret(m, "f", args, &mut h).map(|(v, _)| v);
    (r, h.int_array("A").unwrap().to_vec())
}
