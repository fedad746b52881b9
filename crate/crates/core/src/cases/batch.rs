//! Event batching over a host ring queue.
//!
//! Each call polls `batch` queue slots and handles the filled ones. A call
//! costs a fixed `F`-iteration overhead, one slot check per polled slot,
//! and `E` iterations per handled event, so the best batch size tracks
//! the arrival rate.

use crate::ir::{parse_module, HandlerModule, HostState, Value};

pub const HANDLER: &str = "process";
pub const BATCH_VALUES: [i64; 7] = [1, 2, 4, 8, 16, 32, 64];
pub const QUEUE_CAP: usize = 128;

const SOURCE: &str = r#"
(module
  (extern Q int[])
  (extern QH int)
  (extern QT int)
  (extern F int)
  (extern E int)
  (extern ACC int)
  (fn process (batch:int) -> int
    (set batch (spec-enum BATCH batch 1 2 4 8 16 32 64))
    (let avail (sub QT QH))
    (if (gt avail batch) (then (set avail batch)))
    (if (eq avail 0) (then (return 0)))
    (for f 0 F 1
      (set ACC (add ACC f)))
    (for s 0 batch 1
      (if (lt s avail)
        (then
          (let ev (load Q (mod (add QH s) 128)))
          (for w 0 E 1
            (set ACC (xor ACC (add ev w)))))))
    (set QH (add QH avail))
    (return avail)))
"#;

pub fn build_batchbench() -> HandlerModule {
    parse_module(SOURCE).expect("batch source parses")
}

/// Empty queue with the given cost parameters.
pub fn host(f: i64, e: i64) -> HostState {
    let mut h = HostState::new();
    h.add_int_array("Q", vec![0; QUEUE_CAP])
        .expect("fresh host");
    for (name, v) in [("QH", 0), ("QT", 0), ("F", f), ("E", e), ("ACC", 0)] {
        h.add_scalar(name, Value::Int(v)).expect("fresh host");
    }
    h
}

fn int(h: &HostState, name: &str) -> i64 {
    h.scalar(name)
        .and_then(Value::as_int)
        .expect("batch host scalar")
}

/// Appends `ev` unless the ring is full. Returns false on a drop.
pub fn enqueue(h: &mut HostState, ev: i64) -> bool {
    let (head, tail) = (int(h, "QH"), int(h, "QT"));
    if (tail - head) as usize >= QUEUE_CAP {
        return false;
    }
    h.int_array_mut("Q").expect("queue")[tail as usize % QUEUE_CAP] = ev;
    h.set_scalar("QT", Value::Int(tail + 1))
        .expect("queue tail");
    true
}

pub fn queue_len(h: &HostState) -> i64 {
    int(h, "QT") - int(h, "QH")
}

pub fn set_costs(h: &mut HostState, f: i64, e: i64) {
    h.set_scalar("F", Value::Int(f)).expect("cost scalar");
    h.set_scalar("E", Value::Int(e)).expect("cost scalar");
}
