//! Blocked matrix multiplication over host-owned `n x n` int matrices.

use crate::ir::{parse_module, HandlerModule, HostState};

pub const HANDLER: &str = "matmul";
pub const B_VALUES: [i64; 6] = [2, 4, 8, 16, 32, 64];

/// `matmul(n, b)` computes `O += L * R` with `b x b` tiles. When `b`
/// divides `n` a remainder-free path runs; otherwise tile bounds are
/// clipped to `n`.
const SOURCE: &str = r#"
(module
  (extern L int[])
  (extern R int[])
  (extern O int[])
  (fn matmul (n:int b:int) -> int
    (set b (spec-enum B b 2 4 8 16 32 64))
    (set n (spec-generic N n))
    (spec-assume NmB (eq (mod n b) 0))
    (if (eq (mod n b) 0)
      (then
        (for i 0 n b
          (for j 0 n b
            (for k 0 n b
              (for ii 0 b 1
                (let row (mul (add i ii) n))
                (for jj 0 b 1
                  (let col (add j jj))
                  (let acc (load O (add row col)))
                  (for kk 0 b 1
                    (let kx (add k kk))
                    (set acc (add acc (mul (load L (add row kx)) (load R (add (mul kx n) col))))))
                  (store O (add row col) acc)))))))
      (else
        (for i 0 n b
          (let ie (add i b))
          (if (gt ie n) (then (set ie n)))
          (for j 0 n b
            (let je (add j b))
            (if (gt je n) (then (set je n)))
            (for k 0 n b
              (let ke (add k b))
              (if (gt ke n) (then (set ke n)))
              (for ii i ie 1
                (let row (mul ii n))
                (for jj j je 1
                  (let acc (load O (add row jj)))
                  (for kk k ke 1
                    (set acc (add acc (mul (load L (add row kk)) (load R (add (mul kk n) jj))))))
                  (store O (add row jj) acc))))))))
    (return 0)))
"#;

pub fn build_mmul() -> HandlerModule {
    parse_module(SOURCE).expect("matmul source parses")
}

/// Host with zeroed `L`, `R`, `O` sized for matrices up to `max_n`.
pub fn host(max_n: usize) -> HostState {
    let mut h = HostState::new();
    for name in ["L", "R", "O"] {
        h.add_int_array(name, vec![0; max_n * max_n])
            .expect("fresh host");
    }
    h
}
