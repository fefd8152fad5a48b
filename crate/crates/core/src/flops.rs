//! Operation counters for the LRC core.
//!
//! Counting is off unless the calling thread is inside [`count`]. The
//! counters are thread-local, so `count` should run its closure on a
//! single-thread rayon pool to see work scheduled through `par_iter`.

use std::cell::Cell;

/// Multiply-adds charged per counted event.
pub const GATE_EVAL_FLOPS: u64 = 24;
/// Extra multiply-adds for the diagonal Jacobian on top of a gate evaluation.
pub const JACOBIAN_FLOPS: u64 = 16;
/// Per state coordinate: block fold (2) plus replay (1).
pub const SCAN_FLOPS: u64 = 3;
/// Per state coordinate of a damped solve: filter element, filter scan and
/// smoother setup. The smoother's own affine scan is counted separately.
pub const KALMAN_FLOPS: u64 = 24;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct FlopCounts {
    /// Input-projection multiply-adds (forward drive and its gradient).
    pub dense_macs: u64,
    pub gate_evals: u64,
    pub jacobian_evals: u64,
    /// Scanned coordinate-steps, already weighted by the blocked-scan pass count.
    pub scan_macs: u64,
}

impl FlopCounts {
    pub fn total(&self) -> u64 {
        self.dense_macs
            + self.gate_evals * GATE_EVAL_FLOPS
            + self.jacobian_evals * JACOBIAN_FLOPS
            + self.scan_macs
    }
}

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
    static COUNTS: Cell<FlopCounts> = const { Cell::new(FlopCounts {
        dense_macs: 0,
        gate_evals: 0,
        jacobian_evals: 0,
        scan_macs: 0,
    }) };
}

#[inline]
fn bump(f: impl FnOnce(&mut FlopCounts)) {
    if ACTIVE.with(Cell::get) {
        COUNTS.with(|c| {
            let mut v = c.get();
            f(&mut v);
            c.set(v);
        });
    }
}

#[inline]
pub(crate) fn dense(n: usize) {
    bump(|c| c.dense_macs += n as u64);
}

#[inline]
pub(crate) fn gate_evals(n: usize, with_jacobian: bool) {
    bump(|c| {
        c.gate_evals += n as u64;
        if with_jacobian {
            c.jacobian_evals += n as u64;
        }
    });
}

#[inline]
pub(crate) fn scan(n: usize) {
    bump(|c| c.scan_macs += n as u64);
}

/// Runs `f` with counting enabled on the current thread.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, FlopCounts) {
    let was = ACTIVE.with(|a| a.replace(true));
    let before = COUNTS.with(|c| c.replace(FlopCounts::default()));
    let out = f();
    let counted = COUNTS.with(|c| c.replace(before));
    ACTIVE.with(|a| a.set(was));
    (out, counted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_only_inside_the_scope() {
        dense(10);
        let ((), c) = count(|| {
            dense(3);
            gate_evals(2, true);
            scan(5);
        });
        assert_eq!(c.dense_macs, 3);
        assert_eq!(c.total(), 3 + 2 * GATE_EVAL_FLOPS + 2 * JACOBIAN_FLOPS + 5);
        let ((), empty) = count(|| ());
        assert_eq!(empty, FlopCounts::default());
    }
}
