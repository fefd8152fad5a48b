//! Associative prefix scans over diagonal affine maps.
//!
//! The scan is a blocked, work-efficient three-phase algorithm:
//!
//! 1. every block of `block` consecutive elements is folded into one
//!    aggregate (one parallel round);
//! 2. the block aggregates are scanned with an up-sweep / down-sweep tree
//!    (`2·ceil(log2 nb)` rounds for `nb` blocks);
//! 3. every block replays its elements starting from its exclusive prefix
//!    (one parallel round).
//!
//! Block boundaries depend only on the sequence length and the block size,
//! never on the number of worker threads, so results are bit-identical for
//! any thread pool. With a power-of-two block of at least two elements the
//! number of synchronisation rounds is at most `2·ceil(log2 T)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Default number of time steps folded sequentially per block.
pub const DEFAULT_BLOCK: usize = 64;

/// An element of an associative scan.
pub trait ScanElement: Clone + Send + Sync {
    /// Composition "apply `self`, then `later`".
    fn then(&self, later: &Self) -> Self;
    /// Identity element with the same dimensions as `self`.
    fn identity_like(&self) -> Self;
}

/// Diagonal affine map `x ↦ a∘x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineElement {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

impl AffineElement {
    pub fn new(a: Vec<f64>, c: Vec<f64>) -> Self {
        assert_eq!(a.len(), c.len(), "affine element dimensions differ");
        Self { a, c }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            a: vec![1.0; d],
            c: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.c)
            .zip(x)
            .map(|((a, c), x)| a * x + c)
            .collect()
    }
}

impl ScanElement for AffineElement {
    fn then(&self, later: &Self) -> Self {
        affine_compose(self, later)
    }

    fn identity_like(&self) -> Self {
        AffineElement::identity(self.dim())
    }
}

/// `e2 ∘ e1`: returns `(a2∘a1, a2∘c1 + c2)`.
pub fn affine_compose(e1: &AffineElement, e2: &AffineElement) -> AffineElement {
    assert_eq!(e1.dim(), e2.dim(), "affine element dimensions differ");
    let a = e1.a.iter().zip(&e2.a).map(|(a1, a2)| a2 * a1).collect();
    let c = e1
        .c
        .iter()
        .zip(&e2.a)
        .zip(&e2.c)
        .map(|((c1, a2), c2)| a2 * c1 + c2)
        .collect();
    AffineElement { a, c }
}

/// Instrumentation of one scan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanStats {
    /// Number of parallel rounds separated by a barrier.
    pub sync_rounds: u32,
    pub blocks: usize,
}

fn check_block(block: usize) {
    assert!(
        block >= 2 && block.is_power_of_two(),
        "scan block size must be a power of two >= 2, got {block}"
    );
}

/// In-place exclusive scan of `items` with an up-sweep / down-sweep tree.
fn exclusive_tree_scan<E: ScanElement>(items: &mut Vec<E>, rounds: &mut u32) {
    let n = items.len();
    if n == 0 {
        return;
    }
    let size = n.next_power_of_two();
    let identity = items[0].identity_like();
    items.resize(size, identity.clone());

    let mut d = 1;
    while d < size {
        items.par_chunks_mut(2 * d).for_each(|ch| {
            let combined = ch[d - 1].then(&ch[2 * d - 1]);
            ch[2 * d - 1] = combined;
        });
        *rounds += 1;
        d *= 2;
    }

    items[size - 1] = identity;
    d = size / 2;
    while d >= 1 {
        items.par_chunks_mut(2 * d).for_each(|ch| {
            let right = ch[2 * d - 1].clone();
            let left = std::mem::replace(&mut ch[d - 1], right);
            ch[2 * d - 1] = ch[2 * d - 1].then(&left);
        });
        *rounds += 1;
        d /= 2;
    }
    items.truncate(n);
}

/// Inclusive scan of arbitrary associative elements: `out[t] = e_0 ; … ; e_t`.
pub fn inclusive_scan<E: ScanElement>(elems: &[E], block: usize) -> (Vec<E>, ScanStats) {
    check_block(block);
    let t_len = elems.len();
    let mut stats = ScanStats::default();
    if t_len <= 1 {
        return (elems.to_vec(), stats);
    }
    let nb = t_len.div_ceil(block);
    stats.blocks = nb;
    let fold_block = |start: Option<E>, ch: &[E]| -> Vec<E> {
        let mut out = Vec::with_capacity(ch.len());
        let mut acc = start;
        for e in ch {
            let next = match &acc {
                Some(p) => p.then(e),
                None => e.clone(),
            };
            out.push(next.clone());
            acc = Some(next);
        }
        out
    };
    if nb == 1 {
        stats.sync_rounds = 1;
        return (fold_block(None, elems), stats);
    }

    let mut aggs: Vec<E> = elems
        .par_chunks(block)
        .map(|ch| {
            let mut acc = ch[0].clone();
            for e in &ch[1..] {
                acc = acc.then(e);
            }
            acc
        })
        .collect();
    stats.sync_rounds += 1;
    exclusive_tree_scan(&mut aggs, &mut stats.sync_rounds);

    let out: Vec<E> = elems
        .par_chunks(block)
        .zip(aggs.into_par_iter())
        .enumerate()
        .flat_map_iter(|(b, (ch, prefix))| fold_block(if b == 0 { None } else { Some(prefix) }, ch))
        .collect();
    stats.sync_rounds += 1;
    (out, stats)
}

/// Aggregate of rows `a[t], c[t]` of a flat `T × d` pair of arrays.
fn fold_affine_rows(a: &[f64], c: &[f64], d: usize) -> AffineElement {
    let mut acc = AffineElement::identity(d);
    for (ar, cr) in a.chunks_exact(d).zip(c.chunks_exact(d)) {
        for i in 0..d {
            acc.a[i] *= ar[i];
            acc.c[i] = ar[i] * acc.c[i] + cr[i];
        }
    }
    acc
}

fn replay_affine_rows(a: &[f64], c: &[f64], d: usize, start: &[f64], out: &mut [f64]) {
    let mut state = start.to_vec();
    for ((ar, cr), orow) in a
        .chunks_exact(d)
        .zip(c.chunks_exact(d))
        .zip(out.chunks_exact_mut(d))
    {
        for i in 0..d {
            state[i] = ar[i] * state[i] + cr[i];
        }
        orow.copy_from_slice(&state);
    }
}

/// Solves `x_t = a_t∘x_{t-1} + c_t`, `x_{-1} = x0`, for flat row-major
/// `T × d` coefficient arrays. Returns the flat `T × d` trajectory.
pub fn scan_affine_flat(
    a: &[f64],
    c: &[f64],
    d: usize,
    x0: &[f64],
    block: usize,
) -> (Vec<f64>, ScanStats) {
    check_block(block);
    assert!(d > 0, "state dimension must be positive");
    assert_eq!(a.len(), c.len());
    assert_eq!(a.len() % d, 0);
    assert_eq!(x0.len(), d);
    let t_len = a.len() / d;
    let mut out = vec![0.0; a.len()];
    let mut stats = ScanStats::default();
    if t_len == 0 {
        return (out, stats);
    }
    if t_len == 1 {
        crate::flops::scan(a.len());
        replay_affine_rows(a, c, d, x0, &mut out);
        return (out, stats);
    }
    let nb = t_len.div_ceil(block);
    stats.blocks = nb;
    if nb == 1 {
        crate::flops::scan(a.len());
        replay_affine_rows(a, c, d, x0, &mut out);
        stats.sync_rounds = 1;
        return (out, stats);
    }

    crate::flops::scan(crate::flops::SCAN_FLOPS as usize * a.len());
    let chunk = block * d;
    let mut aggs: Vec<AffineElement> = a
        .par_chunks(chunk)
        .zip(c.par_chunks(chunk))
        .map(|(ab, cb)| fold_affine_rows(ab, cb, d))
        .collect();
    stats.sync_rounds += 1;
    exclusive_tree_scan(&mut aggs, &mut stats.sync_rounds);

    out.par_chunks_mut(chunk)
        .zip(a.par_chunks(chunk).zip(c.par_chunks(chunk)))
        .zip(aggs.par_iter())
        .for_each(|((ob, (ab, cb)), prefix)| {
            let start = prefix.apply(x0);
            replay_affine_rows(ab, cb, d, &start, ob);
        });
    stats.sync_rounds += 1;
    (out, stats)
}

/// Reverse-time affine recurrence `y_t = a_next_t∘y_{t+1} + c_t` with
/// `y_T = terminal`, evaluated with the same blocked scan on reversed rows.
pub fn reverse_scan_affine_flat(
    a_next: &[f64],
    c: &[f64],
    d: usize,
    terminal: &[f64],
    block: usize,
) -> (Vec<f64>, ScanStats) {
    let rev = |v: &[f64]| -> Vec<f64> { v.chunks_exact(d).rev().flatten().copied().collect() };
    let (out, stats) = scan_affine_flat(&rev(a_next), &rev(c), d, terminal, block);
    (rev(&out), stats)
}

/// `output[t] = (e_t ∘ … ∘ e_0)(x0)` as a `T × D` matrix.
pub fn prefix_scan_affine(elems: &[AffineElement], x0: &[f64]) -> Result<Matrix> {
    Ok(prefix_scan_affine_with_stats(elems, x0, DEFAULT_BLOCK)?.0)
}

pub fn prefix_scan_affine_with_stats(
    elems: &[AffineElement],
    x0: &[f64],
    block: usize,
) -> Result<(Matrix, ScanStats)> {
    if elems.is_empty() {
        return Err(Error::config("prefix scan needs at least one element"));
    }
    let d = x0.len();
    let mut a = Vec::with_capacity(elems.len() * d);
    let mut c = Vec::with_capacity(elems.len() * d);
    for e in elems {
        if e.dim() != d {
            return Err(Error::config(format!(
                "affine element has dimension {}, initial state {d}",
                e.dim()
            )));
        }
        a.extend_from_slice(&e.a);
        c.extend_from_slice(&e.c);
    }
    let (out, stats) = scan_affine_flat(&a, &c, d, x0, block);
    Ok((Matrix::from_vec(elems.len(), d, out), stats))
}

/// Sequential left fold, the oracle for the parallel scan.
pub fn sequential_affine_fold(elems: &[AffineElement], x0: &[f64]) -> Matrix {
    let mut rows = Vec::with_capacity(elems.len());
    let mut state = x0.to_vec();
    for e in elems {
        state = e.apply(&state);
        rows.push(state.clone());
    }
    Matrix::from_rows(&rows)
}

/// Upper bound `2·ceil(log2 T)` on synchronisation rounds.
pub fn sync_round_bound(t_len: usize) -> u32 {
    if t_len <= 1 {
        0
    } else {
        2 * (usize::BITS - (t_len - 1).leading_zeros())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_elems(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<AffineElement> {
        (0..t)
            .map(|_| {
                AffineElement::new(
                    (0..d).map(|_| rng.random_range(-1.2..1.2)).collect(),
                    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn compose_with_identity_is_noop() {
        let e = AffineElement::new(vec![0.3, -2.0], vec![1.5, 0.25]);
        assert_eq!(affine_compose(&e, &AffineElement::identity(2)), e);
        assert_eq!(affine_compose(&AffineElement::identity(2), &e), e);
    }

    #[test]
    fn compose_scalar_example() {
        let e1 = AffineElement::new(vec![0.5], vec![1.0]);
        let e2 = AffineElement::new(vec![2.0], vec![3.0]);
        let r = affine_compose(&e1, &e2);
        assert_eq!(r.a, vec![1.0]);
        assert_eq!(r.c, vec![5.0]);
    }

    #[test]
    fn identity_elements_keep_x0() {
        let elems = vec![AffineElement::identity(3); 100];
        let x0 = [1.0, -2.0, 3.5];
        let out = prefix_scan_affine(&elems, &x0).unwrap();
        for r in out.row_iter() {
            assert_eq!(r, &x0);
        }
    }

    #[test]
    fn geometric_series() {
        let elems = vec![AffineElement::new(vec![0.5], vec![1.0]); 4];
        let out = prefix_scan_affine(&elems, &[0.0]).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 1.5, 1.75, 1.875]);
    }

    #[test]
    fn blocked_scan_matches_fold_for_many_block_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &t in &[1usize, 2, 3, 5, 17, 64, 65, 200] {
            let elems = random_elems(&mut rng, t, 3);
            let x0 = [0.1, -0.4, 0.9];
            let oracle = sequential_affine_fold(&elems, &x0);
            for &block in &[2usize, 4, 8, 64] {
                let (out, stats) = prefix_scan_affine_with_stats(&elems, &x0, block).unwrap();
                assert!(out.max_abs_diff(&oracle) <= 1e-12, "t={t} block={block}");
                assert!(stats.sync_rounds <= sync_round_bound(t), "t={t} block={block}");
            }
        }
    }

    #[test]
    fn generic_scan_matches_flat_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let elems = random_elems(&mut rng, 77, 2);
        let (prefixes, _) = inclusive_scan(&elems, 4);
        let x0 = [0.7, -0.2];
        let flat = prefix_scan_affine(&elems, &x0).unwrap();
        for (t, p) in prefixes.iter().enumerate() {
            let y = p.apply(&x0);
            for i in 0..2 {
                assert!((y[i] - flat.get(t, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reverse_scan_matches_backward_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = 150;
        let d = 2;
        let a: Vec<f64> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let term = [0.3, -0.8];
        let (out, _) = reverse_scan_affine_flat(&a, &c, d, &term, 8);
        let mut y = term.to_vec();
        for s in (0..t).rev() {
            for i in 0..d {
                y[i] = a[s * d + i] * y[i] + c[s * d + i];
                assert!((out[s * d + i] - y[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let elems = random_elems(&mut rng, 1000, 4);
        let x0 = [0.0; 4];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| prefix_scan_affine(&elems, &x0).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.as_slice(), four.as_slice());
    }

    #[test]
    fn round_bound_values() {
        assert_eq!(sync_round_bound(1), 0);
        assert_eq!(sync_round_bound(2), 2);
        assert_eq!(sync_round_bound(3), 4);
        assert_eq!(sync_round_bound(1024), 20);
        assert_eq!(sync_round_bound(1025), 22);
    }
}
