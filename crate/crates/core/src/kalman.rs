//! Trust-region (Levenberg–Marquardt) damped linear solve as a scalar
//! Kalman filter–smoother per state dimension, evaluated with associative
//! scans.
//!
//! For every dimension the damped Newton update solves
//!
//! ```text
//! min_x  Σ_t (x_t - j_t x_{t-1} - c_t)² / q  +  (x_t - prev_t)² / r
//! ```
//!
//! with `x_{-1} = x0` known exactly. This is MAP estimation in a linear
//! Gaussian state-space model whose dynamics are the Newton surrogate and
//! whose observations are the previous iterate. `trust_ratio = r/q`; large
//! values recover the undamped Newton step.
//!
//! Filtering uses the five-tuple associative elements `(A, b, C, η, J)` of the
//! parallel Kalman filter; the RTS smoother mean is a reverse diagonal affine
//! recurrence and reuses the affine scan.

use crate::scan::{inclusive_scan, reverse_scan_affine_flat, ScanElement, ScanStats};

#[derive(Debug, Clone, PartialEq)]
struct FilterElement {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    eta: Vec<f64>,
    j: Vec<f64>,
}

impl ScanElement for FilterElement {
    fn then(&self, later: &Self) -> Self {
        let d = self.a.len();
        let mut out = FilterElement {
            a: vec![0.0; d],
            b: vec![0.0; d],
            c: vec![0.0; d],
            eta: vec![0.0; d],
            j: vec![0.0; d],
        };
        for k in 0..d {
            let (ai, bi, ci, ei, ji) = (self.a[k], self.b[k], self.c[k], self.eta[k], self.j[k]);
            let (aj, bj, cj, ej, jj) = (
                later.a[k],
                later.b[k],
                later.c[k],
                later.eta[k],
                later.j[k],
            );
            let den = 1.0 + ci * jj;
            out.a[k] = aj * ai / den;
            out.b[k] = aj * (bi + ci * ej) / den + bj;
            out.c[k] = aj * ci * aj / den + cj;
            out.eta[k] = ai * (ej - jj * bi) / den + ei;
            out.j[k] = ai * jj * ai / den + ji;
        }
        out
    }

    fn identity_like(&self) -> Self {
        let d = self.a.len();
        FilterElement {
            a: vec![1.0; d],
            b: vec![0.0; d],
            c: vec![0.0; d],
            eta: vec![0.0; d],
            j: vec![0.0; d],
        }
    }
}

/// Damped update for the surrogate `x_t = j_t∘x_{t-1} + c_t` around `prev`.
///
/// `j`, `c` and `prev` are flat row-major `T × d` arrays.
pub fn damped_affine_solve(
    j: &[f64],
    c: &[f64],
    prev: &[f64],
    x0: &[f64],
    trust_ratio: f64,
    block: usize,
) -> (Vec<f64>, ScanStats) {
    let d = x0.len();
    let t_len = j.len() / d;
    let q = 1.0;
    let r = trust_ratio;
    let s = q + r;
    let gain = q / s;
    crate::flops::scan(crate::flops::KALMAN_FLOPS as usize * j.len());

    let elems: Vec<FilterElement> = (0..t_len)
        .map(|t| {
            let row = t * d..(t + 1) * d;
            let (jr, cr, yr) = (&j[row.clone()], &c[row.clone()], &prev[row]);
            let mut e = FilterElement {
                a: vec![0.0; d],
                b: vec![0.0; d],
                c: vec![0.0; d],
                eta: vec![0.0; d],
                j: vec![0.0; d],
            };
            for k in 0..d {
                if t == 0 {
                    // prior x_{-1} = x0 with zero variance
                    let m_pred = jr[k] * x0[k] + cr[k];
                    e.b[k] = m_pred + gain * (yr[k] - m_pred);
                    e.c[k] = q * (1.0 - gain);
                } else {
                    e.a[k] = (1.0 - gain) * jr[k];
                    e.b[k] = cr[k] + gain * (yr[k] - cr[k]);
                    e.c[k] = (1.0 - gain) * q;
                    e.eta[k] = jr[k] * (yr[k] - cr[k]) / s;
                    e.j[k] = jr[k] * jr[k] / s;
                }
            }
            e
        })
        .collect();
    let (filtered, mut stats) = inclusive_scan(&elems, block);

    // RTS mean recursion m^s_t = E_t m^s_{t+1} + g_t
    let mut gain_next = vec![0.0; t_len * d];
    let mut offset = vec![0.0; t_len * d];
    for t in 0..t_len {
        let f = &filtered[t];
        for k in 0..d {
            let idx = t * d + k;
            if t + 1 < t_len {
                let jn = j[(t + 1) * d + k];
                let cn = c[(t + 1) * d + k];
                let p = f.c[k];
                let p_pred = jn * jn * p + q;
                let e = p * jn / p_pred;
                gain_next[idx] = e;
                offset[idx] = f.b[k] - e * (jn * f.b[k] + cn);
            } else {
                offset[idx] = f.b[k];
            }
        }
    }
    let (smoothed, rstats) = reverse_scan_affine_flat(&gain_next, &offset, d, &vec![0.0; d], block);
    stats.sync_rounds += rstats.sync_rounds;
    (smoothed, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::scan_affine_flat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct solve of the normal equations (tridiagonal, Thomas algorithm).
    fn tridiagonal_oracle(j: &[f64], c: &[f64], y: &[f64], x0: f64, q: f64, r: f64) -> Vec<f64> {
        let n = j.len();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for t in 0..n {
            diag[t] = 1.0 / q + 1.0 / r;
            rhs[t] = c[t] / q + y[t] / r;
            if t == 0 {
                rhs[t] += j[0] * x0 / q;
            } else {
                lower[t] = -j[t] / q;
            }
            if t + 1 < n {
                diag[t] += j[t + 1] * j[t + 1] / q;
                upper[t] = -j[t + 1] / q;
                rhs[t] -= j[t + 1] * c[t + 1] / q;
            }
        }
        for t in 1..n {
            let m = lower[t] / diag[t - 1];
            diag[t] -= m * upper[t - 1];
            rhs[t] -= m * rhs[t - 1];
        }
        let mut x = vec![0.0; n];
        x[n - 1] = rhs[n - 1] / diag[n - 1];
        for t in (0..n - 1).rev() {
            x[t] = (rhs[t] - upper[t] * x[t + 1]) / diag[t];
        }
        x
    }

    #[test]
    fn matches_direct_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(t_len, ratio) in &[(1usize, 0.5), (7, 2.0), (40, 0.1), (130, 10.0)] {
            let j: Vec<f64> = (0..t_len).map(|_| rng.random_range(0.1..0.95)).collect();
            let c: Vec<f64> = (0..t_len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x0 = 0.3;
            let (got, _) = damped_affine_solve(&j, &c, &y, &[x0], ratio, 4);
            let want = tridiagonal_oracle(&j, &c, &y, x0, 1.0, ratio);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "T={t_len} ratio={ratio}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn huge_trust_ratio_recovers_newton_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 3;
        let t_len = 50;
        let j: Vec<f64> = (0..t_len * d).map(|_| rng.random_range(0.2..0.9)).collect();
        let c: Vec<f64> = (0..t_len * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let prev = vec![5.0; t_len * d];
        let x0 = [0.1, 0.2, -0.3];
        let (damped, _) = damped_affine_solve(&j, &c, &prev, &x0, 1e12, 8);
        let (newton, _) = scan_affine_flat(&j, &c, d, &x0, 8);
        for (a, b) in damped.iter().zip(&newton) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn small_trust_ratio_stays_near_previous_iterate() {
        let t_len = 20;
        let j = vec![0.5; t_len];
        let c = vec![1.0; t_len];
        let prev = vec![-3.0; t_len];
        let (out, _) = damped_affine_solve(&j, &c, &prev, &[0.0], 1e-8, 4);
        for v in out {
            assert!((v + 3.0).abs() < 1e-6);
        }
    }
}
