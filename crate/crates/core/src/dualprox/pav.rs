//! Maximization over a permutahedron by isotonic regression.
//!
//! For a spectrum `sigma` (nondecreasing, sums to one) and a separable penalty
//! `D(q) = sum_i phi(q_i)`, the problem
//!
//! ```text
//! max_{q in conv(perm(sigma))}  <l, q> - nu * D(q)
//! ```
//!
//! is dual to `min_{z_1 <= ... <= z_n} sum_i sigma_i z_i + nu * phi*((l_(i) - z_i) / nu)`
//! where `l_(1) <= ... <= l_(n)` are the sorted losses. The primal solution is
//! recovered as `q_(i) = (phi*)'((l_(i) - z_i) / nu)`. Each pool of the
//! pool-adjacent-violators pass has a closed-form minimizer for both
//! supported penalties.

use alloc::vec;
use alloc::vec::Vec;

use super::{Certificate, Penalty, ProxResult};
use crate::error::{invalid, Result};

/// Permutation sorting `l` in nondecreasing order, ties broken by index.
pub fn argsort_asc(l: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..l.len()).collect();
    order.sort_by(|&a, &b| l[a].total_cmp(&l[b]));
    order
}

#[derive(Clone, Copy, Debug)]
struct Pool {
    start: usize,
    len: usize,
    // Chi2Half: sum of (l_(i) - nu * (sigma_i - 1/n)); KL: log-sum-exp of (l_(i)/nu - 1)
    stat: f64,
    sigma_sum: f64,
    z: f64,
}

fn pool_minimizer(penalty: Penalty, stat: f64, sigma_sum: f64, len: usize, n: usize, nu: f64) -> f64 {
    match penalty {
        Penalty::Chi2Half => stat / len as f64,
        Penalty::Kl => {
            if sigma_sum <= 0.0 {
                f64::INFINITY
            } else {
                nu * (stat - libm::log(n as f64 * sigma_sum))
            }
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = if a > b { a } else { b };
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(libm::exp(a - m) + libm::exp(b - m))
}

/// Solves the isotonic dual on already sorted losses. Returns the
/// nondecreasing `z` (sorted order) and the pool boundaries.
pub(crate) fn isotonic_solve(
    sorted_l: &[f64],
    sigma: &[f64],
    penalty: Penalty,
    nu: f64,
) -> (Vec<f64>, Vec<usize>) {
    let n = sorted_l.len();
    let inv_n = 1.0 / n as f64;
    let mut stack: Vec<Pool> = Vec::with_capacity(n);
    for i in 0..n {
        let stat = match penalty {
            Penalty::Chi2Half => sorted_l[i] - nu * (sigma[i] - inv_n),
            Penalty::Kl => sorted_l[i] / nu - 1.0,
        };
        let mut pool = Pool {
            start: i,
            len: 1,
            stat,
            sigma_sum: sigma[i],
            z: pool_minimizer(penalty, stat, sigma[i], 1, n, nu),
        };
        while let Some(prev) = stack.last() {
            if prev.z <= pool.z {
                break;
            }
            let prev = stack.pop().unwrap();
            let stat = match penalty {
                Penalty::Chi2Half => prev.stat + pool.stat,
                Penalty::Kl => log_add_exp(prev.stat, pool.stat),
            };
            let len = prev.len + pool.len;
            let sigma_sum = prev.sigma_sum + pool.sigma_sum;
            pool = Pool {
                start: prev.start,
                len,
                stat,
                sigma_sum,
                z: pool_minimizer(penalty, stat, sigma_sum, len, n, nu),
            };
        }
        stack.push(pool);
    }
    let mut z = vec![0.0; n];
    let mut boundaries = Vec::with_capacity(stack.len());
    for pool in &stack {
        boundaries.push(pool.start);
        z[pool.start..pool.start + pool.len].fill(pool.z);
    }
    (z, boundaries)
}

/// Weight recovered from the dual variable: `(phi*)'((l - z) / nu)`.
pub(crate) fn recover_weight(penalty: Penalty, l: f64, z: f64, nu: f64, n: usize) -> f64 {
    let inv_n = 1.0 / n as f64;
    match penalty {
        Penalty::Chi2Half => inv_n + (l - z) / nu,
        Penalty::Kl => inv_n * libm::exp((l - z) / nu - 1.0),
    }
}

/// Value of the isotonic objective `sum_i sigma_i z_i + nu * phi*((l_(i) - z_i)/nu)`
/// at a given (sorted-order) `z`.
pub fn isotonic_objective(sorted_l: &[f64], sigma: &[f64], penalty: Penalty, nu: f64, z: &[f64]) -> f64 {
    let n = sorted_l.len() as f64;
    sorted_l
        .iter()
        .zip(sigma)
        .zip(z)
        .map(|((&l, &s), &zi)| {
            let r = (l - zi) / nu;
            let conj = match penalty {
                Penalty::Chi2Half => r / n + 0.5 * r * r,
                Penalty::Kl => libm::exp(r - 1.0) / n,
            };
            s * zi + nu * conj
        })
        .sum()
}

/// Derivative of one isotonic term with respect to its `z`.
pub fn isotonic_term_derivative(l: f64, sigma: f64, penalty: Penalty, nu: f64, z: f64, n: usize) -> f64 {
    sigma - recover_weight(penalty, l, z, nu, n)
}

/// Maximizes `<l, q> - nu_eff * D(q || 1/n)` over the permutahedron of `sigma`.
///
/// `sigma` must be nondecreasing, nonnegative and sum to one.
pub fn pav_isotonic_prox(l: &[f64], sigma: &[f64], penalty: Penalty, nu_eff: f64) -> Result<ProxResult> {
    let n = l.len();
    if n == 0 || sigma.len() != n {
        return Err(invalid!("loss vector of length {} with spectrum of length {}", n, sigma.len()));
    }
    if !(nu_eff > 0.0) || !nu_eff.is_finite() {
        return Err(invalid!("isotonic prox requires a positive penalty weight, got {nu_eff}"));
    }
    if !crate::linalg::all_finite(l) {
        return Err(invalid!("non-finite loss vector"));
    }
    let order = argsort_asc(l);
    let sorted: Vec<f64> = order.iter().map(|&i| l[i]).collect();
    let (z, boundaries) = isotonic_solve(&sorted, sigma, penalty, nu_eff);
    let mut q = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        q[i] = recover_weight(penalty, sorted[rank], z[rank], nu_eff, n);
    }
    super::clamp_and_normalize(&mut q);
    let iterations = boundaries.len();
    Ok(ProxResult {
        q,
        certificate: Certificate::Pools { z, boundaries },
        iterations,
    })
}

/// Vertex solution for `nu = 0`: the `k`-th smallest loss receives `sigma_k`.
pub fn sorted_vertex(l: &[f64], sigma: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; l.len()];
    for (rank, i) in argsort_asc(l).into_iter().enumerate() {
        q[i] = sigma[rank];
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualprox::UncertaintySet;

    #[test]
    fn uniform_spectrum_gives_uniform_weights() {
        let sigma = [0.25; 4];
        for pen in [Penalty::Chi2Half, Penalty::Kl] {
            let r = pav_isotonic_prox(&[3.0, -1.0, 7.0, 0.5], &sigma, pen, 0.3).unwrap();
            for qi in &r.q {
                assert!((qi - 0.25).abs() < 1e-12, "{:?}", r.q);
            }
        }
    }

    #[test]
    fn huge_penalty_returns_center() {
        let l = [1.0, 2.0, 3.0, 4.0];
        let sigma = UncertaintySet::Cvar { theta: 0.5 }.spectrum(4).unwrap();
        let nu = 1e6 * 4.0 * 4.0;
        let r = pav_isotonic_prox(&l, &sigma, Penalty::Chi2Half, nu).unwrap();
        for qi in &r.q {
            assert!((qi - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn vertex_solution_orders_by_loss() {
        let sigma = [0.0, 0.0, 0.5, 0.5];
        assert_eq!(sorted_vertex(&[4.0, 1.0, 3.0, 2.0], &sigma), vec![0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn vertex_ties_break_by_index() {
        let sigma = [0.0, 0.25, 0.75];
        assert_eq!(sorted_vertex(&[1.0, 1.0, 1.0], &sigma), vec![0.0, 0.25, 0.75]);
    }

    #[test]
    fn rejects_nonpositive_weight() {
        assert!(pav_isotonic_prox(&[1.0, 2.0], &[0.5, 0.5], Penalty::Chi2Half, 0.0).is_err());
    }

    #[test]
    fn pools_are_stationary_and_monotone() {
        let l = [0.3, 5.0, -2.0, 1.1, 1.0, 4.2, 0.0];
        let sigma = UncertaintySet::Cvar { theta: 0.4 }.spectrum(7).unwrap();
        for pen in [Penalty::Chi2Half, Penalty::Kl] {
            let r = pav_isotonic_prox(&l, &sigma, pen, 0.2).unwrap();
            let Certificate::Pools { z, boundaries } = r.certificate else { panic!() };
            assert!(z.windows(2).all(|w| w[0] <= w[1]));
            let order = argsort_asc(&l);
            let mut ends = boundaries[1..].to_vec();
            ends.push(l.len());
            for (&s, &e) in boundaries.iter().zip(&ends) {
                let resid: f64 = (s..e)
                    .map(|k| isotonic_term_derivative(l[order[k]], sigma[k], pen, 0.2, z[k], l.len()))
                    .sum();
                assert!(resid.abs() <= 1e-10, "{pen:?} {resid}");
            }
        }
    }
}
