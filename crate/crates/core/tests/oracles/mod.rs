//! Slow reference solvers used to check the fast ones. Nothing here calls
//! into the library's own projections or pooling code.

#![allow(dead_code)]

use drago_core::dualprox::UncertaintySet;

/// Projection onto the probability simplex by bisection on the threshold
/// `tau` with `Σ max(v_i − tau, 0) = 1`.
pub fn simplex_bisect(v: &[f64]) -> Vec<f64> {
    capped_simplex_bisect(v, f64::INFINITY)
}

/// Projection onto `{q : 0 ≤ q ≤ cap, Σ q = 1}` by threshold bisection.
pub fn capped_simplex_bisect(v: &[f64], cap: f64) -> Vec<f64> {
    let mass = |tau: f64| v.iter().map(|&x| (x - tau).clamp(0.0, cap)).sum::<f64>();
    let hi0 = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo0 = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // mass is piecewise linear; finish with an exact solve on the active set
    let tau = 0.5 * (lo + hi);
    let free: Vec<usize> = (0..v.len()).filter(|&i| v[i] - tau > 0.0 && v[i] - tau < cap).collect();
    let capped_mass: f64 = v.iter().filter(|&&x| x - tau >= cap).map(|_| cap).sum();
    let tau = if free.is_empty() {
        tau
    } else {
        (free.iter().map(|&i| v[i]).sum::<f64>() + capped_mass - 1.0) / free.len() as f64
    };
    v.iter().map(|&x| (x - tau).clamp(0.0, cap)).collect()
}

/// Dykstra's alternating projections over a list of closed convex sets, each
/// given by its projection operator.
pub fn dykstra(y: &[f64], projections: &[&dyn Fn(&[f64]) -> Vec<f64>], max_cycles: usize) -> Vec<f64> {
    let n = y.len();
    let mut x = y.to_vec();
    let mut incr = vec![vec![0.0; n]; projections.len()];
    for _ in 0..max_cycles {
        let start = x.clone();
        let mut shift: f64 = 0.0;
        for (k, proj) in projections.iter().enumerate() {
            let z: Vec<f64> = x.iter().zip(&incr[k]).map(|(a, b)| a + b).collect();
            let nx = proj(&z);
            for i in 0..n {
                let next = z[i] - nx[i];
                shift = shift.max((next - incr[k][i]).abs());
                incr[k][i] = next;
            }
            x = nx;
        }
        // net movement over a cycle; summed per-step movement never settles in floating point
        if linf(&x, &start) < 1e-15 && shift < 1e-13 {
            break;
        }
    }
    x
}

/// Projection onto the permutahedron of ascending `sigma` by enumerating KKT
/// active sets. The set is permutation invariant, so the projection keeps the
/// order of `y`; in that order the constraints are prefix sums
/// `q_(1) + … + q_(k) ≤ (sum of the k largest σ)` with equality at `k = n`.
/// Each of the `2^(n-1)` active sets gives blocks shifted uniformly; the
/// answer is the one that is feasible with nonnegative multipliers.
/// Keep `n ≤ 16`.
pub fn permutahedron_project(y: &[f64], sigma: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]));
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut top = vec![0.0; n + 1];
    for k in 1..=n {
        top[k] = top[k - 1] + sigma[n - k];
    }
    let tol = 1e-12;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1u32 << (n - 1)) {
        let mut ends: Vec<usize> = (1..n).filter(|k| mask >> (k - 1) & 1 == 1).collect();
        ends.push(n);
        let mut q = vec![0.0; n];
        let mut shifts = Vec::new();
        let mut lo = 0;
        for &hi in &ends {
            let sum: f64 = ys[lo..hi].iter().sum();
            let shift = (sum - (top[hi] - top[lo])) / (hi - lo) as f64;
            for i in lo..hi {
                q[i] = ys[i] - shift;
            }
            shifts.push(shift);
            lo = hi;
        }
        // the multiplier of an active prefix is the drop in shift across it
        if shifts.windows(2).any(|w| w[0] < w[1] - tol) {
            continue;
        }
        let mut prefix = 0.0;
        if (0..n).any(|k| {
            prefix += q[k];
            prefix > top[k + 1] + tol
        }) {
            continue;
        }
        let dist: f64 = q.iter().zip(&ys).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, q));
        }
    }
    let (_, qs) = best.expect("some active set satisfies the KKT conditions");
    let mut out = vec![0.0; n];
    for (k, &i) in order.iter().enumerate() {
        out[i] = qs[k];
    }
    out
}

/// Projection onto `{q in simplex : ½‖q − 1/n‖² ≤ rho}`.
pub fn chi2_ball_project(y: &[f64], rho: f64) -> Vec<f64> {
    let n = y.len();
    let c = 1.0 / n as f64;
    let r = (2.0 * rho).sqrt();
    let ball = move |z: &[f64]| {
        let d: f64 = z.iter().map(|v| (v - c) * (v - c)).sum::<f64>().sqrt();
        if d <= r {
            z.to_vec()
        } else {
            z.iter().map(|v| c + (v - c) * r / d).collect()
        }
    };
    let simplex = |z: &[f64]| simplex_bisect(z);
    dykstra(y, &[&simplex, &ball], 200_000)
}

/// CVaR weights of level `theta` as an ascending spectrum, built from the
/// definition `q_i ≤ 1/(n theta)`.
pub fn cvar_sigma(n: usize, theta: f64) -> Vec<f64> {
    let cap = 1.0 / (n as f64 * theta);
    let mut sigma = vec![0.0; n];
    let mut left = 1.0;
    for k in (0..n).rev() {
        let w = cap.min(left);
        sigma[k] = w;
        left -= w;
    }
    sigma
}

pub fn project_onto(set: &UncertaintySet, y: &[f64]) -> Vec<f64> {
    let n = y.len();
    match set {
        UncertaintySet::Cvar { theta } => capped_simplex_bisect(y, 1.0 / (n as f64 * theta)),
        UncertaintySet::Spectral { sigma } => permutahedron_project(y, sigma),
        UncertaintySet::Chi2Ball { rho } => chi2_ball_project(y, *rho),
    }
}

/// Projected gradient ascent on
/// `<l, q> − (nu/2)‖q − 1/n‖² − (omega/2)‖q − q_prev‖²` with step
/// `1/(nu + omega)`, from the uniform vector.
pub fn ascent_chi2(set: &UncertaintySet, l: &[f64], nu: f64, q_prev: &[f64], omega: f64) -> Vec<f64> {
    let n = l.len();
    let c = 1.0 / n as f64;
    let step = 1.0 / (nu + omega);
    let mut q = vec![c; n];
    for _ in 0..50 {
        let y: Vec<f64> =
            (0..n).map(|i| q[i] + step * (l[i] - nu * (q[i] - c) - omega * (q[i] - q_prev[i]))).collect();
        let next = project_onto(set, &y);
        let moved = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if moved < 1e-15 {
            break;
        }
    }
    q
}

/// Maximizer of `<v, q> − nu Σ q ln(n q) − omega KL(q‖q_prev)` over the CVaR
/// set, from the stationarity conditions
/// `q_i = min(cap, exp((v_i − nu(ln n + 1) + omega ln q_prev_i − tau)/(nu + omega)))`
/// with `tau` found by bisection.
pub fn kl_cvar(v: &[f64], theta: f64, nu: f64, q_prev: &[f64], omega: f64) -> Vec<f64> {
    let n = v.len();
    let cap = 1.0 / (n as f64 * theta);
    let s = nu + omega;
    let base: Vec<f64> = (0..n)
        .map(|i| {
            let prev = if omega > 0.0 { omega * q_prev[i].ln() } else { 0.0 };
            (v[i] - nu * ((n as f64).ln() + 1.0) + prev) / s
        })
        .collect();
    let q_of = |tau: f64| -> Vec<f64> { base.iter().map(|b| (b - tau / s).exp().min(cap)).collect() };
    let (mut lo, mut hi) = (-1e3 * s, 1e3 * s);
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        if q_of(mid).iter().sum::<f64>() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    q_of(0.5 * (lo + hi))
}

/// Minimizer over nondecreasing `z` of a separable convex objective by the
/// max-min formula `z_i = max_{j≤i} min_{k≥i} m(j, k)`, where `m(j, k)` is
/// the minimizer of the terms `j..=k` sharing one value. `pool_min` returns
/// that scalar minimizer. `O(n³)` pool evaluations at most.
pub fn isotonic_max_min(n: usize, pool_min: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut m = vec![vec![0.0; n]; n];
    for j in 0..n {
        for k in j..n {
            m[j][k] = pool_min(j, k);
        }
    }
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|j| (i..n).map(|k| m[j][k]).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Root of a nonincreasing or nondecreasing scalar function by bisection on
/// an expanding bracket.
pub fn bisect_root(f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo) > 0.0 {
        lo *= 2.0;
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Central finite-difference gradient.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|k| {
            let mut a = w.to_vec();
            let mut b = w.to_vec();
            a[k] += h;
            b[k] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
