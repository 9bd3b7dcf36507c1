//! Maximization over the chi-square ball `{q in simplex : ½‖q − 1/n‖² ≤ rho}`.
//!
//! Dualizing the ball constraint with multiplier `lambda ≥ 0` leaves a simplex
//! projection: `q(lambda) = proj(l / (nu + lambda))`. The center `1/n` drops
//! out because `<1/n, q>` is constant on the simplex. The dual derivative is
//! `f'(lambda) = ½‖q(lambda)‖² − rho − 1/(2n)`, decreasing in `lambda`, so the
//! multiplier is found by exponential search followed by bisection.

use alloc::vec;

use super::simplex::{argsort_desc, project_presorted};
use super::{Certificate, ProxResult};
use crate::error::{invalid, Result};
use crate::linalg::{all_finite, norm_sq};

const MAX_DOUBLINGS: usize = 2048;
const MAX_BISECTIONS: usize = 4096;

/// Returns `argmax_{q in ball} <l, q> − (nu_eff/2)‖q − 1/n‖²` with the
/// multiplier of the ball constraint as certificate.
pub fn chi2_ball_prox(l: &[f64], rho: f64, nu_eff: f64, eps: f64) -> Result<ProxResult> {
    let n = l.len();
    if n == 0 {
        return Err(invalid!("empty loss vector"));
    }
    if !all_finite(l) {
        return Err(invalid!("non-finite loss vector"));
    }
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(invalid!("chi-square radius must be finite and nonnegative, got {rho}"));
    }
    if !(nu_eff > 0.0) || !nu_eff.is_finite() {
        return Err(invalid!("chi-square prox requires a positive penalty weight, got {nu_eff}"));
    }
    if !(eps > 0.0) {
        return Err(invalid!("tolerance must be positive, got {eps}"));
    }
    let inv_n = 1.0 / n as f64;
    if rho == 0.0 {
        return Ok(ProxResult { q: vec![inv_n; n], certificate: Certificate::None, iterations: 0 });
    }

    let order = argsort_desc(l);
    let mut q = vec![0.0; n];
    let mut evals = 0usize;
    let mut slope = |lambda: f64, out: &mut [f64]| {
        evals += 1;
        project_presorted(l, &order, 1.0 / (nu_eff + lambda), out);
        0.5 * norm_sq(out) - rho - 0.5 * inv_n
    };

    let f0 = slope(0.0, &mut q);
    if f0 <= eps {
        return Ok(finish(q, 0.0, evals));
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut q_hi = vec![0.0; n];
    let mut f_hi = slope(hi, &mut q_hi);
    let mut doublings = 0;
    while f_hi >= -eps {
        if f_hi.abs() < eps {
            return Ok(finish(q_hi, hi, evals));
        }
        lo = hi;
        hi *= 2.0;
        f_hi = slope(hi, &mut q_hi);
        doublings += 1;
        if doublings >= MAX_DOUBLINGS {
            return Err(crate::Error::Convergence("chi-square multiplier search did not bracket".into()));
        }
    }

    let mut q_mid = vec![0.0; n];
    for _ in 0..MAX_BISECTIONS {
        if hi - lo < eps {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = slope(mid, &mut q_mid);
        if f_mid.abs() < eps {
            return Ok(finish(q_mid, mid, evals));
        }
        if f_mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            core::mem::swap(&mut q_hi, &mut q_mid);
        }
    }
    Ok(finish(q_hi, hi, evals))
}

fn finish(mut q: alloc::vec::Vec<f64>, lambda: f64, iterations: usize) -> ProxResult {
    super::clamp_and_normalize(&mut q);
    ProxResult { q, certificate: Certificate::Multiplier(lambda), iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(q: &[f64]) -> f64 {
        let c = 1.0 / q.len() as f64;
        0.5 * q.iter().map(|x| (x - c) * (x - c)).sum::<f64>()
    }

    #[test]
    fn constant_losses_give_uniform() {
        let r = chi2_ball_prox(&[2.0; 5], 0.1, 1.0, 1e-10).unwrap();
        for x in &r.q {
            assert!((x - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_boundary() {
        let r = chi2_ball_prox(&[1.0, 0.0], 0.01, 1.0, 1e-10).unwrap();
        assert!((ball(&r.q) - 0.01).abs() <= 1e-8, "{:?}", r.q);
        assert!(r.q[0] > r.q[1]);
        // one free coordinate: q = (½ + s, ½ − s) with s² = 0.01
        assert!((r.q[0] - 0.6).abs() < 1e-7);
    }

    #[test]
    fn inactive_ball_is_plain_projection() {
        let l = [0.3, -0.2, 0.5];
        let r = chi2_ball_prox(&l, 3.0, 1.0, 1e-10).unwrap();
        let shifted: alloc::vec::Vec<f64> = l.iter().map(|x| x + 1.0 / 3.0).collect();
        let p = super::super::simplex_project(&shifted);
        for (a, b) in r.q.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(r.certificate, Certificate::Multiplier(0.0));
    }

    #[test]
    fn zero_radius_is_center() {
        let r = chi2_ball_prox(&[5.0, 1.0, 0.0, -3.0], 0.0, 0.5, 1e-10).unwrap();
        assert!(r.q.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(chi2_ball_prox(&[f64::NAN], 0.1, 1.0, 1e-10).is_err());
        assert!(chi2_ball_prox(&[1.0], -0.1, 1.0, 1e-10).is_err());
        assert!(chi2_ball_prox(&[1.0], 0.1, 0.0, 1e-10).is_err());
    }
}
