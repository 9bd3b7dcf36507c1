//! Euclidean projection onto the probability simplex.
//!
//! Sort-based exact algorithm: with `u` sorted in decreasing order, the
//! threshold is `tau = (sum_{j<=k} u_j - 1) / k` for the largest `k` with
//! `u_k > tau`, and the projection is `max(v - tau, 0)`.

use alloc::vec;
use alloc::vec::Vec;

/// Indices of `v` ordered by decreasing value (ties by index).
pub fn argsort_desc(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    order
}

/// Projects `v` onto `{q >= 0, sum q = 1}`.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    let order = argsort_desc(v);
    let mut out = vec![0.0; v.len()];
    project_presorted(v, &order, 1.0, &mut out);
    out
}

/// Projects `scale * v` onto the simplex given `order`, a decreasing sort of `v`.
///
/// `scale` must be positive so the ordering is preserved. Returns the threshold.
pub(crate) fn project_presorted(v: &[f64], order: &[usize], scale: f64, out: &mut [f64]) -> f64 {
    debug_assert!(scale > 0.0);
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let u = scale * v[i];
        let next = cumsum + u;
        let candidate = (next - 1.0) / (k + 1) as f64;
        if u > candidate || k == 0 {
            cumsum = next;
            tau = candidate;
        } else {
            break;
        }
    }
    for (o, &x) in out.iter_mut().zip(v) {
        let y = scale * x - tau;
        *o = if y > 0.0 { y } else { 0.0 };
    }
    tau
}
