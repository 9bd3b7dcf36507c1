//! Dual maximization oracle `l ↦ argmax_{q in Q} <l, q> − nu·D(q‖1/n)` and the
//! Bregman-regularized dual proximal step.
//!
//! Supported sets are spectral risk permutahedra (CVaR is a special case)
//! and chi-square balls. Penalties are `½‖q − 1/n‖²` or `Σ q_i ln(n q_i)`.

pub mod chi2;
pub mod pav;
pub mod simplex;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use chi2::chi2_ball_prox;
pub use pav::{argsort_asc, isotonic_objective, isotonic_term_derivative, pav_isotonic_prox, sorted_vertex};
pub use simplex::{argsort_desc, simplex_project};

/// Bisection tolerance used by the chi-square oracle.
pub const DEFAULT_EPS: f64 = 1e-10;
/// Tolerance on simplex and set membership.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Divergence from the uniform distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// `½‖q − 1/n‖²`
    Chi2Half,
    /// `Σ q_i ln(n q_i)`, the KL divergence to uniform
    Kl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UncertaintySet {
    /// Average of the worst `theta` fraction of losses.
    Cvar { theta: f64 },
    /// Permutahedron of a nondecreasing weight vector summing to one.
    Spectral { sigma: Vec<f64> },
    /// `{q in simplex : ½‖q − 1/n‖² ≤ rho}`
    Chi2Ball { rho: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    pub set: UncertaintySet,
    pub penalty: Penalty,
}

/// Extra information returned by an oracle call.
#[derive(Clone, Debug, PartialEq)]
pub enum Certificate {
    None,
    /// Multiplier of the chi-square ball constraint.
    Multiplier(f64),
    /// Isotonic dual variable in sorted order and the first index of each pool.
    Pools { z: Vec<f64>, boundaries: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxResult {
    pub q: Vec<f64>,
    pub certificate: Certificate,
    pub iterations: usize,
}

/// CVaR spectrum: `floor(n theta)` entries `1/(n theta)` plus one fractional
/// entry, all at the top of an ascending vector.
pub fn cvar_spectrum(n: usize, theta: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid!("spectrum of an empty sample"));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(invalid!("CVaR level must lie in (0, 1], got {theta}"));
    }
    let mut k = n as f64 * theta;
    let rounded = libm::round(k);
    if (k - rounded).abs() <= 1e-9 {
        k = rounded;
    }
    let full = libm::floor(k) as usize;
    let frac = (k - full as f64) / k;
    let mut sigma = vec![0.0; n];
    let top = 1.0 / k;
    for s in sigma.iter_mut().skip(n - full) {
        *s = top;
    }
    if full < n && frac > 0.0 {
        sigma[n - full - 1] = frac;
    }
    Ok(sigma)
}

impl UncertaintySet {
    /// Ascending spectrum for the permutahedron sets.
    pub fn spectrum(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            UncertaintySet::Cvar { theta } => cvar_spectrum(n, *theta),
            UncertaintySet::Spectral { sigma } => {
                check_sigma(sigma, n)?;
                Ok(sigma.clone())
            }
            UncertaintySet::Chi2Ball { .. } => {
                Err(Error::Unsupported("chi-square ball has no spectrum".into()))
            }
        }
    }

    pub fn is_permutahedron(&self) -> bool {
        !matches!(self, UncertaintySet::Chi2Ball { .. })
    }

    /// Same kind of set on a subsample of size `m` out of `n`: CVaR keeps
    /// `theta`, a spectrum is re-binned through its cumulative distribution,
    /// and a ball radius scales by `m/n`.
    pub fn batch_local(&self, m: usize, n: usize) -> Result<UncertaintySet> {
        Ok(match self {
            UncertaintySet::Cvar { theta } => UncertaintySet::Cvar { theta: *theta },
            UncertaintySet::Spectral { sigma } => {
                check_sigma(sigma, n)?;
                let mut cum = vec![0.0; n + 1];
                for i in 0..n {
                    cum[i + 1] = cum[i] + sigma[i];
                }
                // piecewise-linear cumulative weight at fraction x of the sample
                let f = |x: f64| {
                    let pos = x * n as f64;
                    let i = libm::floor(pos) as usize;
                    if i >= n {
                        return 1.0;
                    }
                    cum[i] + (pos - i as f64) * sigma[i]
                };
                let local: Vec<f64> = (0..m)
                    .map(|j| f((j + 1) as f64 / m as f64) - f(j as f64 / m as f64))
                    .map(|x| if x < 0.0 { 0.0 } else { x })
                    .collect();
                let total: f64 = local.iter().sum();
                UncertaintySet::Spectral { sigma: local.into_iter().map(|x| x / total).collect() }
            }
            UncertaintySet::Chi2Ball { rho } => UncertaintySet::Chi2Ball { rho: rho * m as f64 / n as f64 },
        })
    }
}

fn check_sigma(sigma: &[f64], n: usize) -> Result<()> {
    if sigma.len() != n {
        return Err(invalid!("spectrum has length {} but the sample has {}", sigma.len(), n));
    }
    if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(invalid!("spectrum entries must be finite and nonnegative"));
    }
    if sigma.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid!("spectrum must be sorted in nondecreasing order"));
    }
    let total: f64 = sigma.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid!("spectrum must sum to one, sums to {total}"));
    }
    Ok(())
}

impl UncertaintySpec {
    pub fn new(set: UncertaintySet, penalty: Penalty) -> Result<Self> {
        let spec = UncertaintySpec { set, penalty };
        spec.check_static()?;
        Ok(spec)
    }

    pub fn cvar(theta: f64, penalty: Penalty) -> Result<Self> {
        Self::new(UncertaintySet::Cvar { theta }, penalty)
    }

    fn check_static(&self) -> Result<()> {
        match &self.set {
            UncertaintySet::Cvar { theta } => {
                if !(*theta > 0.0 && *theta <= 1.0) {
                    return Err(invalid!("CVaR level must lie in (0, 1], got {theta}"));
                }
            }
            UncertaintySet::Spectral { sigma } => check_sigma(sigma, sigma.len())?,
            UncertaintySet::Chi2Ball { rho } => {
                if !(*rho >= 0.0) || !rho.is_finite() {
                    return Err(invalid!("chi-square radius must be finite and nonnegative, got {rho}"));
                }
                if self.penalty != Penalty::Chi2Half {
                    return Err(Error::Unsupported("chi-square ball supports only the chi2_half penalty".into()));
                }
            }
        }
        Ok(())
    }

    /// Checks the spec against a sample size.
    pub fn validate(&self, n: usize) -> Result<()> {
        self.check_static()?;
        if n == 0 {
            return Err(invalid!("empty sample"));
        }
        if let UncertaintySet::Spectral { sigma } = &self.set {
            check_sigma(sigma, n)?;
        }
        Ok(())
    }

    pub fn divergence(&self, q: &[f64]) -> f64 {
        divergence(self.penalty, q)
    }
}

/// `D(q‖1/n)` for the given penalty.
pub fn divergence(penalty: Penalty, q: &[f64]) -> f64 {
    let n = q.len() as f64;
    match penalty {
        Penalty::Chi2Half => 0.5 * q.iter().map(|x| (x - 1.0 / n) * (x - 1.0 / n)).sum::<f64>(),
        Penalty::Kl => q.iter().filter(|&&x| x > 0.0).map(|&x| x * libm::log(n * x)).sum(),
    }
}

/// Largest constraint violation of `q` for the simplex and the set.
pub fn membership_residual(spec: &UncertaintySpec, q: &[f64]) -> Result<f64> {
    let n = q.len();
    let mut resid = (q.iter().sum::<f64>() - 1.0).abs();
    for &x in q {
        if !x.is_finite() {
            return Ok(f64::INFINITY);
        }
        resid = resid.max(-x);
    }
    match &spec.set {
        UncertaintySet::Chi2Ball { rho } => {
            resid = resid.max(divergence(Penalty::Chi2Half, q) - rho);
        }
        set => {
            let sigma = set.spectrum(n)?;
            let mut sorted = q.to_vec();
            sorted.sort_by(f64::total_cmp);
            let (mut sq, mut ss) = (0.0, 0.0);
            for (a, b) in sorted.iter().zip(&sigma) {
                sq += a;
                ss += b;
                resid = resid.max(ss - sq);
            }
        }
    }
    Ok(resid.max(0.0))
}

/// Zeroes negative entries and rescales to unit sum.
pub(crate) fn clamp_and_normalize(q: &mut [f64]) {
    let mut total = 0.0;
    for x in q.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
        total += *x;
    }
    if total > 0.0 && total != 1.0 {
        for x in q.iter_mut() {
            *x /= total;
        }
    }
}

/// Dual oracle bound to one uncertainty spec and sample size; caches the
/// spectrum.
#[derive(Clone, Debug)]
pub struct DualOracle {
    spec: UncertaintySpec,
    n: usize,
    sigma: Option<Vec<f64>>,
    pub eps: f64,
}

impl DualOracle {
    pub fn new(spec: &UncertaintySpec, n: usize) -> Result<Self> {
        spec.validate(n)?;
        let sigma = if spec.set.is_permutahedron() { Some(spec.set.spectrum(n)?) } else { None };
        Ok(DualOracle { spec: spec.clone(), n, sigma, eps: DEFAULT_EPS })
    }

    pub fn spec(&self) -> &UncertaintySpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Ascending spectrum, `None` for the ball.
    pub fn sigma(&self) -> Option<&[f64]> {
        self.sigma.as_deref()
    }

    /// Solves `max_{q in Q} <l, q> − nu D(q‖1/n)`.
    pub fn solve(&self, l: &[f64], nu: f64) -> Result<ProxResult> {
        if l.len() != self.n {
            return Err(invalid!("loss vector has length {} but the sample has {}", l.len(), self.n));
        }
        if !crate::linalg::all_finite(l) {
            return Err(invalid!("non-finite loss vector"));
        }
        if !(nu >= 0.0) || !nu.is_finite() {
            return Err(invalid!("penalty weight must be finite and nonnegative, got {nu}"));
        }
        match (&self.spec.set, &self.sigma) {
            (UncertaintySet::Chi2Ball { rho }, _) => {
                if nu == 0.0 {
                    return Err(Error::Unsupported("chi-square ball oracle needs a positive penalty weight".into()));
                }
                chi2_ball_prox(l, *rho, nu, self.eps)
            }
            (_, Some(sigma)) => {
                if nu == 0.0 {
                    Ok(ProxResult { q: sorted_vertex(l, sigma), certificate: Certificate::None, iterations: 0 })
                } else {
                    pav_isotonic_prox(l, sigma, self.spec.penalty, nu)
                }
            }
            _ => unreachable!("permutahedron sets always carry a spectrum"),
        }
    }

    pub fn max(&self, l: &[f64], nu: f64) -> Result<Vec<f64>> {
        Ok(self.solve(l, nu)?.q)
    }

    /// Maximizes `<v, q> − nu D(q‖1/n) − omega B_D(q, q_prev)` for an absolute
    /// Bregman weight `omega ≥ 0`.
    pub fn prox_weighted(&self, q_prev: &[f64], v: &[f64], omega: f64, nu: f64) -> Result<Vec<f64>> {
        if !(omega >= 0.0) || !omega.is_finite() {
            return Err(invalid!("Bregman weight must be finite and nonnegative, got {omega}"));
        }
        if q_prev.len() != self.n || v.len() != self.n {
            return Err(invalid!("dual prox dimension mismatch"));
        }
        if omega == 0.0 {
            return self.max(v, nu);
        }
        let shifted: Vec<f64> = match self.spec.penalty {
            Penalty::Chi2Half => v.iter().zip(q_prev).map(|(vi, qi)| vi + omega * qi).collect(),
            Penalty::Kl => {
                let n = self.n as f64;
                v.iter()
                    .zip(q_prev)
                    .map(|(vi, qi)| vi + omega * libm::log(n * qi.max(1e-300)))
                    .collect()
            }
        };
        self.max(&shifted, nu + omega)
    }

    /// The dual step `argmax <v, q> − nu D(q‖1/n) − beta nu B_D(q, q_prev)`.
    pub fn prox_step(&self, q_prev: &[f64], v: &[f64], beta: f64, nu: f64) -> Result<Vec<f64>> {
        if !(beta >= 0.0) {
            return Err(invalid!("proximal coefficient must be nonnegative, got {beta}"));
        }
        self.prox_weighted(q_prev, v, beta * nu, nu)
    }
}

/// One-shot form of [`DualOracle::max`].
pub fn max_oracle(l: &[f64], spec: &UncertaintySpec, nu: f64) -> Result<Vec<f64>> {
    DualOracle::new(spec, l.len())?.max(l, nu)
}

/// One-shot form of [`DualOracle::prox_step`].
pub fn dual_prox_step(
    q_prev: &[f64],
    v_dual: &[f64],
    beta: f64,
    spec: &UncertaintySpec,
    nu: f64,
) -> Result<Vec<f64>> {
    DualOracle::new(spec, q_prev.len())?.prox_step(q_prev, v_dual, beta, nu)
}

/// Human-readable set name, used in trace metadata.
pub fn set_label(set: &UncertaintySet) -> String {
    match set {
        UncertaintySet::Cvar { theta } => alloc::format!("cvar({theta})"),
        UncertaintySet::Spectral { .. } => "spectral".into(),
        UncertaintySet::Chi2Ball { rho } => alloc::format!("chi2_ball({rho})"),
    }
}
