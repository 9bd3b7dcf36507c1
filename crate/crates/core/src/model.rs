//! Losses, the penalized saddle objective and its full-batch gradient.
//!
//! The objective is
//!
//! ```text
//! L(w, q) = Σ_i q_i l_i(w) − nu D(q‖1/n) + (mu/2)‖w‖²
//! ```
//!
//! Classification parameters are a flat class-major vector of length `C·d`:
//! entries `c·d .. (c+1)·d` hold the weights of class `c`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dualprox::{membership_residual, DualOracle, UncertaintySet, UncertaintySpec, FEASIBILITY_TOL};
use crate::error::{invalid, Error, Result};
use crate::linalg::{all_finite, dot, norm, norm_sq};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Real(Vec<f64>),
    Class { labels: Vec<usize>, classes: usize },
}

/// Row-major feature matrix with labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMatrix {
    features: Vec<f64>,
    labels: Labels,
    n: usize,
    d: usize,
}

impl DatasetMatrix {
    pub fn new(features: Vec<f64>, n: usize, d: usize, labels: Labels) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid!("dataset must have n ≥ 1 and d ≥ 1, got n = {n}, d = {d}"));
        }
        if features.len() != n * d {
            return Err(invalid!("expected {} feature entries, got {}", n * d, features.len()));
        }
        if !all_finite(&features) {
            return Err(invalid!("non-finite feature entry"));
        }
        match &labels {
            Labels::Real(y) => {
                if y.len() != n {
                    return Err(invalid!("expected {n} labels, got {}", y.len()));
                }
                if !all_finite(y) {
                    return Err(invalid!("non-finite label"));
                }
            }
            Labels::Class { labels, classes } => {
                if labels.len() != n {
                    return Err(invalid!("expected {n} labels, got {}", labels.len()));
                }
                if *classes < 2 {
                    return Err(invalid!("classification needs at least two classes"));
                }
                if let Some((i, c)) = labels.iter().enumerate().find(|(_, c)| **c >= *classes) {
                    return Err(invalid!("label {c} of row {i} is not below the class count {classes}"));
                }
            }
        }
        Ok(DatasetMatrix { features, labels, n, d })
    }

    pub fn regression(features: Vec<f64>, n: usize, d: usize, y: Vec<f64>) -> Result<Self> {
        Self::new(features, n, d, Labels::Real(y))
    }

    pub fn classification(features: Vec<f64>, n: usize, d: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        Self::new(features, n, d, Labels::Class { labels, classes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn max_row_norm_sq(&self) -> f64 {
        (0..self.n).map(|i| norm_sq(self.row(i))).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `½ (y − xᵀw)²`
    SquaredError,
    /// `log Σ_c exp(xᵀw_c) − xᵀw_y`
    MultinomialCrossEntropy { classes: usize },
}

impl LossKind {
    pub fn param_dim(&self, d: usize) -> usize {
        match self {
            LossKind::SquaredError => d,
            LossKind::MultinomialCrossEntropy { classes } => classes * d,
        }
    }
}

/// Loss kind with its Lipschitz constant `g` and smoothness constant `l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub g: f64,
    pub l: f64,
}

/// `(G, L)` for the dataset. For squared error `G` is twice the largest
/// component gradient norm at `w = 0`.
pub fn estimate_constants(data: &DatasetMatrix, kind: LossKind) -> Result<(f64, f64)> {
    if data.n() == 0 {
        return Err(invalid!("empty dataset"));
    }
    let max_sq = data.max_row_norm_sq();
    let (g, l) = match (kind, data.labels()) {
        (LossKind::SquaredError, Labels::Real(y)) => {
            let g0 = (0..data.n()).map(|i| y[i].abs() * norm(data.row(i))).fold(0.0, f64::max);
            (2.0 * g0, max_sq)
        }
        (LossKind::MultinomialCrossEntropy { classes }, Labels::Class { classes: c, .. }) => {
            if classes != *c {
                return Err(invalid!("loss has {classes} classes but the labels have {c}"));
            }
            (libm::sqrt(2.0 * max_sq), 0.5 * max_sq)
        }
        _ => return Err(invalid!("loss kind does not match the label type")),
    };
    if !(l > 0.0) {
        return Err(Error::Degenerate("smoothness constant is zero (all features vanish)".into()));
    }
    if !(g > 0.0) {
        return Err(Error::Degenerate("Lipschitz constant is zero (all gradients vanish at the origin)".into()));
    }
    Ok((g, l))
}

/// `n · q_max` over the uncertainty set.
///
/// For the chi-square ball the exact value `min(n, 1 + n·sqrt(2 rho (n−1)/n))`
/// is returned: the largest coordinate on `½‖q − 1/n‖² ≤ rho` moves
/// along `e_i − 1/n`, whose norm is `sqrt((n−1)/n)`.
pub fn kappa_q(uncertainty: &UncertaintySpec, n: usize) -> f64 {
    let nf = n as f64;
    match &uncertainty.set {
        UncertaintySet::Cvar { theta } => {
            let k = nf * theta;
            if libm::floor(k + 1e-9) >= 1.0 {
                1.0 / theta
            } else {
                nf
            }
        }
        UncertaintySet::Spectral { sigma } => nf * sigma.iter().copied().fold(0.0, f64::max),
        UncertaintySet::Chi2Ball { rho } => {
            let k = 1.0 + nf * libm::sqrt(2.0 * rho * (nf - 1.0) / nf);
            if k < nf {
                k
            } else {
                nf
            }
        }
    }
}

/// The saddle problem: data, loss, uncertainty set and the two regularizers.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    data: DatasetMatrix,
    loss: LossModel,
    uncertainty: UncertaintySpec,
    mu: f64,
    nu: f64,
    oracle: DualOracle,
}

/// Objective value at `w` together with its gradient and maximizing weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub q: Vec<f64>,
}

impl ProblemSpec {
    pub fn new(data: DatasetMatrix, kind: LossKind, uncertainty: UncertaintySpec, mu: f64, nu: f64) -> Result<Self> {
        let (g, l) = estimate_constants(&data, kind)?;
        Self::with_constants(data, LossModel { kind, g, l }, uncertainty, mu, nu)
    }

    pub fn with_constants(
        data: DatasetMatrix,
        loss: LossModel,
        uncertainty: UncertaintySpec,
        mu: f64,
        nu: f64,
    ) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() || !(nu >= 0.0) || !nu.is_finite() {
            return Err(invalid!("regularizers must be finite and nonnegative, got mu = {mu}, nu = {nu}"));
        }
        if !(loss.g > 0.0 && loss.g.is_finite() && loss.l > 0.0 && loss.l.is_finite()) {
            return Err(invalid!("loss constants must be positive and finite, got G = {}, L = {}", loss.g, loss.l));
        }
        match (loss.kind, data.labels()) {
            (LossKind::SquaredError, Labels::Real(_)) => {}
            (LossKind::MultinomialCrossEntropy { classes }, Labels::Class { classes: c, .. }) if classes == *c => {}
            _ => return Err(invalid!("loss kind does not match the labels")),
        }
        let oracle = DualOracle::new(&uncertainty, data.n())?;
        Ok(ProblemSpec { data, loss, uncertainty, mu, nu, oracle })
    }

    /// Copy with different regularizers.
    pub fn with_regularization(&self, mu: f64, nu: f64) -> Result<Self> {
        Self::with_constants(self.data.clone(), self.loss, self.uncertainty.clone(), mu, nu)
    }

    /// Copy with a user-supplied Lipschitz constant.
    pub fn with_g(&self, g: f64) -> Result<Self> {
        let loss = LossModel { g, ..self.loss };
        Self::with_constants(self.data.clone(), loss, self.uncertainty.clone(), self.mu, self.nu)
    }

    pub fn data(&self) -> &DatasetMatrix {
        &self.data
    }
    pub fn loss(&self) -> &LossModel {
        &self.loss
    }
    pub fn uncertainty(&self) -> &UncertaintySpec {
        &self.uncertainty
    }
    pub fn oracle(&self) -> &DualOracle {
        &self.oracle
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn n(&self) -> usize {
        self.data.n()
    }
    /// Parameter count `p`.
    pub fn p(&self) -> usize {
        self.loss.kind.param_dim(self.data.d())
    }
    pub fn kappa_q(&self) -> f64 {
        kappa_q(&self.uncertainty, self.n())
    }

    /// `l_i(w)`; one oracle query.
    pub fn loss_at(&self, i: usize, w: &[f64]) -> f64 {
        let x = self.data.row(i);
        match (&self.loss.kind, self.data.labels()) {
            (LossKind::SquaredError, Labels::Real(y)) => {
                let r = dot(x, w) - y[i];
                0.5 * r * r
            }
            (LossKind::MultinomialCrossEntropy { classes }, Labels::Class { labels, .. }) => {
                let d = self.data.d();
                let scores: Vec<f64> = (0..*classes).map(|c| dot(x, &w[c * d..(c + 1) * d])).collect();
                log_sum_exp(&scores) - scores[labels[i]]
            }
            _ => unreachable!("label type checked at construction"),
        }
    }

    /// Adds `coef · ∇l_i(w)` to `out` and returns `l_i(w)`; one oracle query.
    pub fn add_scaled_grad(&self, i: usize, w: &[f64], coef: f64, out: &mut [f64]) -> f64 {
        let x = self.data.row(i);
        match (&self.loss.kind, self.data.labels()) {
            (LossKind::SquaredError, Labels::Real(y)) => {
                let r = dot(x, w) - y[i];
                if coef != 0.0 {
                    crate::linalg::axpy(coef * r, x, out);
                }
                0.5 * r * r
            }
            (LossKind::MultinomialCrossEntropy { classes }, Labels::Class { labels, .. }) => {
                let d = self.data.d();
                let mut scores: Vec<f64> = (0..*classes).map(|c| dot(x, &w[c * d..(c + 1) * d])).collect();
                let lse = log_sum_exp(&scores);
                let loss = lse - scores[labels[i]];
                if coef != 0.0 {
                    for (c, s) in scores.iter_mut().enumerate() {
                        let mut p = libm::exp(*s - lse);
                        if c == labels[i] {
                            p -= 1.0;
                        }
                        crate::linalg::axpy(coef * p, x, &mut out[c * d..(c + 1) * d]);
                    }
                }
                loss
            }
            _ => unreachable!("label type checked at construction"),
        }
    }

    /// Overwrites `grad` with `∇l_i(w)` and returns `l_i(w)`.
    pub fn loss_grad_into(&self, i: usize, w: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        self.add_scaled_grad(i, w, 1.0, grad)
    }

    /// Vector of all losses; `n` queries.
    pub fn losses(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| self.loss_at(i, w)).collect()
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.p() {
            return Err(invalid!("parameter vector has length {} but p = {}", w.len(), self.p()));
        }
        if !all_finite(w) {
            return Err(invalid!("non-finite parameter vector"));
        }
        Ok(())
    }

    /// `max_q L(w, q)`; `n` queries.
    pub fn primal_value(&self, w: &[f64]) -> Result<f64> {
        self.check_w(w)?;
        let l = self.losses(w);
        let q = self.oracle.max(&l, self.nu)?;
        Ok(self.objective_from_losses(&l, w, &q))
    }

    pub(crate) fn objective_from_losses(&self, l: &[f64], w: &[f64], q: &[f64]) -> f64 {
        dot(q, l) - self.nu * self.uncertainty.divergence(q) + 0.5 * self.mu * norm_sq(w)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

/// `(l_i(w), ∇l_i(w))`.
pub fn component_loss_grad(spec: &ProblemSpec, i: usize, w: &[f64]) -> Result<(f64, Vec<f64>)> {
    spec.check_w(w)?;
    if i >= spec.n() {
        return Err(invalid!("component index {i} out of range for n = {}", spec.n()));
    }
    let mut grad = vec![0.0; spec.p()];
    let loss = spec.loss_grad_into(i, w, &mut grad);
    Ok((loss, grad))
}

/// `L(w, q)`; `q` must lie in the uncertainty set up to the feasibility tolerance.
pub fn full_objective(spec: &ProblemSpec, w: &[f64], q: &[f64]) -> Result<f64> {
    spec.check_w(w)?;
    if q.len() != spec.n() {
        return Err(invalid!("weight vector has length {} but n = {}", q.len(), spec.n()));
    }
    let resid = membership_residual(&spec.uncertainty, q)?;
    if resid > FEASIBILITY_TOL {
        return Err(Error::Infeasible(alloc::format!("weights violate the uncertainty set by {resid:e}")));
    }
    let l = spec.losses(w);
    Ok(spec.objective_from_losses(&l, w, q))
}

/// Value, gradient and maximizing weights of `w ↦ max_q L(w, q)`; `n` queries.
pub fn primal_value_and_gradient(spec: &ProblemSpec, w: &[f64]) -> Result<PrimalEval> {
    spec.check_w(w)?;
    let l = spec.losses(w);
    let q = spec.oracle.max(&l, spec.nu)?;
    let mut grad: Vec<f64> = w.iter().map(|x| spec.mu * x).collect();
    for (i, &qi) in q.iter().enumerate() {
        if qi != 0.0 {
            spec.add_scaled_grad(i, w, qi, &mut grad);
        }
    }
    let value = spec.objective_from_losses(&l, w, &q);
    Ok(PrimalEval { value, grad, q })
}
