//! Averaging sequences and step coefficients.
//!
//! Regularized mode uses the geometric sequence `a_0 = 0`, `a_t = (1+alpha)^(t-1)`,
//! so `A_t = ((1+alpha)^t − 1)/alpha` and the dual proximal weight
//! `beta_t = A_{t-1}/a_t = (1 − (1+alpha)^(1-t))/alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::ProblemSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleMode {
    Regularized,
    /// Extra anchors for objectives with `mu = 0` or `nu = 0`: `mu1` pulls
    /// toward the previous iterate, `mu2` toward older ones, `nu1` is the dual
    /// Bregman anchor.
    Unregularized { mu1: f64, mu2: f64, nu1: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub alpha: f64,
    pub mode: ScheduleMode,
    /// Number of blocks `M = n/b`.
    pub blocks: usize,
}

/// Coefficients of one iteration, normalized by `a_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoefficients {
    pub a: f64,
    /// `A_{t-1}`
    pub a_sum_prev: f64,
    /// `a_{t-1}/a_t`
    pub ratio: f64,
    /// Weight on `‖w − w_{t-1}‖²/2` after dividing the primal objective by `a_t`.
    pub anchor: f64,
    /// Weight on each older history term `‖w − w_s‖²/2`, same units.
    pub history: f64,
    /// Absolute Bregman weight of the dual step after dividing by `a_t`.
    pub dual_weight: f64,
}

impl Schedule {
    pub fn regularized(alpha: f64, blocks: usize) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(invalid!("learning rate must be positive and finite, got {alpha}"));
        }
        if blocks == 0 {
            return Err(invalid!("at least one block is required"));
        }
        Ok(Schedule { alpha, mode: ScheduleMode::Regularized, blocks })
    }

    fn log_growth(&self) -> f64 {
        libm::log1p(self.alpha)
    }

    /// `a_t`, with `a_0 = 0`.
    pub fn a(&self, t: u64) -> f64 {
        if t == 0 {
            0.0
        } else {
            libm::exp((t - 1) as f64 * self.log_growth())
        }
    }

    /// `A_t = a_1 + … + a_t`.
    pub fn a_sum(&self, t: u64) -> f64 {
        libm::expm1(t as f64 * self.log_growth()) / self.alpha
    }

    /// `beta_t = A_{t-1}/a_t`; zero at `t = 1`.
    pub fn beta(&self, t: u64) -> f64 {
        debug_assert!(t >= 1);
        -libm::expm1(-((t - 1) as f64) * self.log_growth()) / self.alpha
    }

    /// Weight of each older history term, `1/[16 alpha (1+alpha) (M−1)²]`, or 0 when `M = 1`.
    pub fn beta_bar(&self) -> f64 {
        if self.blocks > 1 {
            let m1 = (self.blocks - 1) as f64;
            1.0 / (16.0 * self.alpha * (1.0 + self.alpha) * m1 * m1)
        } else {
            0.0
        }
    }

    /// `a_{t-1}/a_t`.
    pub fn ratio(&self, t: u64) -> f64 {
        if t <= 1 {
            0.0
        } else {
            1.0 / (1.0 + self.alpha)
        }
    }

    /// `(a_t, A_{t-1}, beta_t)`.
    pub fn at(&self, t: u64) -> (f64, f64, f64) {
        (self.a(t), self.a_sum(t - 1), self.beta(t))
    }

    pub(crate) fn regularized_coefficients(&self, t: u64, mu: f64, nu: f64) -> StepCoefficients {
        let beta = self.beta(t);
        let beta_bar = self.beta_bar();
        StepCoefficients {
            a: self.a(t),
            a_sum_prev: self.a_sum(t - 1),
            ratio: self.ratio(t),
            anchor: (beta - (self.blocks as f64 - 1.0) * beta_bar) * mu,
            history: beta_bar * mu,
            dual_weight: beta * nu,
        }
    }
}

/// `schedule_at` in free-function form.
pub fn schedule_at(s: &Schedule, t: u64) -> Result<(f64, f64, f64)> {
    if t == 0 {
        return Err(invalid!("iterations are numbered from 1"));
    }
    Ok(s.at(t))
}

/// Sequence used in the convergence analysis: `a_1 = 1`, `a_2 = 4 alpha`,
/// then geometric growth by `1 + alpha`.
pub fn analysis_a(alpha: f64, t: u64) -> f64 {
    match t {
        0 => 0.0,
        1 => 1.0,
        _ => 4.0 * alpha * libm::pow(1.0 + alpha, (t - 2) as f64),
    }
}

/// `scale · min{b/n, mu/(L kappa_Q), (b/n) sqrt(mu nu/(n G²))}`.
pub fn default_alpha(problem: &ProblemSpec, b: usize, scale: f64) -> Result<f64> {
    let (mu, nu) = (problem.mu(), problem.nu());
    if !(mu > 0.0 && nu > 0.0) {
        return Err(invalid!("the default learning rate needs mu > 0 and nu > 0; use the unregularized schedule"));
    }
    if !(scale > 0.0) {
        return Err(invalid!("learning-rate scale must be positive, got {scale}"));
    }
    let n = problem.n() as f64;
    let ratio = b.min(problem.n()) as f64 / n;
    let loss = problem.loss();
    let g2 = loss.g * loss.g;
    let terms = [ratio, mu / (loss.l * problem.kappa_q()), ratio * libm::sqrt(mu * nu / (n * g2))];
    Ok(scale * terms.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Running state of the adaptive sequence used in unregularized mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnregularizedSchedule {
    pub a_prev: f64,
    pub a_sum_prev: f64,
    pub c_prev: f64,
    pub big_c_prev: f64,
}

/// Problem constants consumed by the unregularized schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConstants {
    pub n: usize,
    pub b: usize,
    pub mu: f64,
    pub nu: f64,
    /// `n · q_max`
    pub kappa_q: f64,
    pub l: f64,
    pub g: f64,
}

impl Default for UnregularizedSchedule {
    fn default() -> Self {
        UnregularizedSchedule { a_prev: 0.0, a_sum_prev: 0.0, c_prev: 0.0, big_c_prev: 0.0 }
    }
}

impl UnregularizedSchedule {
    /// Next `a_t`:
    /// `min{(C μ + μ₁)/(12e κ_Q L), (1 + b/n) a_{t-1}, (b/32n) sqrt((A ν + ν₁) min{C μ + μ₁, c μ + μ₂})/(sqrt(n) G)}`
    /// with the previous-iteration `A, C, c`. At `t = 1` the growth branch uses
    /// `a_0 = 1`, and the last branch is dropped while `A ν + ν₁ = 0`.
    pub fn next_a(&self, mu1: f64, mu2: f64, nu1: f64, k: &ScheduleConstants) -> f64 {
        let (n, b) = (k.n as f64, k.b as f64);
        let primal = self.big_c_prev * k.mu + mu1;
        let first = primal / (12.0 * core::f64::consts::E * k.kappa_q * k.l);
        let a_prev = if self.a_prev == 0.0 { 1.0 } else { self.a_prev };
        let second = (1.0 + b / n) * a_prev;
        let dual = self.a_sum_prev * k.nu + nu1;
        let mut a = first.min(second);
        if dual > 0.0 {
            // with a single block there are no older anchors
            let older = if k.n > k.b { self.c_prev * k.mu + mu2 } else { primal };
            let third = b / (32.0 * n) * libm::sqrt(dual * primal.min(older)) / (libm::sqrt(n) * k.g);
            a = a.min(third);
        }
        a
    }

    /// Coefficients for the step with `a_t = a`, then advances the sums.
    pub(crate) fn step(&mut self, a: f64, mu1: f64, mu2: f64, nu1: f64, k: &ScheduleConstants) -> StepCoefficients {
        let blocks = k.n / k.b;
        let coeffs = StepCoefficients {
            a,
            a_sum_prev: self.a_sum_prev,
            ratio: self.a_prev / a,
            anchor: (self.big_c_prev * k.mu + mu1) / a,
            history: if blocks > 1 { (self.c_prev * k.mu + mu2) / a } else { 0.0 },
            dual_weight: (k.nu * self.a_sum_prev + nu1) / a,
        };
        let a_sum = self.a_sum_prev + a;
        let c = if blocks > 1 {
            let m1 = (blocks - 1) as f64;
            a / (16.0 * (k.b as f64 / k.n as f64) * m1 * m1)
        } else {
            0.0
        };
        self.a_prev = a;
        self.a_sum_prev = a_sum;
        self.c_prev = c;
        self.big_c_prev = a_sum - (blocks as f64 - 1.0) * c;
        coeffs
    }
}
