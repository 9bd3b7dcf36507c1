//! Reference solver and comparison optimizers.
//!
//! - [`reference_solve`]: full-batch minimization of `w ↦ max_q L(w, q)`, by
//!   fixed-step gradient descent or L-BFGS.
//! - [`sgd_biased_run`]: minibatch SGD whose weights come from the oracle on
//!   the batch alone, so its gradient is biased for any batch smaller than `n`.
//! - [`lsvrg_run`]: epoch-anchored variance reduction for spectral sets.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dualprox::{DualOracle, UncertaintySpec};
use crate::error::{invalid, Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::model::{primal_value_and_gradient, ProblemSpec};
use crate::trace::{drive, Clock, RunOptions, Trace};

/// Default minibatch size for [`sgd_biased_run`].
pub const DEFAULT_SGD_BATCH: usize = 64;

/// Learning-rate grid searched by `auto`: `1e-4, 3e-4, …, 1, 3`.
pub const LEARNING_RATE_GRID: [f64; 10] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0, 3.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMethod {
    /// Step `1/(L + mu + n G²/nu)`.
    GradientDescent,
    #[default]
    Lbfgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptions {
    pub method: ReferenceMethod,
    /// Stop once the gradient norm is at most this.
    pub tol: f64,
    pub max_iters: u64,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions { method: ReferenceMethod::Lbfgs, tol: 1e-10, max_iters: 10_000_000, memory: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub w: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: u64,
}

/// Smoothness constant `L + mu + n G²/nu` of `w ↦ max_q L(w, q)`.
pub fn smoothness(problem: &ProblemSpec) -> Result<f64> {
    if !(problem.nu() > 0.0) {
        return Err(invalid!("the objective is nonsmooth when nu = 0"));
    }
    let loss = problem.loss();
    Ok(loss.l + problem.mu() + problem.n() as f64 * loss.g * loss.g / problem.nu())
}

pub fn reference_solve(problem: &ProblemSpec, opts: &ReferenceOptions) -> Result<ReferenceSolution> {
    if !(problem.nu() > 0.0) {
        return Err(invalid!("the reference solver needs nu > 0"));
    }
    match opts.method {
        ReferenceMethod::GradientDescent => gradient_descent(problem, opts),
        ReferenceMethod::Lbfgs => lbfgs(problem, opts),
    }
}

fn gradient_descent(problem: &ProblemSpec, opts: &ReferenceOptions) -> Result<ReferenceSolution> {
    let step = 1.0 / smoothness(problem)?;
    let mut w = vec![0.0; problem.p()];
    for it in 0..opts.max_iters {
        let eval = primal_value_and_gradient(problem, &w)?;
        let gn = norm(&eval.grad);
        if gn <= opts.tol {
            return Ok(ReferenceSolution { w, value: eval.value, grad_norm: gn, iterations: it });
        }
        axpy(-step, &eval.grad, &mut w);
    }
    Err(Error::Convergence(alloc::format!(
        "gradient descent did not reach gradient norm {:e} in {} steps",
        opts.tol, opts.max_iters
    )))
}

fn lbfgs(problem: &ProblemSpec, opts: &ReferenceOptions) -> Result<ReferenceSolution> {
    let p = problem.p();
    let mut w = vec![0.0; p];
    let mut eval = primal_value_and_gradient(problem, &w)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stalls = 0;
    for it in 0..opts.max_iters {
        let gn = norm(&eval.grad);
        if gn <= opts.tol {
            return Ok(ReferenceSolution { w, value: eval.value, grad_norm: gn, iterations: it });
        }
        // two-loop recursion
        let mut d: Vec<f64> = eval.grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            axpy(-a, y, &mut d);
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / gn.max(1.0),
        };
        crate::linalg::scale(gamma, &mut d);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            axpy(a - b, s, &mut d);
        }
        let mut slope = dot(&eval.grad, &d);
        if !(slope < 0.0) {
            history.clear();
            d = eval.grad.iter().map(|g| -g / gn.max(1.0)).collect();
            slope = dot(&eval.grad, &d);
        }
        // Armijo backtracking
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = w.clone();
            axpy(step, &d, &mut trial);
            let next = primal_value_and_gradient(problem, &trial)?;
            let armijo = next.value < eval.value + 1e-4 * step * slope;
            // near the optimum values stop changing in floating point; a
            // smaller gradient at an equal value is still progress
            let flat = next.value <= eval.value && norm(&next.grad) < gn;
            if armijo || flat {
                accepted = Some((trial, next));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, next)) => {
                stalls = 0;
                let s: Vec<f64> = trial.iter().zip(&w).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = next.grad.iter().zip(&eval.grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-300 {
                    history.push_back((s, y, 1.0 / sy));
                    if history.len() > opts.memory {
                        history.pop_front();
                    }
                }
                w = trial;
                eval = next;
            }
            None => {
                // no decrease representable at this precision
                stalls += 1;
                history.clear();
                if stalls >= 2 {
                    return Ok(ReferenceSolution { w, value: eval.value, grad_norm: gn, iterations: it });
                }
            }
        }
    }
    Err(Error::Convergence(alloc::format!(
        "L-BFGS did not reach gradient norm {:e} in {} iterations (value {}, gradient norm {:e})",
        opts.tol,
        opts.max_iters,
        eval.value,
        norm(&eval.grad)
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRate {
    Fixed(f64),
    /// Chosen from [`LEARNING_RATE_GRID`] by [`tune_learning_rate`].
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    FullBatchGd,
    BiasedSgd { batch: usize },
    Lsvrg { epoch_len: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub learning_rate: LearningRate,
    pub seed: u64,
}

fn fixed_rate(cfg: &BaselineConfig) -> Result<f64> {
    match cfg.learning_rate {
        LearningRate::Fixed(lr) if lr > 0.0 && lr.is_finite() => Ok(lr),
        LearningRate::Fixed(lr) => Err(invalid!("learning rate must be positive and finite, got {lr}")),
        LearningRate::Auto => Err(invalid!("resolve `auto` with tune_learning_rate before running")),
    }
}

/// Minibatch SGD on batch-local weights. Each step costs `|B|` queries.
pub struct BiasedSgd<'a> {
    problem: &'a ProblemSpec,
    batch: usize,
    lr: f64,
    local: DualOracle,
    rng: ChaCha8Rng,
    pub w: Vec<f64>,
    pub queries: u64,
}

impl<'a> BiasedSgd<'a> {
    pub fn new(problem: &'a ProblemSpec, batch: usize, lr: f64, seed: u64) -> Result<Self> {
        let n = problem.n();
        if batch == 0 || batch > n {
            return Err(invalid!("batch size must lie in 1..={n}, got {batch}"));
        }
        let spec = problem.uncertainty();
        let local_spec = UncertaintySpec::new(spec.set.batch_local(batch, n)?, spec.penalty)?;
        Ok(BiasedSgd {
            problem,
            batch,
            lr,
            local: DualOracle::new(&local_spec, batch)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            w: vec![0.0; problem.p()],
            queries: 0,
        })
    }

    pub fn step(&mut self) -> Result<()> {
        let n = self.problem.n();
        let mut idx = rand::seq::index::sample(&mut self.rng, n, self.batch).into_vec();
        idx.sort_unstable();
        let losses: Vec<f64> = idx.iter().map(|&i| self.problem.loss_at(i, &self.w)).collect();
        let q = self.local.max(&losses, self.problem.nu())?;
        let mut grad: Vec<f64> = self.w.iter().map(|x| self.problem.mu() * x).collect();
        for (&i, &qi) in idx.iter().zip(&q) {
            if qi != 0.0 {
                self.problem.add_scaled_grad(i, &self.w, qi, &mut grad);
            }
        }
        axpy(-self.lr, &grad, &mut self.w);
        self.queries += self.batch as u64;
        Ok(())
    }
}

pub fn sgd_biased_run<C: Clock>(problem: &ProblemSpec, cfg: &BaselineConfig, opts: &RunOptions, clock: &C) -> Result<Trace> {
    let batch = match cfg.kind {
        BaselineKind::BiasedSgd { batch } => batch,
        BaselineKind::FullBatchGd => problem.n(),
        BaselineKind::Lsvrg { .. } => return Err(invalid!("sgd_biased_run called with an LSVRG config")),
    };
    let lr = fixed_rate(cfg)?;
    let sgd = core::cell::RefCell::new(BiasedSgd::new(problem, batch, lr, cfg.seed)?);
    let name = if matches!(cfg.kind, BaselineKind::FullBatchGd) { "gd" } else { "sgd" };
    drive(name, problem, opts, clock, 0, || sgd.borrow().w.clone(), || {
        let mut s = sgd.borrow_mut();
        s.step()?;
        Ok(s.queries)
    })
}

/// Loopless-epoch SVRG with dual weights frozen at the anchor.
pub struct Lsvrg<'a> {
    problem: &'a ProblemSpec,
    epoch_len: usize,
    lr: f64,
    rng: ChaCha8Rng,
    pub w: Vec<f64>,
    anchor_grads: Vec<f64>,
    anchor_w: Vec<f64>,
    anchor_q: Vec<f64>,
    anchor_full: Vec<f64>,
    steps: u64,
    pub queries: u64,
}

impl<'a> Lsvrg<'a> {
    pub fn new(problem: &'a ProblemSpec, epoch_len: Option<usize>, lr: f64, seed: u64) -> Result<Self> {
        if !problem.uncertainty().set.is_permutahedron() {
            return Err(Error::Unsupported("LSVRG supports only spectral and CVaR sets".into()));
        }
        let n = problem.n();
        let p = problem.p();
        let epoch_len = epoch_len.unwrap_or(n);
        if epoch_len == 0 {
            return Err(invalid!("epoch length must be at least 1"));
        }
        let mut s = Lsvrg {
            problem,
            epoch_len,
            lr,
            rng: ChaCha8Rng::seed_from_u64(seed),
            w: vec![0.0; p],
            anchor_grads: vec![0.0; n * p],
            anchor_w: vec![0.0; p],
            anchor_q: vec![0.0; n],
            anchor_full: vec![0.0; p],
            steps: 0,
            queries: 0,
        };
        s.refresh()?;
        Ok(s)
    }

    /// Re-anchors at the current iterate; `n` queries.
    pub fn refresh(&mut self) -> Result<()> {
        let (n, p) = (self.problem.n(), self.problem.p());
        let mut losses = vec![0.0; n];
        for i in 0..n {
            losses[i] = self.problem.loss_grad_into(i, &self.w, &mut self.anchor_grads[i * p..(i + 1) * p]);
        }
        self.anchor_q = self.problem.oracle().max(&losses, self.problem.nu())?;
        self.anchor_full.fill(0.0);
        for i in 0..n {
            axpy(self.anchor_q[i], &self.anchor_grads[i * p..(i + 1) * p], &mut self.anchor_full);
        }
        self.anchor_w.copy_from_slice(&self.w);
        self.queries += n as u64;
        Ok(())
    }

    /// `n q̄_i (∇l_i(w) − ∇l_i(w̄)) + Σ_j q̄_j ∇l_j(w̄) + mu w`; one query.
    pub fn estimate(&self, i: usize) -> Vec<f64> {
        let p = self.problem.p();
        let n = self.problem.n() as f64;
        let mut g = self.anchor_full.clone();
        axpy(self.problem.mu(), &self.w, &mut g);
        let c = n * self.anchor_q[i];
        if c != 0.0 {
            self.problem.add_scaled_grad(i, &self.w, c, &mut g);
            axpy(-c, &self.anchor_grads[i * p..(i + 1) * p], &mut g);
        }
        g
    }

    pub fn step(&mut self) -> Result<()> {
        let i = self.rng.random_range(0..self.problem.n());
        let g = self.estimate(i);
        self.queries += 1;
        axpy(-self.lr, &g, &mut self.w);
        self.steps += 1;
        if self.steps % self.epoch_len as u64 == 0 {
            self.refresh()?;
        }
        Ok(())
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor_w
    }
}

pub fn lsvrg_run<C: Clock>(problem: &ProblemSpec, cfg: &BaselineConfig, opts: &RunOptions, clock: &C) -> Result<Trace> {
    let BaselineKind::Lsvrg { epoch_len } = cfg.kind else {
        return Err(invalid!("lsvrg_run called with a non-LSVRG config"));
    };
    let lr = fixed_rate(cfg)?;
    let s = core::cell::RefCell::new(Lsvrg::new(problem, epoch_len, lr, cfg.seed)?);
    let initial = s.borrow().queries;
    drive("lsvrg", problem, opts, clock, initial, || s.borrow().w.clone(), || {
        let mut s = s.borrow_mut();
        s.step()?;
        Ok(s.queries)
    })
}

/// Runs a baseline with a fixed learning rate.
pub fn run_baseline<C: Clock>(problem: &ProblemSpec, cfg: &BaselineConfig, opts: &RunOptions, clock: &C) -> Result<Trace> {
    match cfg.kind {
        BaselineKind::Lsvrg { .. } => lsvrg_run(problem, cfg, opts, clock),
        _ => sgd_biased_run(problem, cfg, opts, clock),
    }
}

/// Iterations per pass over the data for a baseline.
pub fn pass_length(problem: &ProblemSpec, kind: &BaselineKind) -> u64 {
    let n = problem.n();
    match kind {
        BaselineKind::FullBatchGd => 1,
        BaselineKind::BiasedSgd { batch } => n.div_ceil((*batch).max(1)) as u64,
        BaselineKind::Lsvrg { .. } => n as u64,
    }
}

/// Picks the grid learning rate with the lowest mean objective over the last
/// ten of `passes` passes, averaged over `seeds`. Rates that diverge are
/// skipped.
pub fn tune_learning_rate(problem: &ProblemSpec, kind: &BaselineKind, seeds: &[u64], passes: u64) -> Result<f64> {
    if seeds.is_empty() {
        return Err(invalid!("tuning needs at least one seed"));
    }
    let pass = pass_length(problem, kind);
    let passes = passes.max(10);
    let mut best: Option<(f64, f64)> = None;
    'grid: for &lr in LEARNING_RATE_GRID.iter() {
        let mut total = 0.0;
        for &seed in seeds {
            let cfg = BaselineConfig { kind: *kind, learning_rate: LearningRate::Fixed(lr), seed };
            let opts = RunOptions::new(passes * pass, pass);
            let trace = match run_baseline(problem, &cfg, &opts, &crate::trace::NoClock) {
                Ok(t) => t,
                Err(Error::Divergence(_)) | Err(Error::InvalidInput(_)) => continue 'grid,
                Err(e) => return Err(e),
            };
            let tail: Vec<f64> = trace.rows.iter().rev().take(10).map(|r| r.objective).collect();
            total += tail.iter().sum::<f64>() / tail.len() as f64;
        }
        let score = total / seeds.len() as f64;
        if score.is_finite() && best.is_none_or(|(_, s)| score < s) {
            best = Some((lr, score));
        }
    }
    best.map(|(lr, _)| lr)
        .ok_or_else(|| Error::Divergence("every learning rate in the grid diverged".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualprox::Penalty;
    use crate::model::{DatasetMatrix, LossKind};

    fn problem(theta: f64) -> ProblemSpec {
        let x: Vec<f64> = (0..12).map(|k| libm::sin(k as f64 * 0.7) + 0.2).collect();
        let y: Vec<f64> = (0..6).map(|k| libm::cos(k as f64 * 1.9)).collect();
        let data = DatasetMatrix::regression(x, 6, 2, y).unwrap();
        ProblemSpec::new(data, LossKind::SquaredError, UncertaintySpec::cvar(theta, Penalty::Chi2Half).unwrap(), 1.0, 1.0)
            .unwrap()
    }

    #[test]
    fn lbfgs_and_gd_agree() {
        let p = problem(0.5);
        let a = reference_solve(&p, &ReferenceOptions::default()).unwrap();
        let gd = ReferenceOptions { method: ReferenceMethod::GradientDescent, ..Default::default() };
        let b = reference_solve(&p, &gd).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
        assert!(crate::linalg::dist_inf(&a.w, &b.w) < 1e-9);
    }

    #[test]
    fn full_batch_sgd_is_gradient_descent() {
        let p = problem(0.5);
        let lr = 1.0 / smoothness(&p).unwrap();
        let mut sgd = BiasedSgd::new(&p, 6, lr, 4).unwrap();
        let mut w = vec![0.0; 2];
        for _ in 0..20 {
            sgd.step().unwrap();
            let eval = primal_value_and_gradient(&p, &w).unwrap();
            axpy(-lr, &eval.grad, &mut w);
            assert_eq!(w, sgd.w);
        }
    }

    #[test]
    fn lsvrg_refresh_costs_n() {
        let p = problem(0.5);
        let mut s = Lsvrg::new(&p, None, 0.01, 1).unwrap();
        assert_eq!(s.queries, 6);
        for _ in 0..5 {
            s.step().unwrap();
        }
        assert_eq!(s.queries, 11);
        s.step().unwrap();
        assert_eq!(s.queries, 18);
    }

    #[test]
    fn lsvrg_at_anchor_uses_full_gradient() {
        let p = problem(0.5);
        let s = Lsvrg::new(&p, None, 0.01, 1).unwrap();
        let eval = primal_value_and_gradient(&p, &s.w).unwrap();
        for i in 0..6 {
            assert!(crate::linalg::dist_inf(&s.estimate(i), &eval.grad) < 1e-14);
        }
    }

    #[test]
    fn lsvrg_rejects_ball() {
        let x = vec![1.0, 2.0];
        let data = DatasetMatrix::regression(x, 2, 1, vec![1.0, 0.0]).unwrap();
        let spec = UncertaintySpec::new(crate::dualprox::UncertaintySet::Chi2Ball { rho: 0.1 }, Penalty::Chi2Half).unwrap();
        let p = ProblemSpec::new(data, LossKind::SquaredError, spec, 1.0, 1.0).unwrap();
        assert!(matches!(Lsvrg::new(&p, None, 0.1, 0), Err(Error::Unsupported(_))));
    }
}
