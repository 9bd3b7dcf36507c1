//! Block-cyclic variance-reduced primal-dual solver.
//!
//! Each iteration samples two blocks `I` and `J` of size `b` uniformly,
//! refreshes a third block `K = t mod M` deterministically, and spends
//! exactly `3b` oracle queries (`4b` in compact memory mode, which recomputes
//! stale table gradients from stored iterates instead of keeping an `n × p`
//! table).

pub mod schedule;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{axpy, dist_inf, norm};
use crate::model::ProblemSpec;
use crate::trace::{drive, Clock, RunOptions, Trace};

pub use schedule::{
    analysis_a, default_alpha, schedule_at, Schedule, ScheduleConstants, ScheduleMode, StepCoefficients,
    UnregularizedSchedule,
};

/// Version tag written into checkpoints.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// Keep both gradient tables, `2np` floats.
    #[default]
    Full,
    /// Keep only the block anchor iterates and recompute table gradients.
    Compact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragoConfig {
    /// Block size; rounded down to a divisor of `n`.
    pub batch: usize,
    /// Learning rate. `None` selects [`default_alpha`] times `alpha_scale`.
    pub alpha: Option<f64>,
    pub alpha_scale: f64,
    pub mode: ScheduleMode,
    pub memory: MemoryMode,
    pub seed: u64,
}

impl DragoConfig {
    pub fn new(batch: usize, seed: u64) -> Self {
        DragoConfig {
            batch,
            alpha: None,
            alpha_scale: 1.0,
            mode: ScheduleMode::Regularized,
            memory: MemoryMode::Full,
            seed,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }
}

/// Largest divisor of `n` that does not exceed `b` (at least 1).
pub fn effective_batch(n: usize, b: usize) -> usize {
    let b = b.clamp(1, n.max(1));
    (1..=b).rev().find(|k| n % k == 0).unwrap_or(1)
}

/// Complete solver state between iterations.
///
/// Tables follow the lags of the estimators: at the start of iteration `t`,
/// `grad_table`/`weight_table` hold the `t−1` tables and the `_prev` copies the
/// `t−2` tables; `loss_table` holds the `t−1` losses and is advanced to `t`
/// between the primal and dual steps, with `loss_table_prev` one step behind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragoState {
    /// Completed iterations.
    pub t: u64,
    pub w: Vec<f64>,
    pub q: Vec<f64>,
    pub loss_table: Vec<f64>,
    pub loss_table_prev: Vec<f64>,
    /// Row-major `n × p`; empty in compact mode.
    pub grad_table: Vec<f64>,
    pub grad_table_prev: Vec<f64>,
    pub weight_table: Vec<f64>,
    pub weight_table_prev: Vec<f64>,
    /// `grad_tableᵀ weight_table`
    pub g_agg: Vec<f64>,
    /// Block anchors `ŵ_K`, row-major `M × p`: the iterate at which block `K`
    /// was last refreshed.
    pub w_ring: Vec<f64>,
    pub w_agg: Vec<f64>,
    /// Compact mode: anchor replaced by the last ring write.
    pub prev_anchor: Vec<f64>,
    /// Compact mode: per-block contributions to `g_agg`, `M × p`.
    pub block_sums: Vec<f64>,
    pub unregularized: UnregularizedSchedule,
    pub rng: ChaCha8Rng,
    /// Optimizer oracle queries including initialization.
    pub queries: u64,
    /// Times the aggregate drifted past tolerance and was recomputed.
    pub resyncs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: DragoConfig,
    pub batch: usize,
    pub alpha: f64,
    pub state: DragoState,
}

/// Float counts held by the solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageReport {
    /// Loss, weight and gradient tables plus the gradient aggregate.
    pub tables: usize,
    /// Stored primal iterates and per-block aggregates, `O(Mp)`.
    pub history: usize,
    /// Per-iteration buffers, `O(bp)`.
    pub scratch: usize,
}

struct Pending {
    coeffs: StepCoefficients,
    /// Gradients of block `K` at the new iterate, `b × p`.
    new_grads: Vec<f64>,
}

pub struct Drago<'a> {
    problem: &'a ProblemSpec,
    config: DragoConfig,
    b: usize,
    blocks: usize,
    schedule: Schedule,
    constants: ScheduleConstants,
    state: DragoState,
    pending: Option<Pending>,
}

impl<'a> Drago<'a> {
    pub fn new(problem: &'a ProblemSpec, config: DragoConfig) -> Result<Self> {
        let (b, blocks, alpha) = Self::validate(problem, &config)?;
        let n = problem.n();
        let p = problem.p();
        let compact = config.memory == MemoryMode::Compact;

        let w = vec![0.0; p];
        let q = vec![1.0 / n as f64; n];
        let mut losses = vec![0.0; n];
        let mut grads = vec![0.0; n * p];
        for i in 0..n {
            losses[i] = problem.loss_grad_into(i, &w, &mut grads[i * p..(i + 1) * p]);
        }
        let mut g_agg = vec![0.0; p];
        let mut block_sums = Vec::new();
        if compact {
            block_sums = vec![0.0; blocks * p];
        }
        for i in 0..n {
            let row = &grads[i * p..(i + 1) * p];
            axpy(q[i], row, &mut g_agg);
            if compact {
                let k = i / b;
                axpy(q[i], row, &mut block_sums[k * p..(k + 1) * p]);
            }
        }
        let (grad_table, grad_table_prev) = if compact { (Vec::new(), Vec::new()) } else { (grads.clone(), grads) };
        let state = DragoState {
            t: 0,
            w: w.clone(),
            q: q.clone(),
            loss_table: losses.clone(),
            loss_table_prev: losses,
            grad_table,
            grad_table_prev,
            weight_table: q.clone(),
            weight_table_prev: q,
            g_agg,
            w_ring: vec![0.0; blocks * p],
            w_agg: vec![0.0; p],
            prev_anchor: if compact { w } else { Vec::new() },
            block_sums,
            unregularized: UnregularizedSchedule::default(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            queries: n as u64,
            resyncs: 0,
        };
        Ok(Self::assemble(problem, config, b, blocks, alpha, state))
    }

    fn validate(problem: &ProblemSpec, config: &DragoConfig) -> Result<(usize, usize, f64)> {
        let n = problem.n();
        if config.batch == 0 {
            return Err(invalid!("batch size must be at least 1"));
        }
        let b = effective_batch(n, config.batch);
        let blocks = n / b;
        let alpha = match config.mode {
            ScheduleMode::Regularized => {
                if !(problem.mu() > 0.0) {
                    return Err(invalid!("regularized mode needs mu > 0; use the unregularized schedule"));
                }
                match config.alpha {
                    Some(a) => a,
                    None => default_alpha(problem, b, config.alpha_scale)?,
                }
            }
            ScheduleMode::Unregularized { mu1, mu2, nu1 } => {
                for (name, v) in [("mu1", mu1), ("mu2", mu2), ("nu1", nu1)] {
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(invalid!("{name} must be finite and nonnegative, got {v}"));
                    }
                }
                if problem.mu() == 0.0 && mu1 == 0.0 {
                    return Err(invalid!("the primal step is undefined when mu and mu1 are both zero"));
                }
                if problem.mu() == 0.0 && blocks > 1 && mu2 == 0.0 {
                    return Err(invalid!("mu2 must be positive when mu = 0 and there is more than one block"));
                }
                b as f64 / n as f64
            }
        };
        Schedule::regularized(alpha, blocks)?;
        Ok((b, blocks, alpha))
    }

    fn assemble(
        problem: &'a ProblemSpec,
        config: DragoConfig,
        b: usize,
        blocks: usize,
        alpha: f64,
        state: DragoState,
    ) -> Self {
        let loss = problem.loss();
        let constants = ScheduleConstants {
            n: problem.n(),
            b,
            mu: problem.mu(),
            nu: problem.nu(),
            kappa_q: problem.kappa_q(),
            l: loss.l,
            g: loss.g,
        };
        let schedule = Schedule { alpha, mode: config.mode, blocks };
        Drago { problem, config, b, blocks, schedule, constants, state, pending: None }
    }

    /// Restores a solver from a checkpoint taken on the same problem.
    pub fn from_checkpoint(problem: &'a ProblemSpec, ckpt: Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(invalid!("unsupported checkpoint version {}", ckpt.version));
        }
        let (b, blocks, _) = Self::validate(problem, &ckpt.config)?;
        let (n, p) = (problem.n(), problem.p());
        let s = &ckpt.state;
        let table_len = if ckpt.config.memory == MemoryMode::Full { n * p } else { 0 };
        if b != ckpt.batch
            || s.w.len() != p
            || s.q.len() != n
            || s.loss_table.len() != n
            || s.grad_table.len() != table_len
            || s.w_ring.len() != blocks * p
        {
            return Err(invalid!("checkpoint does not match the problem dimensions"));
        }
        Ok(Self::assemble(problem, ckpt.config, b, blocks, ckpt.alpha, ckpt.state))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            batch: self.b,
            alpha: self.schedule.alpha,
            state: self.state.clone(),
        }
    }

    pub fn state(&self) -> &DragoState {
        &self.state
    }
    pub fn batch(&self) -> usize {
        self.b
    }
    pub fn blocks(&self) -> usize {
        self.blocks
    }
    pub fn alpha(&self) -> f64 {
        self.schedule.alpha
    }
    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    pub fn config(&self) -> &DragoConfig {
        &self.config
    }

    pub fn block_range(&self, k: usize) -> Range<usize> {
        k * self.b..(k + 1) * self.b
    }

    /// Block refreshed at iteration `t`.
    pub fn refresh_block(&self, t: u64) -> usize {
        (t % self.blocks as u64) as usize
    }

    /// Coefficients of the next iteration without advancing any state.
    pub fn next_coefficients(&self) -> StepCoefficients {
        let t = self.state.t + 1;
        match self.config.mode {
            ScheduleMode::Regularized => self.schedule.regularized_coefficients(t, self.problem.mu(), self.problem.nu()),
            ScheduleMode::Unregularized { mu1, mu2, nu1 } => {
                let mut s = self.state.unregularized;
                let a = s.next_a(mu1, mu2, nu1, &self.constants);
                s.step(a, mu1, mu2, nu1, &self.constants)
            }
        }
    }

    /// Anchor iterate of the lagged gradient table on block `k` (compact mode).
    fn prev_table_anchor(&self, k: usize) -> &[f64] {
        let p = self.problem.p();
        let last = self.refresh_block(self.state.t);
        if self.state.t >= 1 && k == last {
            &self.state.prev_anchor
        } else {
            &self.state.w_ring[k * p..(k + 1) * p]
        }
    }

    /// Primal estimate for the next iteration from block `i_block`:
    /// `g_agg + (a_{t-1}/a_t) M Σ_{i∈I} (q_i ∇l_i(w) − q̂₂_i ĝ₂_i)`.
    /// Issues `b` queries (`2b` in compact mode).
    pub fn primal_gradient_estimate(&self, i_block: usize) -> Vec<f64> {
        let coeffs = self.next_coefficients();
        self.primal_estimate_with(i_block, coeffs.ratio)
    }

    fn primal_estimate_with(&self, i_block: usize, ratio: f64) -> Vec<f64> {
        let p = self.problem.p();
        let s = &self.state;
        let mut v = s.g_agg.clone();
        if ratio == 0.0 {
            return v;
        }
        let scale = ratio * self.blocks as f64;
        let anchor = match self.config.memory {
            MemoryMode::Compact => Some(self.prev_table_anchor(i_block).to_vec()),
            MemoryMode::Full => None,
        };
        for i in self.block_range(i_block) {
            self.problem.add_scaled_grad(i, &s.w, scale * s.q[i], &mut v);
            let c = -scale * s.weight_table_prev[i];
            match &anchor {
                Some(a) => {
                    self.problem.add_scaled_grad(i, a, c, &mut v);
                }
                None => axpy(c, &s.grad_table_prev[i * p..(i + 1) * p], &mut v),
            }
        }
        v
    }

    /// Exact minimizer of the primal proximal subproblem.
    pub fn primal_step(&self, v_p: &[f64], coeffs: &StepCoefficients) -> Vec<f64> {
        let s = &self.state;
        let p = self.problem.p();
        let last = self.refresh_block(s.t);
        let w_last = &s.w_ring[last * p..(last + 1) * p];
        let others = (self.blocks - 1) as f64;
        let denom = self.problem.mu() + coeffs.anchor + others * coeffs.history;
        (0..p)
            .map(|k| {
                let older = s.w_agg[k] - w_last[k];
                (coeffs.anchor * s.w[k] + coeffs.history * older - v_p[k]) / denom
            })
            .collect()
    }

    /// First half of an iteration: primal estimate and step, then the loss
    /// table refresh of block `K_t`.
    pub fn primal_phase(&mut self, i_block: usize) -> Result<()> {
        if self.pending.is_some() {
            return Err(invalid!("primal phase called twice without a dual phase"));
        }
        if i_block >= self.blocks {
            return Err(invalid!("block {i_block} out of range"));
        }
        let t = self.state.t + 1;
        let coeffs = match self.config.mode {
            ScheduleMode::Regularized => self.schedule.regularized_coefficients(t, self.problem.mu(), self.problem.nu()),
            ScheduleMode::Unregularized { mu1, mu2, nu1 } => {
                let a = self.state.unregularized.next_a(mu1, mu2, nu1, &self.constants);
                if !(a > 0.0) || !a.is_finite() {
                    return Err(Error::Convergence(alloc::format!("averaging weight {a} is not positive")));
                }
                self.state.unregularized.step(a, mu1, mu2, nu1, &self.constants)
            }
        };
        let v_p = self.primal_estimate_with(i_block, coeffs.ratio);
        self.state.queries += self.b as u64;
        if self.config.memory == MemoryMode::Compact && coeffs.ratio != 0.0 {
            self.state.queries += self.b as u64;
        }
        let w_new = self.primal_step(&v_p, &coeffs);
        if !crate::linalg::all_finite(&w_new) {
            return Err(Error::Divergence(alloc::format!("non-finite primal iterate at iteration {t}")));
        }

        let p = self.problem.p();
        let k = self.refresh_block(t);
        let s = &mut self.state;
        let slot = &mut s.w_ring[k * p..(k + 1) * p];
        if self.config.memory == MemoryMode::Compact {
            s.prev_anchor.copy_from_slice(slot);
        }
        for j in 0..p {
            s.w_agg[j] += w_new[j] - slot[j];
        }
        slot.copy_from_slice(&w_new);
        s.w = w_new;

        let range = self.block_range(k);
        let mut new_grads = vec![0.0; self.b * p];
        let last_range = self.block_range(self.refresh_block(t - 1));
        let s = &mut self.state;
        for i in last_range {
            s.loss_table_prev[i] = s.loss_table[i];
        }
        for (r, i) in range.enumerate() {
            s.loss_table[i] = self.problem.loss_grad_into(i, &s.w, &mut new_grads[r * p..(r + 1) * p]);
        }
        s.queries += self.b as u64;
        self.pending = Some(Pending { coeffs, new_grads });
        Ok(())
    }

    /// Dual estimate `l̂_t + (a_{t-1}/a_t) M Σ_{j∈J} (l_j(w_t) − l̂_{t-1,j}) e_j`.
    /// Valid between the two phases; issues `b` queries.
    pub fn dual_gradient_estimate(&self, j_block: usize) -> Result<Vec<f64>> {
        let pending = self.pending.as_ref().ok_or_else(|| invalid!("dual estimate requested outside an iteration"))?;
        Ok(self.dual_estimate_with(j_block, pending.coeffs.ratio))
    }

    fn dual_estimate_with(&self, j_block: usize, ratio: f64) -> Vec<f64> {
        let s = &self.state;
        let mut v = s.loss_table.clone();
        let scale = ratio * self.blocks as f64;
        for j in self.block_range(j_block) {
            let l = self.problem.loss_at(j, &s.w);
            v[j] += scale * (l - s.loss_table_prev[j]);
        }
        v
    }

    /// Second half of an iteration: dual estimate and proximal step, then the
    /// gradient and weight table rotation.
    pub fn dual_phase(&mut self, j_block: usize) -> Result<()> {
        if j_block >= self.blocks {
            return Err(invalid!("block {j_block} out of range"));
        }
        let pending = self.pending.take().ok_or_else(|| invalid!("dual phase called before the primal phase"))?;
        let v_d = self.dual_estimate_with(j_block, pending.coeffs.ratio);
        self.state.queries += self.b as u64;
        let q_new = self
            .problem
            .oracle()
            .prox_weighted(&self.state.q, &v_d, pending.coeffs.dual_weight, self.problem.nu())?;
        self.state.q = q_new;
        self.commit(&pending.new_grads);
        self.state.t += 1;
        if self.state.t % self.blocks as u64 == 0 {
            self.check_aggregates();
        }
        Ok(())
    }

    fn commit(&mut self, new_grads: &[f64]) {
        let p = self.problem.p();
        let t = self.state.t + 1;
        let last = self.refresh_block(t - 1);
        let k = self.refresh_block(t);
        let last_range = self.block_range(last);
        let range = self.block_range(k);
        let s = &mut self.state;
        for i in last_range.clone() {
            s.weight_table_prev[i] = s.weight_table[i];
        }
        match self.config.memory {
            MemoryMode::Full => {
                s.grad_table_prev[last_range.start * p..last_range.end * p]
                    .copy_from_slice(&s.grad_table[last_range.start * p..last_range.end * p]);
                for (r, i) in range.enumerate() {
                    let new_row = &new_grads[r * p..(r + 1) * p];
                    let old_row = &s.grad_table[i * p..(i + 1) * p];
                    for j in 0..p {
                        s.g_agg[j] += s.q[i] * new_row[j] - s.weight_table[i] * old_row[j];
                    }
                    s.grad_table[i * p..(i + 1) * p].copy_from_slice(new_row);
                    s.weight_table[i] = s.q[i];
                }
            }
            MemoryMode::Compact => {
                let mut sum = vec![0.0; p];
                for (r, i) in range.enumerate() {
                    axpy(s.q[i], &new_grads[r * p..(r + 1) * p], &mut sum);
                    s.weight_table[i] = s.q[i];
                }
                let old = &mut s.block_sums[k * p..(k + 1) * p];
                for j in 0..p {
                    s.g_agg[j] += sum[j] - old[j];
                }
                old.copy_from_slice(&sum);
            }
        }
    }

    /// Recomputes the aggregates from their definitions and replaces them when
    /// they drifted by more than `1e-6` relative. Returns the drift of `g_agg`.
    pub fn check_aggregates(&mut self) -> f64 {
        let p = self.problem.p();
        let n = self.problem.n();
        let mut exact = vec![0.0; p];
        match self.config.memory {
            MemoryMode::Full => {
                for i in 0..n {
                    axpy(self.state.weight_table[i], &self.state.grad_table[i * p..(i + 1) * p], &mut exact);
                }
            }
            MemoryMode::Compact => {
                for k in 0..self.blocks {
                    axpy(1.0, &self.state.block_sums[k * p..(k + 1) * p], &mut exact);
                }
            }
        }
        let drift = dist_inf(&exact, &self.state.g_agg);
        if drift > 1e-6 * (1.0 + norm(&exact)) {
            self.state.resyncs += 1;
        }
        self.state.g_agg = exact;
        let mut w_agg = vec![0.0; p];
        for k in 0..self.blocks {
            axpy(1.0, &self.state.w_ring[k * p..(k + 1) * p], &mut w_agg);
        }
        self.state.w_agg = w_agg;
        drift
    }

    /// One full iteration with the given blocks.
    pub fn iterate_with_blocks(&mut self, i_block: usize, j_block: usize) -> Result<()> {
        self.primal_phase(i_block)?;
        self.dual_phase(j_block)
    }

    /// One full iteration with blocks drawn from the internal generator.
    pub fn iterate(&mut self) -> Result<()> {
        let i_block = self.state.rng.random_range(0..self.blocks);
        let j_block = self.state.rng.random_range(0..self.blocks);
        self.iterate_with_blocks(i_block, j_block)
    }

    /// Runs up to `opts.max_iters` iterations, recording a trace row every
    /// `opts.eval_every` iterations.
    pub fn run<C: Clock>(&mut self, opts: &RunOptions, clock: &C) -> Result<Trace> {
        let problem = self.problem;
        let initial_queries = self.state.queries;
        let this = core::cell::RefCell::new(self);
        drive(
            "drago",
            problem,
            opts,
            clock,
            initial_queries,
            || this.borrow().state.w.clone(),
            || {
                let mut s = this.borrow_mut();
                s.iterate()?;
                Ok(s.state.queries)
            },
        )
    }

    pub fn storage(&self) -> StorageReport {
        let s = &self.state;
        StorageReport {
            tables: s.loss_table.len()
                + s.loss_table_prev.len()
                + s.weight_table.len()
                + s.weight_table_prev.len()
                + s.grad_table.len()
                + s.grad_table_prev.len()
                + s.g_agg.len()
                + s.prev_anchor.len(),
            history: s.w_ring.len() + s.w_agg.len() + s.block_sums.len(),
            scratch: self.b * self.problem.p() + self.problem.n() + self.problem.p(),
        }
    }
}

/// Picks α from the baseline learning-rate grid, capped at `b/n`, by the
/// lowest mean objective over the last ten of `passes` passes (one pass is `M`
/// iterations), averaged over `seeds`. Diverging values are skipped.
pub fn tune_alpha(problem: &ProblemSpec, config: &DragoConfig, seeds: &[u64], passes: u64) -> Result<f64> {
    if seeds.is_empty() {
        return Err(invalid!("tuning needs at least one seed"));
    }
    if config.batch == 0 {
        return Err(invalid!("batch size must be at least 1"));
    }
    let n = problem.n();
    let b = effective_batch(n, config.batch);
    let cap = b as f64 / n as f64;
    let pass = (n / b) as u64;
    let passes = passes.max(10);
    let mut best: Option<(f64, f64)> = None;
    'grid: for &alpha in crate::baselines::LEARNING_RATE_GRID.iter().filter(|&&a| a <= cap) {
        let mut total = 0.0;
        for &seed in seeds {
            let cfg = DragoConfig { alpha: Some(alpha), seed, ..config.clone() };
            let mut solver = Drago::new(problem, cfg)?;
            let trace = match solver.run(&RunOptions::new(passes * pass, pass), &crate::trace::NoClock) {
                Ok(t) => t,
                Err(Error::Divergence(_)) => continue 'grid,
                Err(e) => return Err(e),
            };
            let tail: Vec<f64> = trace.rows.iter().rev().take(10).map(|r| r.objective).collect();
            total += tail.iter().sum::<f64>() / tail.len() as f64;
        }
        let score = total / seeds.len() as f64;
        if score.is_finite() && best.is_none_or(|(_, s)| score < s) {
            best = Some((alpha, score));
        }
    }
    best.map(|(a, _)| a).ok_or_else(|| Error::Divergence("every step size in the grid diverged".into()))
}
