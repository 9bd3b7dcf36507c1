//! Run traces and the shared evaluation loop.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Source of wall-clock time in seconds. The core crate has no clock of its
/// own; callers with `std` pass one in.
pub trait Clock {
    fn now_seconds(&self) -> f64;
}

/// Clock that always reads zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub cumulative_queries: u64,
    pub wall_seconds: f64,
    /// `max_q L(w, q)` at the current iterate.
    pub objective: f64,
    /// Normalized suboptimality, present when a reference optimum is known.
    pub normalized_gap: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    QueryBudget,
    TargetReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub optimizer: String,
    pub rows: Vec<TraceRow>,
    /// Queries spent on evaluating the objective for the trace, not counted
    /// in `cumulative_queries`.
    pub eval_queries: u64,
    pub stop_reason: Option<StopReason>,
}

impl Trace {
    pub fn new(optimizer: impl Into<String>) -> Self {
        Trace { optimizer: optimizer.into(), rows: Vec::new(), eval_queries: 0, stop_reason: None }
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Gap at the last row whose query count does not exceed `queries`.
    pub fn gap_at_queries(&self, queries: u64) -> Option<f64> {
        self.rows.iter().take_while(|r| r.cumulative_queries <= queries).last().and_then(|r| r.normalized_gap)
    }
}

/// `(value − reference) / (initial − reference)`; tiny negatives are clamped to zero.
pub fn normalized_gap(value: f64, reference: f64, initial: f64) -> Result<f64> {
    let denom = initial - reference;
    if !(denom > 1e-15) {
        return Err(Error::Degenerate(alloc::format!(
            "initial suboptimality {denom:e} is too small to normalize the gap"
        )));
    }
    let gap = (value - reference) / denom;
    Ok(if (-1e-12..0.0).contains(&gap) { 0.0 } else { gap })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub max_iters: u64,
    /// Iterations between two trace rows.
    pub eval_every: u64,
    /// Stop once the normalized gap falls to this level.
    pub gap_target: Option<f64>,
    /// Optimal value used to normalize the gap.
    pub reference_value: Option<f64>,
    /// Abort when the objective exceeds this multiple of its initial value.
    pub divergence_factor: f64,
    /// Stop after the first iteration whose cumulative query count reaches
    /// this budget.
    #[serde(default)]
    pub max_queries: Option<u64>,
}

impl RunOptions {
    pub fn new(max_iters: u64, eval_every: u64) -> Self {
        RunOptions { max_iters, eval_every, gap_target: None, reference_value: None, divergence_factor: 1e3, max_queries: None }
    }

    pub fn with_reference(mut self, value: f64) -> Self {
        self.reference_value = Some(value);
        self
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.gap_target = Some(target);
        self
    }

    pub fn with_max_queries(mut self, budget: u64) -> Self {
        self.max_queries = Some(budget);
        self
    }
}

/// Drives a step function and records trace rows. `step` advances by one
/// iteration and returns the cumulative optimizer query count.
pub(crate) fn drive<C: Clock>(
    name: &str,
    problem: &ProblemSpec,
    opts: &RunOptions,
    clock: &C,
    initial_queries: u64,
    mut current_w: impl FnMut() -> Vec<f64>,
    mut step: impl FnMut() -> Result<u64>,
) -> Result<Trace> {
    let mut trace = Trace::new(name);
    if opts.max_iters == 0 {
        return Ok(trace);
    }
    if opts.eval_every == 0 {
        return Err(crate::error::invalid!("eval_every must be at least 1"));
    }
    let n = problem.n() as u64;
    let mut elapsed = 0.0;
    let mut queries = initial_queries;
    let initial = problem.primal_value(&current_w())?;
    trace.eval_queries += n;
    let gap_of = |value: f64| -> Result<Option<f64>> {
        match opts.reference_value {
            Some(r) => normalized_gap(value, r, initial).map(Some),
            None => Ok(None),
        }
    };
    trace.rows.push(TraceRow {
        iteration: 0,
        cumulative_queries: queries,
        wall_seconds: 0.0,
        objective: initial,
        normalized_gap: gap_of(initial)?,
    });
    let reached = |gap: Option<f64>| matches!((gap, opts.gap_target), (Some(g), Some(t)) if g <= t);
    if reached(trace.rows[0].normalized_gap) {
        trace.stop_reason = Some(StopReason::TargetReached);
        return Ok(trace);
    }
    let mut mark = clock.now_seconds();
    for t in 1..=opts.max_iters {
        queries = step()?;
        let last = t == opts.max_iters || opts.max_queries.is_some_and(|m| queries >= m);
        if t % opts.eval_every == 0 || last {
            let now = clock.now_seconds();
            elapsed += now - mark;
            let value = problem.primal_value(&current_w())?;
            trace.eval_queries += n;
            if !value.is_finite() || value > opts.divergence_factor * initial.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::Divergence(alloc::format!(
                    "{name}: objective {value:e} at iteration {t} exceeds {}x the initial value {initial:e}",
                    opts.divergence_factor
                )));
            }
            let gap = gap_of(value)?;
            trace.rows.push(TraceRow {
                iteration: t,
                cumulative_queries: queries,
                wall_seconds: elapsed,
                objective: value,
                normalized_gap: gap,
            });
            if reached(gap) {
                trace.stop_reason = Some(StopReason::TargetReached);
                return Ok(trace);
            }
            if last {
                break;
            }
            mark = clock.now_seconds();
        }
    }
    let over_budget = opts.max_queries.is_some_and(|m| queries >= m);
    trace.stop_reason = Some(if over_budget { StopReason::QueryBudget } else { StopReason::MaxIterations });
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_normalization() {
        assert_eq!(normalized_gap(3.0, 1.0, 3.0).unwrap(), 1.0);
        assert_eq!(normalized_gap(1.0 - 1e-14, 1.0, 3.0).unwrap(), 0.0);
        assert_eq!(normalized_gap(2.0, 1.0, 3.0).unwrap(), 0.5);
        assert!(normalized_gap(1.0, 1.0, 1.0).is_err());
    }
}
