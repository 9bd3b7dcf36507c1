//! Seeded multi-run experiments and their output files.
//!
//! `run_experiment` writes into the output directory:
//! - `<label>_seed<seed>.jsonl`, one [`TraceRecord`] per line;
//! - `plot.csv`, long format `optimizer,seed,x_kind,x,gap` with
//!   `x_kind ∈ {queries, seconds}`;
//! - `summary.json`, a [`Summary`];
//! - `reference.json`, the [`Reference`] used for the gaps;
//! - `<label>_seed<seed>.checkpoint.json` for DRAGO runs when
//!   `run.checkpoint` is set.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use drago_core::baselines::{
    pass_length, reference_solve, run_baseline, smoothness, tune_learning_rate, BaselineConfig, BaselineKind,
    LearningRate,
};
use drago_core::drago::{default_alpha, effective_batch, tune_alpha, Checkpoint, Drago, DragoConfig, MemoryMode, ScheduleMode};
use drago_core::model::ProblemSpec;
use drago_core::trace::{normalized_gap, RunOptions, StopReason, Trace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, OptimizerConfig, StepName, StepSize};
use crate::error::{BenchError, Result};
use crate::StdClock;

/// Optimal value and minimizer of a problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub value: f64,
    pub w: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: u64,
}

pub fn compute_reference(problem: &ProblemSpec, cfg: &ExperimentConfig) -> Result<Reference> {
    let r = reference_solve(problem, &cfg.reference.options())?;
    Ok(Reference { value: r.value, w: r.w, grad_norm: r.grad_norm, iterations: r.iterations })
}

/// One line of a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub optimizer: String,
    pub seed: u64,
    pub iteration: u64,
    pub cumulative_queries: u64,
    pub wall_seconds: f64,
    pub objective: f64,
    pub normalized_gap: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub n: usize,
    pub p: usize,
    pub g: f64,
    pub l: f64,
    pub kappa_q: f64,
}

impl Constants {
    pub fn of(problem: &ProblemSpec) -> Self {
        let loss = problem.loss();
        Constants { n: problem.n(), p: problem.p(), g: loss.g, l: loss.l, kappa_q: problem.kappa_q() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub optimizer: String,
    pub kind: String,
    pub seed: u64,
    /// α for DRAGO, the learning rate otherwise.
    pub step_size: Option<f64>,
    pub trace_file: Option<String>,
    pub error: Option<String>,
    pub stop_reason: Option<StopReason>,
    pub final_queries: Option<u64>,
    pub final_objective: Option<f64>,
    pub final_gap: Option<f64>,
    pub queries_to_target: Option<u64>,
    pub eval_queries: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub optimizer: String,
    pub runs: usize,
    pub failures: usize,
    pub median_final_gap: Option<f64>,
    /// `None` when the median run never reaches the target.
    pub median_queries_to_target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub constants: Option<Constants>,
    pub reference_value: Option<f64>,
    pub report_target: f64,
    pub optimizers: Vec<OptimizerSummary>,
    pub runs: Vec<RunSummary>,
}

impl Summary {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn optimizer(&self, label: &str) -> Option<&OptimizerSummary> {
        self.optimizers.iter().find(|o| o.optimizer == label)
    }
}

/// Traces and summary of an experiment.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub traces: Vec<(String, u64, Trace)>,
    pub summary: Summary,
}

/// Iterations per pass over the data.
pub fn pass_iterations(problem: &ProblemSpec, opt: &OptimizerConfig) -> u64 {
    let n = problem.n();
    match opt {
        OptimizerConfig::Drago { batch, .. } => (n / effective_batch(n, batch.unwrap_or(1))) as u64,
        OptimizerConfig::BiasedSgd { batch, .. } => pass_length(problem, &BaselineKind::BiasedSgd { batch: *batch }),
        OptimizerConfig::Lsvrg { epoch_len, .. } => pass_length(problem, &BaselineKind::Lsvrg { epoch_len: *epoch_len }),
        OptimizerConfig::FullBatchGd { .. } => 1,
    }
}

/// Approximate queries per pass, used to express a query budget in passes.
fn pass_queries(problem: &ProblemSpec, opt: &OptimizerConfig) -> u64 {
    let n = problem.n() as u64;
    match opt {
        OptimizerConfig::Drago { memory: MemoryMode::Compact, .. } => 4 * n,
        OptimizerConfig::Drago { .. } => 3 * n,
        OptimizerConfig::BiasedSgd { batch, .. } => pass_iterations(problem, opt) * (*batch).min(n as usize) as u64,
        OptimizerConfig::Lsvrg { .. } => 2 * n,
        OptimizerConfig::FullBatchGd { .. } => n,
    }
}

fn tune_passes(problem: &ProblemSpec, opt: &OptimizerConfig, cfg: &ExperimentConfig) -> u64 {
    if let Some(p) = cfg.run.tune_passes {
        return p;
    }
    match (cfg.run.max_queries, cfg.run.max_iters) {
        (Some(q), _) => q / pass_queries(problem, opt).max(1),
        (None, Some(t)) => t / pass_iterations(problem, opt).max(1),
        (None, None) => 50,
    }
}

pub fn drago_config(problem: &ProblemSpec, opt: &OptimizerConfig, seed: u64) -> Option<DragoConfig> {
    let OptimizerConfig::Drago { batch, alpha_scale, memory, unregularized, .. } = opt else {
        return None;
    };
    let n = problem.n();
    let b = batch.unwrap_or_else(|| (n / problem.data().d()).max(1));
    let mut c = DragoConfig::new(b, seed);
    c.alpha_scale = *alpha_scale;
    c.memory = *memory;
    if let Some(u) = unregularized {
        c.mode = ScheduleMode::Unregularized { mu1: u.mu1, mu2: u.mu2.unwrap_or(u.mu1), nu1: u.nu1 };
    }
    Some(c)
}

fn baseline_kind(opt: &OptimizerConfig) -> Option<BaselineKind> {
    match opt {
        OptimizerConfig::Drago { .. } => None,
        OptimizerConfig::BiasedSgd { batch, .. } => Some(BaselineKind::BiasedSgd { batch: *batch }),
        OptimizerConfig::Lsvrg { epoch_len, .. } => Some(BaselineKind::Lsvrg { epoch_len: *epoch_len }),
        OptimizerConfig::FullBatchGd { .. } => Some(BaselineKind::FullBatchGd),
    }
}

/// Turns `auto` and `default` into a number. Grid searches run over all
/// configured seeds.
pub fn resolve_step_size(problem: &ProblemSpec, opt: &OptimizerConfig, cfg: &ExperimentConfig) -> Result<f64> {
    let passes = tune_passes(problem, opt, cfg);
    let seeds = &cfg.run.seeds;
    match opt {
        OptimizerConfig::Drago { alpha, unregularized, .. } => {
            let dc = drago_config(problem, opt, seeds[0]).expect("drago config");
            if unregularized.is_some() {
                // the schedule ignores α
                return Ok(effective_batch(problem.n(), dc.batch) as f64 / problem.n() as f64);
            }
            match alpha {
                StepSize::Fixed(a) => Ok(*a),
                StepSize::Named(StepName::Default) => {
                    Ok(default_alpha(problem, effective_batch(problem.n(), dc.batch), dc.alpha_scale)?)
                }
                StepSize::Named(StepName::Auto) => Ok(tune_alpha(problem, &dc, seeds, passes)?),
            }
        }
        OptimizerConfig::FullBatchGd { learning_rate, .. } => match learning_rate {
            None => Ok(1.0 / smoothness(problem)?),
            Some(StepSize::Fixed(lr)) => Ok(*lr),
            Some(_) => Ok(tune_learning_rate(problem, &BaselineKind::FullBatchGd, seeds, passes)?),
        },
        OptimizerConfig::BiasedSgd { learning_rate, .. } | OptimizerConfig::Lsvrg { learning_rate, .. } => {
            match learning_rate {
                StepSize::Fixed(lr) => Ok(*lr),
                _ => Ok(tune_learning_rate(problem, &baseline_kind(opt).expect("baseline"), seeds, passes)?),
            }
        }
    }
}

pub fn run_options(problem: &ProblemSpec, opt: &OptimizerConfig, cfg: &ExperimentConfig, reference: Option<f64>) -> RunOptions {
    let every = cfg.run.eval_every.unwrap_or_else(|| pass_iterations(problem, opt).max(1));
    let mut o = RunOptions::new(cfg.run.max_iters.unwrap_or(u64::MAX), every);
    o.max_queries = cfg.run.max_queries;
    o.gap_target = cfg.run.gap_target;
    o.reference_value = reference;
    o
}

/// Executes one run. Also returns the final DRAGO checkpoint.
pub fn execute_run(
    problem: &ProblemSpec,
    opt: &OptimizerConfig,
    step: f64,
    seed: u64,
    opts: &RunOptions,
) -> Result<(Trace, Option<Checkpoint>)> {
    let clock = StdClock::start();
    match drago_config(problem, opt, seed) {
        Some(dc) => {
            let mut solver = Drago::new(problem, dc.with_alpha(step))?;
            let trace = solver.run(opts, &clock)?;
            Ok((trace, Some(solver.checkpoint())))
        }
        None => {
            let kind = baseline_kind(opt).expect("baseline");
            let bc = BaselineConfig { kind, learning_rate: LearningRate::Fixed(step), seed };
            Ok((run_baseline(problem, &bc, opts, &clock)?, None))
        }
    }
}

/// Median of possibly infinite values; `None` if empty or infinite.
pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let m = if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) };
    m.is_finite().then_some(m)
}

/// Query count at the first row whose gap is at most `target`.
pub fn queries_to_target(trace: &Trace, target: f64) -> Option<u64> {
    trace.rows.iter().find(|r| r.normalized_gap.is_some_and(|g| g <= target)).map(|r| r.cumulative_queries)
}

fn file_stem(label: &str, seed: u64) -> String {
    let clean: String =
        label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("{clean}_seed{seed}")
}

struct Job<'c> {
    opt: &'c OptimizerConfig,
    seed: u64,
    step: std::result::Result<f64, String>,
}

/// Runs every (optimizer, seed) pair and writes the outputs. A failing run is
/// recorded in the summary and does not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let out = &cfg.run.out;
    fs::create_dir_all(out)?;
    let hash = cfg.hash();
    if cfg.optimizers.is_empty() {
        let summary = Summary {
            config_hash: hash,
            constants: None,
            reference_value: None,
            report_target: cfg.run.report_target,
            optimizers: Vec::new(),
            runs: Vec::new(),
        };
        write_json(&out.join("summary.json"), &summary)?;
        write_plot_table(&out.join("plot.csv"), &[])?;
        return Ok(Outcome { traces: Vec::new(), summary });
    }

    let problem = cfg.build_problem()?;
    let reference = if problem.nu() > 0.0 { Some(compute_reference(&problem, cfg)?) } else { None };
    if let Some(r) = &reference {
        write_json(&out.join("reference.json"), r)?;
    }
    let ref_value = reference.as_ref().map(|r| r.value);

    let mut jobs = Vec::new();
    for opt in &cfg.optimizers {
        let step = resolve_step_size(&problem, opt, cfg).map_err(|e| e.to_string());
        for &seed in &cfg.run.seeds {
            jobs.push(Job { opt, seed, step: step.clone() });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.jobs)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start {} worker threads: {e}", cfg.run.jobs)))?;
    let results: Vec<(RunSummary, Option<Trace>)> = pool.install(|| {
        jobs.par_iter().map(|job| run_job(&problem, cfg, job, ref_value)).collect::<Result<Vec<_>>>()
    })?;

    let mut traces = Vec::new();
    let mut runs = Vec::new();
    for (summary, trace) in results {
        if let Some(t) = trace {
            traces.push((summary.optimizer.clone(), summary.seed, t));
        }
        runs.push(summary);
    }
    let optimizers = cfg
        .optimizers
        .iter()
        .map(|o| {
            let label = o.label();
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.optimizer == label).collect();
            let ok: Vec<&&RunSummary> = mine.iter().filter(|r| r.error.is_none()).collect();
            OptimizerSummary {
                optimizer: label,
                runs: mine.len(),
                failures: mine.len() - ok.len(),
                median_final_gap: median(ok.iter().filter_map(|r| r.final_gap).collect()),
                median_queries_to_target: if ok.is_empty() {
                    None
                } else {
                    median(ok.iter().map(|r| r.queries_to_target.map_or(f64::INFINITY, |q| q as f64)).collect())
                },
            }
        })
        .collect();
    let summary = Summary {
        config_hash: hash,
        constants: Some(Constants::of(&problem)),
        reference_value: ref_value,
        report_target: cfg.run.report_target,
        optimizers,
        runs,
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_plot_table(&out.join("plot.csv"), &traces)?;
    Ok(Outcome { traces, summary })
}

fn run_job(problem: &ProblemSpec, cfg: &ExperimentConfig, job: &Job, reference: Option<f64>) -> Result<(RunSummary, Option<Trace>)> {
    let label = job.opt.label();
    let mut summary = RunSummary {
        optimizer: label.clone(),
        kind: job.opt.kind_name().to_string(),
        seed: job.seed,
        step_size: None,
        trace_file: None,
        error: None,
        stop_reason: None,
        final_queries: None,
        final_objective: None,
        final_gap: None,
        queries_to_target: None,
        eval_queries: None,
    };
    let step = match &job.step {
        Ok(s) => *s,
        Err(e) => {
            summary.error = Some(format!("step size selection failed: {e}"));
            return Ok((summary, None));
        }
    };
    summary.step_size = Some(step);
    let opts = run_options(problem, job.opt, cfg, reference);
    let (trace, ckpt) = match execute_run(problem, job.opt, step, job.seed, &opts) {
        Ok(r) => r,
        Err(e) => {
            summary.error = Some(e.to_string());
            return Ok((summary, None));
        }
    };
    let stem = file_stem(&label, job.seed);
    let name = format!("{stem}.jsonl");
    write_trace(&cfg.run.out.join(&name), &label, job.seed, &trace)?;
    if cfg.run.checkpoint {
        if let Some(c) = ckpt {
            write_json(&cfg.run.out.join(format!("{stem}.checkpoint.json")), &c)?;
        }
    }
    summary.trace_file = Some(name);
    summary.stop_reason = trace.stop_reason;
    summary.eval_queries = Some(trace.eval_queries);
    if let Some(last) = trace.last() {
        summary.final_queries = Some(last.cumulative_queries);
        summary.final_objective = Some(last.objective);
        summary.final_gap = last.normalized_gap;
    }
    summary.queries_to_target = queries_to_target(&trace, cfg.run.report_target);
    Ok((summary, Some(trace)))
}

pub fn trace_records(label: &str, seed: u64, trace: &Trace) -> Vec<TraceRecord> {
    trace
        .rows
        .iter()
        .map(|r| TraceRecord {
            optimizer: label.to_string(),
            seed,
            iteration: r.iteration,
            cumulative_queries: r.cumulative_queries,
            wall_seconds: r.wall_seconds,
            objective: r.objective,
            normalized_gap: r.normalized_gap,
        })
        .collect()
}

pub fn write_trace(path: &Path, label: &str, seed: u64, trace: &Trace) -> Result<()> {
    write_records(path, &trace_records(label, seed, trace))
}

pub fn write_records(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = File::open(path).map_err(|e| BenchError::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| BenchError::Parse {
            path: path.display().to_string(),
            line: k + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Recomputes every gap against `reference`, normalizing by the objective of
/// the first row.
pub fn recompute_gaps(records: &mut [TraceRecord], reference: f64) -> Result<()> {
    let Some(initial) = records.first().map(|r| r.objective) else {
        return Ok(());
    };
    for r in records.iter_mut() {
        r.normalized_gap = Some(normalized_gap(r.objective, reference, initial)?);
    }
    Ok(())
}

pub fn write_plot_table(path: &Path, traces: &[(String, u64, Trace)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["optimizer", "seed", "x_kind", "x", "gap"]).map_err(csv_io)?;
    for (label, seed, trace) in traces {
        for r in &trace.rows {
            let gap = r.normalized_gap.map(|g| format!("{g:e}")).unwrap_or_default();
            let seed = seed.to_string();
            w.write_record([label.as_str(), &seed, "queries", &r.cumulative_queries.to_string(), &gap])
                .map_err(csv_io)?;
            w.write_record([label.as_str(), &seed, "seconds", &format!("{:e}", r.wall_seconds), &gap])
                .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| BenchError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Path of the trace file for a run inside `out`.
pub fn trace_path(out: &Path, label: &str, seed: u64) -> PathBuf {
    out.join(format!("{}.jsonl", file_stem(label, seed)))
}

fn csv_io(e: csv::Error) -> BenchError {
    BenchError::Io(std::io::Error::other(e))
}
