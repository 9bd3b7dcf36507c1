use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drago_bench::config::ExperimentConfig;
use drago_bench::dataset::write_dataset;
use drago_bench::experiment::{compute_reference, read_json, read_trace, recompute_gaps, run_experiment, write_json, write_records, Reference};
use drago_bench::synth::SyntheticSpec;
use drago_bench::{BenchError, Result};

#[derive(Parser)]
#[command(name = "drago", version, about = "Benchmark harness for distributionally robust optimizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured optimizer over every seed.
    Run {
        config: PathBuf,
        /// Comma-separated seeds, replacing `run.seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `key=value` with a dotted key, e.g. `problem.nu=0.01`. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Solve the configured problem to high accuracy and print w⋆ and the value as JSON.
    Reference {
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the gaps of a trace file against a reference file.
    Gap {
        trace: PathBuf,
        reference: PathBuf,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset utilities
    Datasets {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate a synthetic regression dataset as CSV. The spec is a TOML
    /// file or an inline list such as `n=100,d=10,noise=0.1,seed=0`.
    FetchSynthetic {
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Run { config, seeds, jobs, out, mut overrides } => {
            if let Some(s) = seeds {
                let list: Vec<String> = s.iter().map(u64::to_string).collect();
                overrides.push(format!("run.seeds=[{}]", list.join(",")));
            }
            if let Some(j) = jobs {
                overrides.push(format!("run.jobs={j}"));
            }
            let mut cfg = ExperimentConfig::load(&config, &overrides)?;
            if let Some(o) = out {
                cfg.run.out = o;
            }
            let outcome = run_experiment(&cfg)?;
            let s = &outcome.summary;
            for o in &s.optimizers {
                println!(
                    "{:<16} runs {:>3}  failed {:>3}  median final gap {}  median queries to {:e} {}",
                    o.optimizer,
                    o.runs,
                    o.failures,
                    fmt_opt(o.median_final_gap),
                    s.report_target,
                    fmt_opt(o.median_queries_to_target),
                );
            }
            for r in s.runs.iter().filter(|r| r.error.is_some()) {
                eprintln!("run {} seed {} failed: {}", r.optimizer, r.seed, r.error.as_deref().unwrap_or(""));
            }
            println!("wrote {}", cfg.run.out.display());
            Ok(if s.failures() > 0 { 3 } else { 0 })
        }
        Command::Reference { config, overrides, out } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let problem = cfg.build_problem()?;
            let r = compute_reference(&problem, &cfg)?;
            match out {
                Some(path) => write_json(&path, &r)?,
                None => println!("{}", serde_json::to_string_pretty(&r).map_err(std::io::Error::from)?),
            }
            Ok(0)
        }
        Command::Gap { trace, reference, out } => {
            let r: Reference = read_json(&reference)?;
            let mut records = read_trace(&trace)?;
            recompute_gaps(&mut records, r.value)?;
            match out {
                Some(path) => write_records(&path, &records)?,
                None => {
                    for rec in &records {
                        println!("{}", serde_json::to_string(rec).map_err(std::io::Error::from)?);
                    }
                }
            }
            Ok(0)
        }
        Command::Datasets { command: DatasetCommand::FetchSynthetic { spec, out } } => {
            let spec = parse_synthetic(&spec)?;
            let data = spec.generate()?;
            write_dataset(&data, std::fs::File::create(&out)?)?;
            println!("wrote {} ({} rows, {} features)", out.display(), data.n(), data.d());
            Ok(0)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:e}"))
}

fn parse_synthetic(spec: &str) -> Result<SyntheticSpec> {
    let path = std::path::Path::new(spec);
    let text = if path.exists() {
        std::fs::read_to_string(path)?
    } else {
        spec.split(',').map(str::trim).collect::<Vec<_>>().join("\n")
    };
    toml::from_str(&text).map_err(|e| BenchError::Config(format!("bad synthetic spec: {e}")))
}
