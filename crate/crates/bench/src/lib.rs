//! Experiment harness for the `drago-core` solvers: dataset ingestion,
//! synthetic problems, reference solutions, seeded runs and trace export.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod synth;

pub use error::{BenchError, Result};

/// Monotonic wall clock.
#[derive(Clone, Copy, Debug)]
pub struct StdClock(std::time::Instant);

impl StdClock {
    pub fn start() -> Self {
        StdClock(std::time::Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::start()
    }
}

impl drago_core::trace::Clock for StdClock {
    fn now_seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
