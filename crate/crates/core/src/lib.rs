//! Stochastic primal-dual optimization for penalized distributionally robust
//! objectives
//!
//! ```text
//! min_w max_{q in Q}  sum_i q_i l_i(w) - nu * D(q || 1/n) + (mu/2) ||w||^2
//! ```
//!
//! over support-constrained uncertainty sets `Q` (CVaR, spectral risk
//! permutahedra and chi-square balls).
//!
//! The crate is `no_std` and only needs `alloc`. Wall-clock timing is injected
//! through [`trace::Clock`] so the run loops stay free of platform IO.
//!
//! Modules:
//! - [`model`]: losses, the saddle objective and its full-batch gradient.
//! - [`dualprox`]: the dual maximization oracle and Bregman proximal step.
//! - [`drago`]: the block-cyclic variance-reduced primal-dual solver.
//! - [`baselines`]: reference solver, biased minibatch SGD and LSVRG.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baselines;
pub mod dualprox;
pub mod drago;
pub mod error;
pub mod linalg;
pub mod model;
pub mod trace;

pub use error::{Error, Result};
