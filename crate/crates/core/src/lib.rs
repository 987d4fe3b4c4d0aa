//! Numerical laboratory for McKean–Vlasov particle systems with common noise.
//!
//! The crate simulates the `n`-particle system with Euler–Maruyama, rebuilds the
//! frozen-coefficient auxiliary particles from the stored Brownian increments,
//! splits the empirical measure into a Gaussian-mixture part and a signed atomic
//! error, and measures both with Bessel potential norms computed by FFT on a
//! periodic box. The `interpolation` module carries the parameter arithmetic and
//! the discrete K-method norm; `experiments` ties everything into reproducible
//! rate and regularity experiments.

// NaN must fail every range check, so negated comparisons are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approximation;
pub mod bessel;
pub mod coefficients;
pub mod error;
pub mod experiments;
pub mod interpolation;
pub mod measures;
pub mod particles;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};

/// Version string embedded into every report, e.g. `mvlab-0.1.0+16a9570-dirty`.
pub const VERSION: &str = concat!("mvlab-", env!("CARGO_PKG_VERSION"), "+", env!("MVLAB_GIT_DESCRIBE"));
