//! Random-walk benchmarking of counting circuits.
//!
//! The error syndrome of a clocked transfer circuit after a burst of `t`
//! operations behaves like a three-outcome random walk. This crate
//! evaluates that walk exactly, fits it to counts data, tests it (and two
//! Dirichlet excess-noise extensions) with Monte Carlo exact tests,
//! recovers step-wise transition laws by deconvolution, and simulates
//! two-level-fluctuator environments that break the homogeneous model.
//!
//! Numerical kernels are generic over [`scalar::Real`] (`f64`, `f32`) or,
//! where only field arithmetic is needed, [`scalar::Scalar`], which also
//! admits exact rationals. The type parameters default to `f64`.

pub mod dirichlet;
pub mod error;
pub mod inference;
pub mod io;
pub mod markov;
pub mod model;
pub mod noisesim;
pub mod optim;
pub mod sampling;
pub mod scalar;
pub mod sigtest;
pub mod special;
pub mod stream;

pub use dirichlet::DirichletParams;
pub use error::{Error, ErrorKind, Result};
pub use inference::{Dataset, FitResult};
pub use model::{Binning, CountsBlock, StepProbs, WalkDistribution};
pub use stream::{RngStream, StreamId};

/// Exact rational scalar.
pub type Exact = num_rational::BigRational;

pub type StepProbsF32 = StepProbs<f32>;
pub type StepProbsExact = StepProbs<Exact>;
pub type WalkDistributionF32 = WalkDistribution<f32>;
pub type WalkDistributionExact = WalkDistribution<Exact>;
