//! Testing whether a low-degree multilinear polynomial, observed through noisy
//! labeled samples under a finite product distribution, is s-sparse or far
//! from T-sparse.
//!
//! Exact rational arithmetic is used wherever an identity is exact (output
//! distributions, small-instance moments, witness certification); floats are
//! used in the sampling path.

pub mod distribution;
pub mod error;
pub mod exactdist;
pub mod hardness;
pub mod momest;
pub mod msg;
pub mod nets;
pub mod poly;
pub mod coarse;
pub mod dfkolab;
pub mod report;
pub mod sharp;
pub mod rational;

pub use distribution::{validate_distribution, FiniteDistribution};
pub use error::{Error, Result};
pub use exactdist::{identical_by_moments, moment_distance, output_distribution, wasserstein1, DiscreteRV};
pub use poly::{Monomial, MultilinearPolynomial};
pub use rational::Rational;
