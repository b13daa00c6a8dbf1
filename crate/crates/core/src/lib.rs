//! Variance estimation for crossed, unbalanced triplet data.
//!
//! Data are `(row, col, value)` triplets over two interlocking entity sets,
//! such as customers and movies. Observations sharing a row or a column are
//! correlated, so IID resampling understates the variance of means. This
//! crate implements the pigeonhole bootstrap (rows and columns resampled
//! independently with replacement), its closed-form plug-in variance, the
//! random-effects expectations of both bootstraps, and a simulator for
//! checking them.

pub mod cli;
pub mod dataset;
pub mod resampling;
pub mod rng;
pub mod simulator;
pub mod statistics;
pub mod summation;
pub mod variance;
