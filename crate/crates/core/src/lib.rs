//! Bayesian inversion for elliptic PDE inverse problems (EIT, DOT, QPAT)
//! with pCN MCMC driven either by a finite element forward model or by a
//! trained convolutional surrogate.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod datagen;
pub mod experiment;
pub mod fem;
pub mod mcmc;
pub mod mesh;
pub mod prior;
pub mod problem;
pub mod sparse;
pub mod surrogate;
