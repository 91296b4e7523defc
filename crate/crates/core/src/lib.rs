//! Nonlinear vector autoregression with monotone invertible per-node maps.
//!
//! Observations `z_i[t] = f_i(y_i[t])` are modelled as componentwise monotone
//! images of a latent linear VAR process `y`. Each `f_i` is a positive
//! mixture of logistic units with a fixed image interval, so it can be
//! inverted numerically by bisection. Gradients through the inverse come
//! from implicit differentiation of `f_i(g_i(z)) = z`.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod eigen;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod gradients;
pub mod io;
pub mod monotone;
pub mod rng;
pub mod synthetic;
pub mod topology;
pub mod training;
pub mod types;
pub mod var;

pub use error::{Error, Result};
pub use types::*;
