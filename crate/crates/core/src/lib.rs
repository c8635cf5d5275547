//! Wasserstein proximal schemes for entropy-regularized mean-field
//! optimization on discretized probability measures.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod measures;
pub mod transport;
pub mod functionals;
pub mod gibbs;
pub mod jko;
pub mod schemes;
pub mod diagnostics;
pub mod oracles;
pub mod experiment;

pub use error::{Error, Result};
pub use measures::{DiscreteMeasure, GridSpec, PointMap};
