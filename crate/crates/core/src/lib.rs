//! Numerical toolkit for coupled semilinear heat systems: weak-Lorentz
//! norms, the Dirichlet heat semigroup on boxes, exponent algebra and regime
//! classification, explicit supersolutions, mild-solution solvers and
//! blow-up rate analysis.

// NaN must fail range checks, hence `!(x > 0.0)` throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blowup;
pub mod error;
pub mod exponents;
pub mod fields;
pub mod lorentz;
pub mod mild;
pub mod semigroup;
pub mod supersolution;

pub use error::{Error, Result};
pub use fields::{sample_function, Domain, Field, InitialDatum, PointwiseMap};
pub use semigroup::{heat_kernel, Method, SemigroupEngine};
