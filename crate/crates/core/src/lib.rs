//! Metric geometry on conic singular manifolds.
//!
//! The crate evaluates conic and asymptotically conic metrics on cylinder
//! charts `N × [0, η]`, computes their distances (closed form where one
//! exists, grid graphs plus curve refinement otherwise), builds quotient
//! spaces and conic completions, and scans inner against outer distances
//! on parametric sub-manifolds.

// `!(x > y)` is how NaN inputs are rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod boundary;
pub mod distance;
pub mod error;
pub mod graph;
pub mod lne;
pub mod metric;
pub mod quotient;
pub mod scenario;

pub use error::{GeomError, Result};
