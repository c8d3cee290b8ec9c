//! Define-by-run reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only tape. Every operation pushes one node whose
//! inputs already live earlier on the tape, so append order is a valid
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Graphs are cheap to build and are thrown away after each step.

mod check;
mod graph;
mod params;

pub use check::{grad_check, GradCheckReport};
pub use graph::{Graph, OpKind, Tensor, Var};
pub use params::{Bound, ParamId, ParamStore};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite input to {op}")]
    NonFinite { op: &'static str },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("index {index} out of range for length {len} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Draws one standard Gumbel variate from a uniform sample in (0, 1).
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(1e-300, 1.0 - 1e-16);
    -(-u.ln()).ln()
}
