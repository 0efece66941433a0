//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.

pub mod checkpoint;
mod matrix;
mod param;
mod tape;

pub use matrix::{Matrix, SparseMatrix};
pub use param::{Adam, ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var, ARCTANH_CLAMP};
