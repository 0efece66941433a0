//! Answering first-order logic queries over incomplete knowledge graphs with
//! fuzzy-set execution and a hyperbolic message-passing relation projection.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod executor;
pub mod fuzzy;
pub mod hyperbolic;
pub mod kg;
pub mod projection;
pub mod query;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
