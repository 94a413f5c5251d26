// `!(x <= limit)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod lqg;
pub mod margins;
pub mod plant;
pub mod policy;
pub mod quadrature;
pub mod reward;
pub mod trainer;

pub use error::{Error, Result};
