//! Model-free control: intelligent PID controllers built on an ultra-local
//! model, algebraic estimation of derivatives, and a set of benchmark plants.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;

pub mod algdiff;
pub mod bench;
pub mod control;
pub mod plants;
pub mod signal;
pub mod traject;

pub use error::{Error, Result};
