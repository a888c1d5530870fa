#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod filters;
pub mod linalg;
pub mod metrics;

pub use error::{Error, Result};
pub mod room;
pub mod stft;
pub mod verification;
