//! Forward and inverse gravimetry of multi-body deposits modelled as
//! homogeneous spheroids.
//!
//! Units throughout: km, g/cm³, bln t (10¹² kg), mGal. See [`units`].

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bar;
pub mod bulakh;
pub mod contour;
pub mod detect;
pub mod error;
pub mod exec;
pub mod field;
pub mod grid;
pub mod pipeline;
pub mod refine;
pub mod survey;
pub mod units;

pub use error::{Error, Result};
pub use exec::Execution;
pub use field::{Deposit, Spheroid, Station};
