#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
pub mod constraints;
pub mod demonstrations;
pub mod dual_qp;
pub mod error;
pub mod gmm;
pub mod kernel;
pub mod kinematics;
pub mod obstacle;
pub mod pipeline;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
