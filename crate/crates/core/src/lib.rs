//! Sampled and streaming Tikhonov regularization for linear inverse problems.
//!
//! The data `b = A x + ε` are processed one row block at a time. Each step
//! updates the iterate with a curvature built from the blocks seen so far and
//! a regularization increment that can be chosen on the fly from the current
//! block alone.

pub mod error;
pub mod linalg;
pub mod linops;
pub mod problems;
pub mod regparam;
pub mod rng;
pub mod sampling;
pub mod solvers;
pub mod superres;

pub use error::{Error, Result};
pub use linops::{LinearOperator, Operator, RowBlockView};
pub use sampling::{SamplePlan, SampleSchedule, Strategy};
pub use solvers::{InverseProblem, Method};
