//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as it executes. [`Graph::backward`]
//! replays the record in reverse and accumulates gradients into each node
//! that requires one; a tensor consumed by several operations receives the
//! sum of their contributions.
//!
//! ```
//! use ocrf_diff::Graph;
//!
//! let mut g = Graph::new();
//! let x = g.param(&[2], vec![1.0, 2.0]).unwrap();
//! let sq = g.mul(x, x).unwrap();
//! let y = g.sum(sq).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x), &[2.0, 4.0]);
//! ```
//!
//! Broadcasting is limited to scalar-with-tensor forms
//! ([`Graph::mul_scalar_var`], [`Graph::add_scalar_var`]); everything else
//! reshapes or expands explicitly.

mod error;
mod gradcheck;
mod graph;
mod ops;
mod tensor;

pub use error::{DiffError, Result};
pub use gradcheck::{analytic_grad, gradcheck};
pub use graph::{BackwardCtx, BackwardFn, Graph, InputGrads, Var};
pub use ops::elementwise::{sigmoid, softplus};
pub use tensor::{numel, DiffTensor};
