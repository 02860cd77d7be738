//! A small declarative machine-learning runtime.
//!
//! The pieces fit together like this: `matrix` provides a dense/sparse 2-D
//! float64 array with automatic format selection; `conv` implements
//! convolution and pooling over flattened image tensors via patch expansion;
//! `nn` layers init/forward/backward passes and optimizers on top of both;
//! `dsl` is an R-like scripting language whose builtin function library
//! exposes those layers; `translate` turns a JSON model description into
//! training and scoring scripts; and `plan` picks how to execute them
//! (single node, partitioned gradient computation, or parallel scoring)
//! from a memory estimate, then runs the choice.

pub mod config;
pub mod conv;
pub mod dsl;
pub mod matrix;
pub mod nn;
pub mod plan;
pub mod translate;

pub use matrix::{Axis, ElemOp, Matrix, MatrixError, ReduceOp, TensorShape};
