//! Neural-network layers (init/forward/backward) and optimizers.

pub mod gradcheck;
pub mod layers;
pub mod optim;

use crate::conv::ConvError;
use crate::matrix::MatrixError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {a_rows}x{a_cols} against {b_rows}x{b_cols}")]
    Shape {
        op: &'static str,
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("keep probability {keep_p} outside (0, 1]")]
    BadKeepProbability { keep_p: f64 },
    #[error("adam update requires a step number of at least 1")]
    AdamStepZero,
    #[error("unknown layer {name:?}")]
    UnknownLayer { name: String },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Conv(#[from] ConvError),
}
