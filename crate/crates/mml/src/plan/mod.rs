//! Memory estimation and execution-strategy selection, plus the partitioned
//! executors that carry the chosen plan out.
//!
//! The planner sizes one training or scoring step in bytes (dense worst
//! case), compares it against a configurable budget, and picks between
//! running everything in one process, splitting each batch's gradient work
//! over row partitions, or scoring row partitions on parallel workers.

mod exec;

use thiserror::Error;

use crate::config;
use crate::dsl::DslError;
use crate::matrix::MatrixError;
use crate::translate::{shape_chain, Layer, ModelSpec, Optimizer, TranslateError};

pub use exec::{
    execute_data_parallel_batch, execute_parfor_scoring, execute_single_node, update_schedule,
    ParamSet,
};

#[derive(Debug, Error)]
pub enum PlanError {
    /// Even a one-row partition exceeds the budget; no plan exists.
    #[error("a single row needs {needed} bytes but the memory budget is {budget}")]
    Capacity { needed: u64, budget: u64 },
    #[error(transparent)]
    Model(#[from] TranslateError),
    #[error(transparent)]
    Script(#[from] DslError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    /// A worker failed; `partition` is its 0-based index and the first
    /// failing partition wins.
    #[error("worker {partition}: {source}")]
    Worker {
        partition: usize,
        #[source]
        source: Box<PlanError>,
    },
    /// The executor was driven with inconsistent inputs (bad manifest,
    /// mismatched parameter lists, malformed partitions).
    #[error("executor: {msg}")]
    Driver { msg: String },
}

pub(crate) fn driver_err(msg: impl Into<String>) -> PlanError {
    PlanError::Driver { msg: msg.into() }
}

/// Dataset dimensions the planner sizes against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataDims {
    pub rows: usize,
    /// Feature columns (flattened input width).
    pub x_cols: usize,
    /// Label columns (output width); zero for scoring jobs.
    pub y_cols: usize,
    /// Nonzeros in the feature matrix when known; refines the input term
    /// below its dense worst case.
    pub x_nnz: Option<u64>,
}

impl DataDims {
    pub fn dense(rows: usize, x_cols: usize, y_cols: usize) -> Self {
        DataDims {
            rows,
            x_cols,
            y_cols,
            x_nnz: None,
        }
    }
}

/// Worst-case bytes for one execution step over `batch_rows` rows, split
/// into a fixed part (parameters, optimizer state, lowering workspaces) and
/// a per-row part (activations, their gradients, working copies).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub fixed_bytes: u64,
    pub per_row_bytes: u64,
    /// Rows one step processes at once under the unpartitioned plan.
    pub batch_rows: usize,
    /// Named sizing terms, for reporting. Sums to `total_bytes()`.
    pub components: Vec<(String, u64)>,
}

impl MemoryEstimate {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_for_rows(self.batch_rows)
    }

    /// The estimate rescaled to a partition carrying `rows` of the batch.
    pub fn bytes_for_rows(&self, rows: usize) -> u64 {
        self.fixed_bytes + self.per_row_bytes * rows as u64
    }
}

const F64_BYTES: u64 = 8;
/// Every row-shaped buffer is charged three times: the value itself, its
/// gradient mirror, and one working copy (slices, transposes, masks).
const ROW_COPIES: u64 = 3;
/// Every parameter is charged six times: the parameter, its gradient, and
/// up to four update temporaries live at the update's peak.
const PARAM_COPIES: u64 = 6;

/// Sizes one step of the model over a `batch_size`-row batch, dense worst
/// case, including the patches-by-positions lowering buffer every
/// convolution materializes. An empty layer list prices the input and
/// label batches alone, once each.
pub fn estimate_memory(
    spec: &ModelSpec,
    dims: &DataDims,
    batch_size: usize,
) -> Result<MemoryEstimate, PlanError> {
    let report = shape_chain(spec)?;
    let b = batch_size.min(dims.rows).max(1) as u64;
    let mut components = Vec::new();

    // Compressed rows cost values + column indexes + one pointer; take the
    // cheaper representation when the nonzero count is declared.
    let dense_input_row = dims.x_cols as u64 * F64_BYTES;
    let input_row_bytes = match dims.x_nnz {
        Some(nnz) if dims.rows > 0 => {
            let nnz_per_row = nnz.div_ceil(dims.rows as u64);
            dense_input_row.min(nnz_per_row * 2 * F64_BYTES + 2 * F64_BYTES)
        }
        _ => dense_input_row,
    };
    let label_row_bytes = dims.y_cols as u64 * F64_BYTES;
    let mut per_row_bytes = input_row_bytes + label_row_bytes;
    components.push(("input batch".to_string(), b * input_row_bytes));
    if label_row_bytes > 0 {
        components.push(("label batch".to_string(), b * label_row_bytes));
    }

    let mut param_elems: u64 = 0;
    let mut workspace_bytes: u64 = 0;
    for (pos, layer) in spec.layers.iter().enumerate() {
        let shape = &report.layers[pos];
        let width = shape.width() as u64;
        per_row_bytes += width * ROW_COPIES * F64_BYTES;
        components.push((
            format!("layer {} ({}) activations and gradients", shape.index, shape.kind),
            b * width * ROW_COPIES * F64_BYTES,
        ));
        match layer {
            Layer::Dense { units } => {
                let (c, h, w) = report.shape_before(shape.index);
                param_elems += (c * h * w * *units + *units) as u64;
            }
            Layer::Conv2d {
                filters, kernel, ..
            } => {
                let (c, _, _) = report.shape_before(shape.index);
                let (kh, kw) = kernel.hw();
                let crs = (c * kh * kw) as u64;
                param_elems += *filters as u64 * crs + *filters as u64;
                // One lowering buffer lives at a time per convolution;
                // doubled to cover the backward re-lowering.
                let positions = (shape.out.1 * shape.out.2) as u64;
                let buf = 2 * crs * positions * F64_BYTES;
                workspace_bytes += buf;
                components.push((
                    format!("layer {} (conv2d) lowering buffer", shape.index),
                    buf,
                ));
            }
            _ => {}
        }
    }

    if !spec.layers.is_empty() {
        // Batch slices, the input gradient, and a transpose copy use dense
        // sizing even when the stored input is compressed.
        let copies = (dense_input_row + label_row_bytes) * ROW_COPIES;
        per_row_bytes += copies;
        components.push((
            "batch slices and input gradients".to_string(),
            b * copies,
        ));
    }

    if param_elems > 0 {
        // Partitioned training keeps one parameter-shaped gradient per
        // batch row until the ordered reduction folds it in.
        per_row_bytes += param_elems * F64_BYTES;
        components.push((
            "per-row gradient retention".to_string(),
            b * param_elems * F64_BYTES,
        ));
    }

    let state_copies = match spec.optimizer {
        Optimizer::Sgd { .. } => 0u64,
        Optimizer::SgdMomentum { .. }
        | Optimizer::SgdNesterov { .. }
        | Optimizer::Adagrad { .. }
        | Optimizer::Rmsprop { .. } => 1,
        Optimizer::Adam { .. } => 2,
    };
    if param_elems > 0 {
        components.push((
            "parameters, gradients, update temporaries".to_string(),
            param_elems * PARAM_COPIES * F64_BYTES,
        ));
        if state_copies > 0 {
            components.push((
                "optimizer state".to_string(),
                param_elems * state_copies * F64_BYTES,
            ));
        }
    }

    Ok(MemoryEstimate {
        fixed_bytes: param_elems * (PARAM_COPIES + state_copies) * F64_BYTES + workspace_bytes,
        per_row_bytes,
        batch_rows: b as usize,
        components,
    })
}

/// Planner knobs, from config file or CLI flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanConfig {
    pub memory_budget_bytes: u64,
    pub max_workers: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            memory_budget_bytes: config::DEFAULT_MEMORY_BUDGET,
            max_workers: config::DEFAULT_MAX_WORKERS,
        }
    }
}

/// Contiguous 1-based inclusive row range, matching matrix slicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowRange {
    pub start: usize,
    pub end: usize,
}

impl RowRange {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

/// How a job runs: everything in one process, each batch's gradient work
/// split over row partitions, or row-partitioned parallel scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutionPlan {
    SingleNode,
    DataParallelBatch {
        partitions: usize,
    },
    ParForScoring {
        workers: usize,
        row_partitions: Vec<RowRange>,
    },
}

/// What the plan is for: training, plain scoring, or scoring under the
/// allreduce hint, which always parallelizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanHint {
    Train,
    Score,
    ScoreAllreduce,
}

/// Splits rows 1..=total into `parts` contiguous ranges whose sizes differ
/// by at most one, larger ranges first (103 rows over 4 parts gives
/// 26/26/26/25). `parts` is capped at `total`.
pub fn partition_rows(total: usize, parts: usize) -> Vec<RowRange> {
    assert!(total > 0, "cannot partition zero rows");
    let parts = parts.clamp(1, total);
    let base = total / parts;
    let rem = total % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 1;
    for i in 0..parts {
        let len = base + usize::from(i < rem);
        out.push(RowRange {
            start,
            end: start + len - 1,
        });
        start += len;
    }
    out
}

/// Picks the plan for `estimate` under `cfg`. Single node whenever the
/// whole step fits the budget, otherwise the smallest partition count whose
/// per-partition share fits. The allreduce hint skips the budget logic and
/// always scores on min(max_workers, rows) parallel workers.
pub fn select_plan(
    estimate: &MemoryEstimate,
    cfg: &PlanConfig,
    hint: PlanHint,
) -> Result<ExecutionPlan, PlanError> {
    let rows = estimate.batch_rows.max(1);
    if let PlanHint::ScoreAllreduce = hint {
        let workers = cfg.max_workers.clamp(1, rows);
        return Ok(ExecutionPlan::ParForScoring {
            workers,
            row_partitions: partition_rows(rows, workers),
        });
    }
    let budget = cfg.memory_budget_bytes;
    if estimate.total_bytes() <= budget {
        return Ok(ExecutionPlan::SingleNode);
    }
    if estimate.bytes_for_rows(1) > budget {
        return Err(PlanError::Capacity {
            needed: estimate.bytes_for_rows(1),
            budget,
        });
    }
    let partitions = (2..=rows)
        .find(|p| estimate.bytes_for_rows(rows.div_ceil(*p)) <= budget)
        .expect("a one-row partition fits, so some partition count fits");
    Ok(match hint {
        PlanHint::Train => ExecutionPlan::DataParallelBatch { partitions },
        _ => ExecutionPlan::ParForScoring {
            workers: cfg.max_workers.clamp(1, partitions),
            row_partitions: partition_rows(rows, partitions),
        },
    })
}
