//! Shared runtime defaults. Every knob here can be overridden per run; these
//! are the values used when nothing else is specified.

/// RNG seed for weight initialization and dropout when none is given.
pub const DEFAULT_SEED: u64 = 42;

/// Fill-ratio threshold at or below which matrices are stored sparse.
pub const DEFAULT_SPARSITY_THRESHOLD: f64 = crate::matrix::DEFAULT_SPARSITY_THRESHOLD;

/// Memory budget the planner fits execution plans into: 512 MiB.
pub const DEFAULT_MEMORY_BUDGET: u64 = 512 * 1024 * 1024;

/// Upper bound on worker threads for partitioned execution.
pub const DEFAULT_MAX_WORKERS: usize = 8;

/// Minibatch size when neither the model nor the caller picks one.
pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Training epochs when unspecified.
pub const DEFAULT_EPOCHS: usize = 1;
