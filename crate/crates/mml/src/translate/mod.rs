//! Model translator: turns a JSON model description plus a training
//! configuration into runnable training, gradient, and prediction scripts,
//! a plan manifest the executor consumes, and weight files for trained
//! parameters.

mod codegen;
mod model;
mod weights;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use codegen::{
    generate_prediction_script, generate_training_script, translate, Artifacts, DimsInfo,
    FunctionSet, PlanManifest, ScriptSet, GRAD_SCRIPT_FILE, MANIFEST_FILE, PREDICT_SCRIPT_FILE,
    TRAIN_SCRIPT_FILE,
};
pub use model::{
    parse_model_spec, read_model_spec, shape_chain, validate_model, Extent2, Layer, LayerShape,
    ModelSpec, Optimizer, ShapeReport, TestAlgo, TrainAlgo, TrainConfig,
};
pub use weights::{load_weights, save_weights, WeightsManifest, WEIGHTS_MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum TranslateError {
    /// The model description failed to parse.
    #[error("model spec {path}: {msg}")]
    Spec { path: String, msg: String },
    /// The model as a whole is unusable.
    #[error("model: {msg}")]
    Model { msg: String },
    /// One layer is misconfigured; `index` is 1-based.
    #[error("layer {index} ({kind}): {msg}")]
    Layer {
        index: usize,
        kind: &'static str,
        msg: String,
    },
    /// The training configuration is inconsistent.
    #[error("training config: {msg}")]
    Config { msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    /// A plan or weights manifest failed to parse or named unknown entries.
    #[error("manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
    #[error("weights manifest {path}: missing parameter {name}")]
    MissingWeight { path: String, name: String },
    #[error("parameter {name}: expected {want_rows}x{want_cols}, found {got_rows}x{got_cols}")]
    WeightShape {
        name: String,
        want_rows: usize,
        want_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
}

/// Where `write_artifacts` put each file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactPaths {
    pub train: PathBuf,
    pub gradients: PathBuf,
    pub predict: PathBuf,
    pub manifest: PathBuf,
}

/// Writes the three scripts and the plan manifest into `dir`, creating it
/// if needed.
pub fn write_artifacts(
    artifacts: &Artifacts,
    dir: &Path,
) -> Result<ArtifactPaths, TranslateError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |e: std::io::Error| TranslateError::Io {
            path,
            msg: e.to_string(),
        }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = ArtifactPaths {
        train: dir.join(&artifacts.manifest.scripts.train),
        gradients: dir.join(&artifacts.manifest.scripts.gradients),
        predict: dir.join(&artifacts.manifest.scripts.predict),
        manifest: dir.join(MANIFEST_FILE),
    };
    std::fs::write(&paths.train, &artifacts.train_script).map_err(io_err(&paths.train))?;
    std::fs::write(&paths.gradients, &artifacts.grad_script).map_err(io_err(&paths.gradients))?;
    std::fs::write(&paths.predict, &artifacts.predict_script).map_err(io_err(&paths.predict))?;
    std::fs::write(&paths.manifest, artifacts.manifest.to_json()).map_err(io_err(&paths.manifest))?;
    Ok(paths)
}
