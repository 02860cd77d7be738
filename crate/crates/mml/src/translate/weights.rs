//! Saving and loading trained parameters. Each parameter is written to its
//! own file, dense CSV or sparse coordinate text depending on how the
//! matrix is stored, and a JSON manifest maps parameter names to those
//! files. Loading validates every parameter against the shapes the model
//! demands before handing anything back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::matrix::{io as mio, Matrix};

use super::model::{validate_model, Layer, ModelSpec};
use super::TranslateError;

pub const WEIGHTS_MANIFEST_FILE: &str = "weights.json";

/// Maps parameter names to file paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub params: BTreeMap<String, String>,
}

/// Expected name and shape of one trainable parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ParamShape {
    name: String,
    rows: usize,
    cols: usize,
}

/// Parameter names and shapes in initialization order, following the same
/// naming rule the script generator uses: a single trainable layer gets
/// `W`/`b`, multiple trainable layers get `W1`/`b1`, `W2`/`b2`, ...
fn expected_params(spec: &ModelSpec) -> Result<Vec<ParamShape>, TranslateError> {
    let report = validate_model(spec)?;
    let trainable = spec.layers.iter().filter(|l| l.is_trainable()).count();
    if trainable == 0 {
        return Err(TranslateError::Model {
            msg: "model has no trainable parameters".to_string(),
        });
    }
    let mut out = Vec::new();
    let mut ord = 0usize;
    for (pos, layer) in spec.layers.iter().enumerate() {
        let (c, h, w) = report.shape_before(pos + 1);
        let (w_shape, b_shape) = match layer {
            Layer::Dense { units } => ((c * h * w, *units), (1, *units)),
            Layer::Conv2d {
                filters, kernel, ..
            } => {
                let (kh, kw) = kernel.hw();
                ((*filters, c * kh * kw), (1, *filters))
            }
            _ => continue,
        };
        ord += 1;
        let (wn, bn) = if trainable == 1 {
            ("W".to_string(), "b".to_string())
        } else {
            (format!("W{ord}"), format!("b{ord}"))
        };
        out.push(ParamShape {
            name: wn,
            rows: w_shape.0,
            cols: w_shape.1,
        });
        out.push(ParamShape {
            name: bn,
            rows: b_shape.0,
            cols: b_shape.1,
        });
    }
    Ok(out)
}

/// Writes every parameter plus the manifest into `dir` and returns the
/// manifest path. Sparse matrices go to `<name>.coo`, dense to `<name>.csv`.
pub fn save_weights(
    params: &[(String, Matrix)],
    dir: &Path,
) -> Result<PathBuf, TranslateError> {
    std::fs::create_dir_all(dir).map_err(|e| TranslateError::Io {
        path: dir.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut manifest = WeightsManifest {
        params: BTreeMap::new(),
    };
    for (name, matrix) in params {
        let file = if matrix.is_sparse() {
            format!("{name}.coo")
        } else {
            format!("{name}.csv")
        };
        mio::write_matrix(&dir.join(&file), matrix)?;
        if manifest.params.insert(name.clone(), file).is_some() {
            return Err(TranslateError::Manifest {
                path: dir.display().to_string(),
                msg: format!("duplicate parameter name {name}"),
            });
        }
    }
    let path = dir.join(WEIGHTS_MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| TranslateError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    Ok(path)
}

/// Loads the parameters named by the manifest at `manifest_path`, checks
/// each against the shape the model requires, and returns them in
/// initialization order. Every trainable parameter must be present, shaped
/// right, and nothing extra may appear.
pub fn load_weights(
    spec: &ModelSpec,
    manifest_path: &Path,
) -> Result<Vec<(String, Matrix)>, TranslateError> {
    let expected = expected_params(spec)?;
    let origin = manifest_path.display().to_string();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| TranslateError::Io {
        path: origin.clone(),
        msg: e.to_string(),
    })?;
    let manifest: WeightsManifest =
        serde_json::from_str(&text).map_err(|e| TranslateError::Manifest {
            path: origin.clone(),
            msg: e.to_string(),
        })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut remaining = manifest.params.clone();
    let mut out = Vec::with_capacity(expected.len());
    for want in &expected {
        let Some(rel) = remaining.remove(&want.name) else {
            return Err(TranslateError::MissingWeight {
                path: origin.clone(),
                name: want.name.clone(),
            });
        };
        let matrix = mio::read_matrix(&base.join(&rel))?;
        if matrix.rows() != want.rows || matrix.cols() != want.cols {
            return Err(TranslateError::WeightShape {
                name: want.name.clone(),
                want_rows: want.rows,
                want_cols: want.cols,
                got_rows: matrix.rows(),
                got_cols: matrix.cols(),
            });
        }
        out.push((want.name.clone(), matrix));
    }
    if let Some(name) = remaining.into_keys().next() {
        return Err(TranslateError::Manifest {
            path: origin,
            msg: format!("unknown parameter {name}"),
        });
    }
    Ok(out)
}
