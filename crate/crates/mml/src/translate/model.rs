//! JSON model descriptions and their shape validation.
//!
//! A model is a sequential stack of layers over an input tensor given as
//! channels x height x width. Validation threads the tensor shape through
//! every layer and reports the chain, so errors name the first layer whose
//! configuration cannot work.

use crate::config;
use crate::conv::{ConvParams, PoolParams};
use crate::matrix::TensorShape;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::TranslateError;

/// A spatial extent pair that JSON may spell as one number (square) or two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Extent2 {
    Same(usize),
    Pair([usize; 2]),
}

impl Extent2 {
    pub fn hw(self) -> (usize, usize) {
        match self {
            Extent2::Same(v) => (v, v),
            Extent2::Pair([h, w]) => (h, w),
        }
    }
}

fn extent_one() -> Extent2 {
    Extent2::Same(1)
}

fn extent_zero() -> Extent2 {
    Extent2::Same(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: Extent2,
        #[serde(default = "extent_one")]
        stride: Extent2,
        #[serde(default = "extent_zero")]
        pad: Extent2,
    },
    Maxpool {
        window: Extent2,
        /// Defaults to the window extents when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<Extent2>,
        #[serde(default = "extent_zero")]
        pad: Extent2,
    },
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Dropout {
        keep_p: f64,
    },
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Maxpool { .. } => "maxpool",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Tanh => "tanh",
            Layer::Softmax => "softmax",
            Layer::Dropout { .. } => "dropout",
        }
    }

    /// True for layers that carry trainable parameters (a weight and a bias).
    pub fn is_trainable(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv2d { .. })
    }
}

fn default_mu() -> f64 {
    0.9
}

fn default_epsilon() -> f64 {
    1e-8
}

fn default_decay_rate() -> f64 {
    0.99
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    SgdMomentum {
        lr: f64,
        #[serde(default = "default_mu")]
        mu: f64,
    },
    SgdNesterov {
        lr: f64,
        #[serde(default = "default_mu")]
        mu: f64,
    },
    Adagrad {
        lr: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Rmsprop {
        lr: f64,
        #[serde(default = "default_decay_rate")]
        decay_rate: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Optimizer::Sgd { .. } => "sgd",
            Optimizer::SgdMomentum { .. } => "sgd_momentum",
            Optimizer::SgdNesterov { .. } => "sgd_nesterov",
            Optimizer::Adagrad { .. } => "adagrad",
            Optimizer::Rmsprop { .. } => "rmsprop",
            Optimizer::Adam { .. } => "adam",
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr }
            | Optimizer::SgdMomentum { lr, .. }
            | Optimizer::SgdNesterov { lr, .. }
            | Optimizer::Adagrad { lr, .. }
            | Optimizer::Rmsprop { lr, .. }
            | Optimizer::Adam { lr, .. } => lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Input tensor per sample: channels, height, width. A plain feature
    /// vector of width D is [D, 1, 1].
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
    pub loss: String,
    pub optimizer: Optimizer,
    /// Optional pre-trained parameters to load before prediction or further
    /// training; path is relative to the spec file's directory when relative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_manifest: Option<String>,
}

pub fn parse_model_spec(text: &str, origin: &str) -> Result<ModelSpec, TranslateError> {
    serde_json::from_str(text).map_err(|e| TranslateError::Spec {
        path: origin.to_string(),
        msg: e.to_string(),
    })
}

pub fn read_model_spec(path: &Path) -> Result<ModelSpec, TranslateError> {
    let text = std::fs::read_to_string(path).map_err(|e| TranslateError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_model_spec(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainAlgo {
    #[default]
    Minibatch,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TestAlgo {
    #[default]
    Minibatch,
    Batch,
    /// Parallel scoring: the forward script runs per row partition and the
    /// outputs are concatenated in row order.
    Allreduce,
}

fn default_batch_size() -> usize {
    config::DEFAULT_BATCH_SIZE
}

fn default_seed() -> u64 {
    config::DEFAULT_SEED
}

/// Knobs for script generation that are not part of the model itself.
/// `epochs` and `num_iter` are alternatives: epochs count passes over the
/// data, num_iter counts individual update steps. At most one may be given;
/// neither means one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub train_algo: TrainAlgo,
    #[serde(default)]
    pub test_algo: TestAlgo,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_iter: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            train_algo: TrainAlgo::default(),
            test_algo: TestAlgo::default(),
            batch_size: config::DEFAULT_BATCH_SIZE,
            epochs: None,
            num_iter: None,
            seed: config::DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TranslateError> {
        if self.batch_size == 0 {
            return Err(TranslateError::Config {
                msg: "batch_size must be at least 1".to_string(),
            });
        }
        if self.epochs.is_some() && self.num_iter.is_some() {
            return Err(TranslateError::Config {
                msg: "give epochs or num_iter, not both".to_string(),
            });
        }
        if self.epochs == Some(0) || self.num_iter == Some(0) {
            return Err(TranslateError::Config {
                msg: "epochs and num_iter must be at least 1".to_string(),
            });
        }
        Ok(())
    }

    /// Epoch count when training is epoch-driven (the default path).
    pub fn resolved_epochs(&self) -> usize {
        self.epochs.unwrap_or(config::DEFAULT_EPOCHS)
    }
}

/// Resolved output shape of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    /// 1-based position in the layer list.
    pub index: usize,
    pub kind: &'static str,
    /// Output tensor as (channels, height, width).
    pub out: (usize, usize, usize),
}

impl LayerShape {
    pub fn width(&self) -> usize {
        self.out.0 * self.out.1 * self.out.2
    }
}

/// The per-layer shape chain produced by [`validate_model`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeReport {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerShape>,
}

impl ShapeReport {
    pub fn input_width(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    /// Row width of the final layer's output; the label matrix must have
    /// this many columns.
    pub fn output_width(&self) -> usize {
        self.layers
            .last()
            .map(LayerShape::width)
            .unwrap_or_else(|| self.input_width())
    }

    /// Output shape feeding layer `index` (1-based).
    pub fn shape_before(&self, index: usize) -> (usize, usize, usize) {
        if index <= 1 {
            self.input
        } else {
            self.layers[index - 2].out
        }
    }
}

fn layer_err(index: usize, kind: &'static str, msg: impl Into<String>) -> TranslateError {
    TranslateError::Layer {
        index,
        kind,
        msg: msg.into(),
    }
}

/// Threads the input shape through every layer, failing on the first layer
/// whose configuration is inconsistent with what reaches it.
pub fn validate_model(spec: &ModelSpec) -> Result<ShapeReport, TranslateError> {
    if spec.layers.is_empty() {
        return Err(TranslateError::Model {
            msg: "model has no layers".to_string(),
        });
    }
    if spec.loss != "cross_entropy" {
        return Err(TranslateError::Model {
            msg: format!(
                "unsupported loss {:?}; only \"cross_entropy\" is implemented",
                spec.loss
            ),
        });
    }
    match spec.layers.last() {
        Some(Layer::Softmax) => {}
        Some(other) => {
            return Err(TranslateError::Model {
                msg: format!(
                    "cross_entropy loss requires the final layer to be softmax, found {}",
                    other.kind_name()
                ),
            });
        }
        None => unreachable!("empty layer list already rejected"),
    }
    shape_chain(spec)
}

/// The shape walk alone, without the model-level loss checks. An empty
/// layer list is fine here and yields a report with no layers; the memory
/// estimator uses that to size input-only jobs.
pub fn shape_chain(spec: &ModelSpec) -> Result<ShapeReport, TranslateError> {
    let [c0, h0, w0] = spec.input_shape;
    if c0 == 0 || h0 == 0 || w0 == 0 {
        return Err(TranslateError::Model {
            msg: format!("input_shape [{c0}, {h0}, {w0}] has a zero dimension"),
        });
    }
    let mut cur = (c0, h0, w0);
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (pos, layer) in spec.layers.iter().enumerate() {
        let index = pos + 1;
        let kind = layer.kind_name();
        let out = match layer {
            Layer::Dense { units } => {
                if *units == 0 {
                    return Err(layer_err(index, kind, "units must be at least 1"));
                }
                // Flat row convention, matching a [1, 1, d] input.
                (1, 1, *units)
            }
            Layer::Conv2d {
                filters,
                kernel,
                stride,
                pad,
            } => {
                let shape = TensorShape::new(1, cur.0, cur.1, cur.2);
                let params =
                    ConvParams::new(shape, *filters, kernel.hw(), stride.hw(), pad.hw())
                        .map_err(|e| layer_err(index, kind, e.to_string()))?;
                (*filters, params.out.0, params.out.1)
            }
            Layer::Maxpool {
                window,
                stride,
                pad,
            } => {
                let shape = TensorShape::new(1, cur.0, cur.1, cur.2);
                let stride = stride.unwrap_or(*window);
                let params = PoolParams::new(shape, window.hw(), stride.hw(), pad.hw())
                    .map_err(|e| layer_err(index, kind, e.to_string()))?;
                (cur.0, params.out.0, params.out.1)
            }
            Layer::Dropout { keep_p } => {
                if !(*keep_p > 0.0 && *keep_p <= 1.0) {
                    return Err(layer_err(
                        index,
                        kind,
                        format!("keep_p must be in (0, 1], got {keep_p}"),
                    ));
                }
                cur
            }
            Layer::Relu | Layer::Sigmoid | Layer::Tanh | Layer::Softmax => cur,
        };
        layers.push(LayerShape { index, kind, out });
        cur = out;
    }
    Ok(ShapeReport {
        input: (c0, h0, w0),
        layers,
    })
}
