//! Script generation. A validated model plus a training configuration turns
//! into three scripts and a manifest:
//!
//! - a training script defining `train(X, Y)` that runs the whole loop;
//! - a gradient script defining `init_params`, `init_state` (stateful
//!   optimizers only), `gradients`, and `update_params`, the pieces the
//!   partitioned executor drives itself;
//! - a prediction script defining `predict(X, params...)`;
//! - a JSON manifest naming the parameters, state, functions, and files so
//!   the planner and CLI can wire everything together.
//!
//! Scripts are built as syntax trees and rendered with the canonical
//! printer, so generation is deterministic and the output always parses.

use serde::{Deserialize, Serialize};

use crate::dsl::ast::{
    pretty_print, BinOp, Expr, ExprKind, LValue, Param, ParamKind, RangeSel, Stmt, StmtKind,
};
use crate::dsl::Program;

use super::model::{
    validate_model, Layer, ModelSpec, Optimizer, ShapeReport, TestAlgo, TrainAlgo, TrainConfig,
};
use super::TranslateError;

fn ex(kind: ExprKind) -> Expr {
    Expr { line: 0, kind }
}

fn num(v: f64) -> Expr {
    ex(ExprKind::Num(v))
}

fn int(v: usize) -> Expr {
    num(v as f64)
}

fn var(name: &str) -> Expr {
    ex(ExprKind::Var(name.to_string()))
}

fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
    ex(ExprKind::Binary {
        op,
        lhs: Box::new(lhs),
        rhs: Box::new(rhs),
    })
}

fn call(name: &str, args: Vec<Expr>) -> Expr {
    ex(ExprKind::Call {
        namespace: None,
        name: name.to_string(),
        args,
    })
}

fn nscall(ns: &str, name: &str, args: Vec<Expr>) -> Expr {
    ex(ExprKind::Call {
        namespace: Some(ns.to_string()),
        name: name.to_string(),
        args,
    })
}

/// `base[lo:hi,]`
fn row_range(base: &str, lo: Expr, hi: Expr) -> Expr {
    ex(ExprKind::Index {
        base: base.to_string(),
        rows: Some(RangeSel {
            lo: Box::new(lo),
            hi: Some(Box::new(hi)),
        }),
        cols: None,
    })
}

fn st(kind: StmtKind) -> Stmt {
    Stmt { line: 0, kind }
}

fn assign(name: &str, value: Expr) -> Stmt {
    st(StmtKind::Assign {
        target: LValue::Var(name.to_string()),
        value,
    })
}

/// `name[lo:hi,] = value`
fn assign_rows(name: &str, lo: Expr, hi: Expr, value: Expr) -> Stmt {
    st(StmtKind::Assign {
        target: LValue::Indexed {
            name: name.to_string(),
            rows: Some(RangeSel {
                lo: Box::new(lo),
                hi: Some(Box::new(hi)),
            }),
            cols: None,
        },
        value,
    })
}

fn massign(targets: Vec<String>, value: Expr) -> Stmt {
    st(StmtKind::MultiAssign { targets, value })
}

fn import(path: &str, alias: &str) -> Stmt {
    st(StmtKind::Import {
        path: path.to_string(),
        alias: alias.to_string(),
    })
}

fn for_in(v: &str, lo: Expr, hi: Expr, body: Vec<Stmt>) -> Stmt {
    st(StmtKind::For {
        var: v.to_string(),
        lo,
        hi,
        body,
    })
}

fn fundef(name: &str, params: Vec<Param>, returns: Vec<Param>, body: Vec<Stmt>) -> Stmt {
    st(StmtKind::FunDef {
        name: name.to_string(),
        params,
        returns,
        body,
    })
}

fn mpar(name: &str) -> Param {
    Param {
        name: name.to_string(),
        kind: ParamKind::Matrix,
    }
}

fn dpar(name: &str) -> Param {
    Param {
        name: name.to_string(),
        kind: ParamKind::Double,
    }
}

/// Names of one trainable layer's parameter pair.
#[derive(Debug, Clone)]
struct ParamNames {
    w: String,
    b: String,
}

/// One model layer with everything codegen needs resolved.
struct Slot<'a> {
    layer: &'a Layer,
    /// Shape entering the layer, as (C, H, W).
    in_shape: (usize, usize, usize),
    /// Forward output variable in training scripts.
    out_var: String,
    names: Option<ParamNames>,
}

/// One emitted forward step, kept so the backward pass can mirror it.
struct Step {
    slot: usize,
    in_var: String,
    out_var: String,
}

/// Fixed file names for the generated artifacts.
pub const TRAIN_SCRIPT_FILE: &str = "train.dml";
pub const GRAD_SCRIPT_FILE: &str = "grad.dml";
pub const PREDICT_SCRIPT_FILE: &str = "predict.dml";
pub const MANIFEST_FILE: &str = "plan.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptSet {
    pub train: String,
    pub gradients: String,
    pub predict: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSet {
    pub train: String,
    pub init_params: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_state: Option<String>,
    pub gradients: String,
    pub update_params: String,
    pub predict: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimsInfo {
    pub input_width: usize,
    pub output_width: usize,
}

/// Sidecar manifest tying the generated scripts together: which files hold
/// which functions, what the trainable parameters and optimizer state are
/// called, and the training schedule the executor must reproduce. Exactly
/// one of `epochs` and `num_iter` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanManifest {
    pub train_algo: TrainAlgo,
    pub test_algo: TestAlgo,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_iter: Option<usize>,
    pub seed: u64,
    pub params: Vec<String>,
    pub state: Vec<String>,
    pub functions: FunctionSet,
    pub scripts: ScriptSet,
    pub dims: DimsInfo,
}

impl PlanManifest {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str, origin: &str) -> Result<PlanManifest, TranslateError> {
        serde_json::from_str(text).map_err(|e| TranslateError::Manifest {
            path: origin.to_string(),
            msg: e.to_string(),
        })
    }
}

/// Everything the translator produces for one model + config.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub train_script: String,
    pub grad_script: String,
    pub predict_script: String,
    pub manifest: PlanManifest,
}

struct Codegen<'a> {
    spec: &'a ModelSpec,
    cfg: &'a TrainConfig,
    slots: Vec<Slot<'a>>,
    /// The canonical single dense classifier reads its dimensions from the
    /// data (`D = ncol(X)`, `K = ncol(Y)`); every other model bakes the
    /// validated shape chain in as literals.
    runtime_dims: bool,
    report: ShapeReport,
}

impl<'a> Codegen<'a> {
    fn new(spec: &'a ModelSpec, cfg: &'a TrainConfig) -> Result<Codegen<'a>, TranslateError> {
        cfg.validate()?;
        let report = validate_model(spec)?;
        let trainable = spec.layers.iter().filter(|l| l.is_trainable()).count();
        if trainable == 0 {
            return Err(TranslateError::Model {
                msg: "model has no trainable parameters".to_string(),
            });
        }
        let last = spec.layers.len();
        let mut slots = Vec::with_capacity(last);
        let mut seen_trainable = 0usize;
        for (pos, layer) in spec.layers.iter().enumerate() {
            let index = pos + 1;
            let names = if layer.is_trainable() {
                seen_trainable += 1;
                Some(if trainable == 1 {
                    ParamNames {
                        w: "W".to_string(),
                        b: "b".to_string(),
                    }
                } else {
                    ParamNames {
                        w: format!("W{seen_trainable}"),
                        b: format!("b{seen_trainable}"),
                    }
                })
            } else {
                None
            };
            let out_var = if matches!(layer, Layer::Softmax) && index == last {
                "probs".to_string()
            } else if index + 1 == last && matches!(spec.layers[last - 1], Layer::Softmax) {
                "scores".to_string()
            } else {
                format!("h{index}")
            };
            slots.push(Slot {
                layer,
                in_shape: report.shape_before(index),
                out_var,
                names,
            });
        }
        let runtime_dims =
            matches!(spec.layers[..], [Layer::Dense { .. }, Layer::Softmax]);
        Ok(Codegen {
            spec,
            cfg,
            slots,
            runtime_dims,
            report,
        })
    }

    fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for slot in &self.slots {
            if let Some(n) = &slot.names {
                out.push(n.w.clone());
                out.push(n.b.clone());
            }
        }
        out
    }

    /// Optimizer state variables, in the order `update_params` takes them:
    /// per parameter, in the optimizer's own argument order.
    fn state_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for p in self.param_names() {
            match self.spec.optimizer {
                Optimizer::Sgd { .. } => {}
                Optimizer::SgdMomentum { .. } | Optimizer::SgdNesterov { .. } => {
                    out.push(format!("v{p}"));
                }
                Optimizer::Adagrad { .. } | Optimizer::Rmsprop { .. } => {
                    out.push(format!("c{p}"));
                }
                Optimizer::Adam { .. } => {
                    out.push(format!("m{p}"));
                    out.push(format!("v{p}"));
                }
            }
        }
        out
    }

    fn has_dropout(&self) -> bool {
        self.spec
            .layers
            .iter()
            .any(|l| matches!(l, Layer::Dropout { .. }))
    }

    /// Library imports: the layer namespaces in alphabetical order, then the
    /// optimizer. `ce` adds the loss layer, `dropout` keeps or drops the
    /// dropout namespace (prediction never needs it).
    fn imports(&self, ce: bool, dropout: bool, optimizer: bool) -> Vec<Stmt> {
        let mut aliases = std::collections::BTreeSet::new();
        for layer in &self.spec.layers {
            let alias = match layer {
                Layer::Dense { .. } => "affine",
                Layer::Conv2d { .. } => "conv2d",
                Layer::Maxpool { .. } => "max_pool2d",
                Layer::Relu => "relu",
                Layer::Sigmoid => "sigmoid",
                Layer::Tanh => "tanh",
                Layer::Softmax => "softmax",
                Layer::Dropout { .. } => {
                    if !dropout {
                        continue;
                    }
                    "dropout"
                }
            };
            aliases.insert(alias);
        }
        if ce {
            aliases.insert("cross_entropy_loss");
        }
        let mut out: Vec<Stmt> = aliases
            .into_iter()
            .map(|a| import(&format!("nn/layers/{a}.dml"), a))
            .collect();
        if optimizer {
            let kind = self.spec.optimizer.kind_name();
            out.push(import(&format!("nn/optim/{kind}.dml"), kind));
        }
        out
    }

    /// `lr = ...` plus any other hyperparameters the optimizer needs.
    fn hyper_stmts(&self, out: &mut Vec<Stmt>) {
        out.push(assign("lr", num(self.spec.optimizer.lr())));
        match self.spec.optimizer {
            Optimizer::Sgd { .. } => {}
            Optimizer::SgdMomentum { mu, .. } | Optimizer::SgdNesterov { mu, .. } => {
                out.push(assign("mu", num(mu)));
            }
            Optimizer::Adagrad { epsilon, .. } => {
                out.push(assign("epsilon", num(epsilon)));
            }
            Optimizer::Rmsprop {
                decay_rate,
                epsilon,
                ..
            } => {
                out.push(assign("decay_rate", num(decay_rate)));
                out.push(assign("epsilon", num(epsilon)));
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
                ..
            } => {
                out.push(assign("beta1", num(beta1)));
                out.push(assign("beta2", num(beta2)));
                out.push(assign("epsilon", num(epsilon)));
            }
        }
    }

    /// Parameter initialization calls, one per trainable layer in model
    /// order. The call order fixes the RNG draw sequence, so it must match
    /// between the training script and `init_params`.
    fn init_stmts(&self, out: &mut Vec<Stmt>) {
        for slot in &self.slots {
            let Some(names) = &slot.names else { continue };
            let targets = vec![names.w.clone(), names.b.clone()];
            match slot.layer {
                Layer::Dense { units } => {
                    let (d, k) = if self.runtime_dims {
                        (var("D"), var("K"))
                    } else {
                        let (c, h, w) = slot.in_shape;
                        (int(c * h * w), int(*units))
                    };
                    out.push(massign(targets, nscall("affine", "init", vec![d, k])));
                }
                Layer::Conv2d {
                    filters, kernel, ..
                } => {
                    let (kh, kw) = kernel.hw();
                    out.push(massign(
                        targets,
                        nscall(
                            "conv2d",
                            "init",
                            vec![int(*filters), int(slot.in_shape.0), int(kh), int(kw)],
                        ),
                    ));
                }
                _ => unreachable!("only dense and conv2d carry parameters"),
            }
        }
    }

    fn state_init_stmts(&self, out: &mut Vec<Stmt>) {
        for slot in &self.slots {
            let Some(names) = &slot.names else { continue };
            for p in [&names.w, &names.b] {
                match self.spec.optimizer {
                    Optimizer::Sgd { .. } => {}
                    Optimizer::SgdMomentum { .. } => {
                        out.push(assign(
                            &format!("v{p}"),
                            nscall("sgd_momentum", "init", vec![var(p)]),
                        ));
                    }
                    Optimizer::SgdNesterov { .. } => {
                        out.push(assign(
                            &format!("v{p}"),
                            nscall("sgd_nesterov", "init", vec![var(p)]),
                        ));
                    }
                    Optimizer::Adagrad { .. } => {
                        out.push(assign(
                            &format!("c{p}"),
                            nscall("adagrad", "init", vec![var(p)]),
                        ));
                    }
                    Optimizer::Rmsprop { .. } => {
                        out.push(assign(
                            &format!("c{p}"),
                            nscall("rmsprop", "init", vec![var(p)]),
                        ));
                    }
                    Optimizer::Adam { .. } => {
                        out.push(massign(
                            vec![format!("m{p}"), format!("v{p}")],
                            nscall("adam", "init", vec![var(p)]),
                        ));
                    }
                }
            }
        }
    }

    /// One optimizer update per parameter, `W` before `b`, layers in order.
    /// Adam reads the step counter from `t`.
    fn update_stmts(&self, out: &mut Vec<Stmt>) {
        for slot in &self.slots {
            let Some(names) = &slot.names else { continue };
            for p in [&names.w, &names.b] {
                let g = format!("d{p}");
                match self.spec.optimizer {
                    Optimizer::Sgd { .. } => {
                        out.push(assign(
                            p,
                            nscall("sgd", "update", vec![var(p), var(&g), var("lr")]),
                        ));
                    }
                    Optimizer::SgdMomentum { .. } => {
                        out.push(massign(
                            vec![p.clone(), format!("v{p}")],
                            nscall(
                                "sgd_momentum",
                                "update",
                                vec![var(p), var(&g), var("lr"), var("mu"), var(&format!("v{p}"))],
                            ),
                        ));
                    }
                    Optimizer::SgdNesterov { .. } => {
                        out.push(massign(
                            vec![p.clone(), format!("v{p}")],
                            nscall(
                                "sgd_nesterov",
                                "update",
                                vec![var(p), var(&g), var("lr"), var("mu"), var(&format!("v{p}"))],
                            ),
                        ));
                    }
                    Optimizer::Adagrad { .. } => {
                        out.push(massign(
                            vec![p.clone(), format!("c{p}")],
                            nscall(
                                "adagrad",
                                "update",
                                vec![
                                    var(p),
                                    var(&g),
                                    var("lr"),
                                    var("epsilon"),
                                    var(&format!("c{p}")),
                                ],
                            ),
                        ));
                    }
                    Optimizer::Rmsprop { .. } => {
                        out.push(massign(
                            vec![p.clone(), format!("c{p}")],
                            nscall(
                                "rmsprop",
                                "update",
                                vec![
                                    var(p),
                                    var(&g),
                                    var("lr"),
                                    var("decay_rate"),
                                    var("epsilon"),
                                    var(&format!("c{p}")),
                                ],
                            ),
                        ));
                    }
                    Optimizer::Adam { .. } => {
                        out.push(massign(
                            vec![p.clone(), format!("m{p}"), format!("v{p}")],
                            nscall(
                                "adam",
                                "update",
                                vec![
                                    var(p),
                                    var(&g),
                                    var("lr"),
                                    var("beta1"),
                                    var("beta2"),
                                    var("epsilon"),
                                    var("t"),
                                    var(&format!("m{p}")),
                                    var(&format!("v{p}")),
                                ],
                            ),
                        ));
                    }
                }
            }
        }
    }

    /// Spatial call tail shared by the conv2d and max_pool2d builtins:
    /// C, Hin, Win, Hf, Wf, stride h, stride w, pad h, pad w.
    fn spatial_args(in_shape: (usize, usize, usize), window: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Vec<Expr> {
        let (c, h, w) = in_shape;
        vec![
            int(c),
            int(h),
            int(w),
            int(window.0),
            int(window.1),
            int(stride.0),
            int(stride.1),
            int(pad.0),
            int(pad.1),
        ]
    }

    /// Appends the forward pass starting from `input`. `seed_base` is the
    /// iteration-ordinal variable dropout seeds add to (training only);
    /// `inference` skips dropout entirely. `final_override` renames the last
    /// layer's output. Returns the emitted steps for the backward pass.
    fn forward_stmts(
        &self,
        out: &mut Vec<Stmt>,
        input: &str,
        seed_base: Option<&str>,
        final_override: Option<&str>,
        inference: bool,
    ) -> Vec<Step> {
        let mut steps = Vec::new();
        let mut cur = input.to_string();
        let last = self.slots.len();
        for (pos, slot) in self.slots.iter().enumerate() {
            let index = pos + 1;
            if inference {
                if let Layer::Dropout { .. } = slot.layer {
                    continue;
                }
            }
            let out_var = match (index == last, final_override) {
                (true, Some(name)) => name.to_string(),
                _ => slot.out_var.clone(),
            };
            match slot.layer {
                Layer::Dense { .. } => {
                    let names = slot.names.as_ref().expect("dense has params");
                    out.push(assign(
                        &out_var,
                        nscall(
                            "affine",
                            "forward",
                            vec![var(&cur), var(&names.w), var(&names.b)],
                        ),
                    ));
                }
                Layer::Conv2d {
                    kernel,
                    stride,
                    pad,
                    ..
                } => {
                    let names = slot.names.as_ref().expect("conv2d has params");
                    let mut args = vec![var(&cur), var(&names.w), var(&names.b)];
                    args.extend(Self::spatial_args(
                        slot.in_shape,
                        kernel.hw(),
                        stride.hw(),
                        pad.hw(),
                    ));
                    out.push(massign(
                        vec![
                            out_var.clone(),
                            format!("{out_var}_H"),
                            format!("{out_var}_W"),
                        ],
                        nscall("conv2d", "forward", args),
                    ));
                }
                Layer::Maxpool {
                    window,
                    stride,
                    pad,
                } => {
                    let mut args = vec![var(&cur)];
                    args.extend(Self::spatial_args(
                        slot.in_shape,
                        window.hw(),
                        stride.unwrap_or(*window).hw(),
                        pad.hw(),
                    ));
                    out.push(massign(
                        vec![
                            out_var.clone(),
                            format!("{out_var}_H"),
                            format!("{out_var}_W"),
                        ],
                        nscall("max_pool2d", "forward", args),
                    ));
                }
                Layer::Relu | Layer::Sigmoid | Layer::Tanh | Layer::Softmax => {
                    let ns = slot.layer.kind_name();
                    out.push(assign(&out_var, nscall(ns, "forward", vec![var(&cur)])));
                }
                Layer::Dropout { keep_p } => {
                    let base = seed_base.expect("training forward needs a seed variable");
                    let offset = self.cfg.seed as f64 + 1000.0 * index as f64;
                    out.push(massign(
                        vec![out_var.clone(), format!("{out_var}_mask")],
                        nscall(
                            "dropout",
                            "forward",
                            vec![
                                var(&cur),
                                num(*keep_p),
                                bin(BinOp::Add, num(offset), var(base)),
                            ],
                        ),
                    ));
                }
            }
            steps.push(Step {
                slot: pos,
                in_var: cur.clone(),
                out_var: out_var.clone(),
            });
            cur = out_var;
        }
        steps
    }

    /// Appends the backward pass mirroring `steps`. The loss gradient either
    /// calls the library (`inline_n` None) or is written out elementwise
    /// with the given total row count variable, which lets a per-sample
    /// caller scale by the full batch size instead of its own row count.
    fn backward_stmts(
        &self,
        out: &mut Vec<Stmt>,
        steps: &[Step],
        labels: &str,
        inline_n: Option<&str>,
    ) {
        let probs = &steps.last().expect("model has layers").out_var;
        let dprobs = format!("d{probs}");
        match inline_n {
            None => out.push(assign(
                &dprobs,
                nscall(
                    "cross_entropy_loss",
                    "backward",
                    vec![var(probs), var(labels)],
                ),
            )),
            Some(n) => {
                // (0 - Y / (probs + 1e-15)) / N, written to match the loss
                // layer's own gradient arithmetic operation for operation.
                let clipped = bin(BinOp::Add, var(probs), num(1e-15));
                let ratio = bin(BinOp::Div, var(labels), clipped);
                let negated = bin(BinOp::Sub, num(0.0), ratio);
                out.push(assign(&dprobs, bin(BinOp::Div, negated, var(n))));
            }
        }
        for step in steps.iter().rev() {
            let slot = &self.slots[step.slot];
            let dout = format!("d{}", step.out_var);
            let din = format!("d{}", step.in_var);
            match slot.layer {
                Layer::Dense { .. } => {
                    let names = slot.names.as_ref().expect("dense has params");
                    out.push(massign(
                        vec![din, format!("d{}", names.w), format!("d{}", names.b)],
                        nscall(
                            "affine",
                            "backward",
                            vec![var(&dout), var(&step.in_var), var(&names.w), var(&names.b)],
                        ),
                    ));
                }
                Layer::Conv2d {
                    kernel,
                    stride,
                    pad,
                    ..
                } => {
                    let names = slot.names.as_ref().expect("conv2d has params");
                    let mut args = vec![
                        var(&dout),
                        var(&format!("{}_H", step.out_var)),
                        var(&format!("{}_W", step.out_var)),
                        var(&step.in_var),
                        var(&names.w),
                        var(&names.b),
                    ];
                    args.extend(Self::spatial_args(
                        slot.in_shape,
                        kernel.hw(),
                        stride.hw(),
                        pad.hw(),
                    ));
                    out.push(massign(
                        vec![din, format!("d{}", names.w), format!("d{}", names.b)],
                        nscall("conv2d", "backward", args),
                    ));
                }
                Layer::Maxpool {
                    window,
                    stride,
                    pad,
                } => {
                    let mut args = vec![
                        var(&dout),
                        var(&format!("{}_H", step.out_var)),
                        var(&format!("{}_W", step.out_var)),
                        var(&step.in_var),
                    ];
                    args.extend(Self::spatial_args(
                        slot.in_shape,
                        window.hw(),
                        stride.unwrap_or(*window).hw(),
                        pad.hw(),
                    ));
                    out.push(assign(&din, nscall("max_pool2d", "backward", args)));
                }
                Layer::Relu | Layer::Sigmoid | Layer::Tanh => {
                    let ns = slot.layer.kind_name();
                    out.push(assign(
                        &din,
                        nscall(ns, "backward", vec![var(&dout), var(&step.in_var)]),
                    ));
                }
                Layer::Softmax => {
                    out.push(assign(
                        &din,
                        nscall("softmax", "backward", vec![var(&dout), var(&step.in_var)]),
                    ));
                }
                Layer::Dropout { keep_p } => {
                    out.push(assign(
                        &din,
                        nscall(
                            "dropout",
                            "backward",
                            vec![
                                var(&dout),
                                var(&step.in_var),
                                num(*keep_p),
                                var(&format!("{}_mask", step.out_var)),
                            ],
                        ),
                    ));
                }
            }
        }
    }

    /// Adam needs the update ordinal; dropout seeds are offset by it.
    fn needs_step_var(&self) -> bool {
        matches!(self.spec.optimizer, Optimizer::Adam { .. }) || self.has_dropout()
    }

    fn train_script(&self) -> String {
        let mut body = Vec::new();
        if self.runtime_dims {
            body.push(assign("D", call("ncol", vec![var("X")])));
            body.push(assign("K", call("ncol", vec![var("Y")])));
        }
        self.hyper_stmts(&mut body);
        match self.cfg.train_algo {
            TrainAlgo::Minibatch => self.minibatch_train_body(&mut body),
            TrainAlgo::Batch => self.batch_train_body(&mut body),
        }
        let mut stmts = self.imports(true, self.has_dropout(), true);
        stmts.push(fundef(
            "train",
            vec![mpar("X"), mpar("Y")],
            Vec::new(),
            body,
        ));
        pretty_print(&Program { stmts })
    }

    fn minibatch_train_body(&self, body: &mut Vec<Stmt>) {
        body.push(assign("batch_size", int(self.cfg.batch_size)));
        // ceil(nrow(X) / batch_size) batches cover every row; the final
        // batch may be short.
        let per_epoch = call(
            "ceil",
            vec![bin(
                BinOp::Div,
                call("nrow", vec![var("X")]),
                var("batch_size"),
            )],
        );
        let epochs = self.cfg.resolved_epochs();
        let iters_var = if self.cfg.num_iter.is_some() {
            "iters_per_epoch"
        } else {
            "num_iter"
        };
        if let Some(total) = self.cfg.num_iter {
            body.push(assign("num_iter", int(total)));
        }
        body.push(assign(iters_var, per_epoch));
        if self.cfg.num_iter.is_none() && epochs > 1 {
            body.push(assign("epochs", int(epochs)));
        }
        self.init_stmts(body);
        self.state_init_stmts(body);

        let mut lb = Vec::new();
        let beg = if self.cfg.num_iter.is_some() {
            // The loop counts total updates; the batch offset wraps per
            // epoch, so iteration order matches the epoch-driven form.
            bin(
                BinOp::Add,
                bin(
                    BinOp::Mul,
                    bin(
                        BinOp::Mod,
                        bin(BinOp::Sub, var("i"), num(1.0)),
                        var("iters_per_epoch"),
                    ),
                    var("batch_size"),
                ),
                num(1.0),
            )
        } else {
            bin(
                BinOp::Add,
                bin(
                    BinOp::Mul,
                    bin(BinOp::Sub, var("i"), num(1.0)),
                    var("batch_size"),
                ),
                num(1.0),
            )
        };
        lb.push(assign("beg", beg));
        lb.push(assign(
            "end",
            call(
                "min",
                vec![
                    bin(
                        BinOp::Sub,
                        bin(BinOp::Add, var("beg"), var("batch_size")),
                        num(1.0),
                    ),
                    call("nrow", vec![var("X")]),
                ],
            ),
        ));
        lb.push(assign("X_batch", row_range("X", var("beg"), var("end"))));
        lb.push(assign("y_batch", row_range("Y", var("beg"), var("end"))));
        if self.needs_step_var() {
            let t = if self.cfg.num_iter.is_none() && epochs > 1 {
                bin(
                    BinOp::Add,
                    bin(BinOp::Mul, bin(BinOp::Sub, var("e"), num(1.0)), var("num_iter")),
                    var("i"),
                )
            } else {
                var("i")
            };
            lb.push(assign("t", t));
        }
        let steps = self.forward_stmts(&mut lb, "X_batch", Some("t"), None, false);
        self.backward_stmts(&mut lb, &steps, "y_batch", None);
        self.update_stmts(&mut lb);

        if self.cfg.num_iter.is_some() {
            body.push(for_in("i", num(1.0), var("num_iter"), lb));
        } else if epochs == 1 {
            body.push(for_in("i", num(1.0), var("num_iter"), lb));
        } else {
            body.push(for_in(
                "e",
                num(1.0),
                var("epochs"),
                vec![for_in("i", num(1.0), var("num_iter"), lb)],
            ));
        }
    }

    fn batch_train_body(&self, body: &mut Vec<Stmt>) {
        // One iteration is one full-dataset update, so epochs and num_iter
        // mean the same thing here.
        let iters = self
            .cfg
            .num_iter
            .unwrap_or_else(|| self.cfg.resolved_epochs());
        body.push(assign("num_iter", int(iters)));
        self.init_stmts(body);
        self.state_init_stmts(body);
        let mut lb = Vec::new();
        if self.needs_step_var() {
            lb.push(assign("t", var("i")));
        }
        let steps = self.forward_stmts(&mut lb, "X", Some("t"), None, false);
        self.backward_stmts(&mut lb, &steps, "Y", None);
        self.update_stmts(&mut lb);
        body.push(for_in("i", num(1.0), var("num_iter"), lb));
    }

    fn grad_script(&self) -> String {
        let params = self.param_names();
        let state = self.state_names();
        let grads: Vec<String> = params.iter().map(|p| format!("d{p}")).collect();
        let mut stmts = self.imports(false, self.has_dropout(), true);

        let mut ib = Vec::new();
        if self.runtime_dims {
            ib.push(assign("D", call("ncol", vec![var("X")])));
            ib.push(assign("K", call("ncol", vec![var("Y")])));
        }
        self.init_stmts(&mut ib);
        stmts.push(fundef(
            "init_params",
            vec![mpar("X"), mpar("Y")],
            params.iter().map(|p| mpar(p)).collect(),
            ib,
        ));

        if !state.is_empty() {
            let mut sb = Vec::new();
            self.state_init_stmts(&mut sb);
            stmts.push(fundef(
                "init_state",
                params.iter().map(|p| mpar(p)).collect(),
                state.iter().map(|s| mpar(s)).collect(),
                sb,
            ));
        }

        let mut gb = Vec::new();
        let steps = self.forward_stmts(&mut gb, "X", Some("iter"), None, false);
        self.backward_stmts(&mut gb, &steps, "Y", Some("N"));
        let mut gparams = vec![mpar("X"), mpar("Y"), dpar("N"), dpar("iter")];
        gparams.extend(params.iter().map(|p| mpar(p)));
        stmts.push(fundef(
            "gradients",
            gparams,
            grads.iter().map(|g| mpar(g)).collect(),
            gb,
        ));

        let mut ub = Vec::new();
        self.hyper_stmts(&mut ub);
        self.update_stmts(&mut ub);
        let mut uparams: Vec<Param> = params.iter().map(|p| mpar(p)).collect();
        uparams.extend(grads.iter().map(|g| mpar(g)));
        uparams.extend(state.iter().map(|s| mpar(s)));
        uparams.push(dpar("t"));
        let mut urets: Vec<Param> = params.iter().map(|p| mpar(p)).collect();
        urets.extend(state.iter().map(|s| mpar(s)));
        stmts.push(fundef("update_params", uparams, urets, ub));

        pretty_print(&Program { stmts })
    }

    fn predict_script(&self) -> String {
        let params = self.param_names();
        let mut stmts = self.imports(false, false, false);
        let mut fparams = vec![mpar("X")];
        fparams.extend(params.iter().map(|p| mpar(p)));
        let body = match self.cfg.test_algo {
            TestAlgo::Batch | TestAlgo::Allreduce => {
                let mut pb = Vec::new();
                self.forward_stmts(&mut pb, "X", None, None, true);
                pb
            }
            TestAlgo::Minibatch => {
                let mut pb = Vec::new();
                pb.push(assign("batch_size", int(self.cfg.batch_size)));
                pb.push(assign(
                    "num_iter",
                    call(
                        "ceil",
                        vec![bin(
                            BinOp::Div,
                            call("nrow", vec![var("X")]),
                            var("batch_size"),
                        )],
                    ),
                ));
                let width = if self.runtime_dims {
                    call("ncol", vec![var("W")])
                } else {
                    int(self.report.output_width())
                };
                pb.push(assign(
                    "probs",
                    call("matrix", vec![num(0.0), call("nrow", vec![var("X")]), width]),
                ));
                let mut lb = Vec::new();
                lb.push(assign(
                    "beg",
                    bin(
                        BinOp::Add,
                        bin(
                            BinOp::Mul,
                            bin(BinOp::Sub, var("i"), num(1.0)),
                            var("batch_size"),
                        ),
                        num(1.0),
                    ),
                ));
                lb.push(assign(
                    "end",
                    call(
                        "min",
                        vec![
                            bin(
                                BinOp::Sub,
                                bin(BinOp::Add, var("beg"), var("batch_size")),
                                num(1.0),
                            ),
                            call("nrow", vec![var("X")]),
                        ],
                    ),
                ));
                lb.push(assign("X_batch", row_range("X", var("beg"), var("end"))));
                self.forward_stmts(&mut lb, "X_batch", None, Some("probs_batch"), true);
                lb.push(assign_rows(
                    "probs",
                    var("beg"),
                    var("end"),
                    var("probs_batch"),
                ));
                pb.push(for_in("i", num(1.0), var("num_iter"), lb));
                pb
            }
        };
        stmts.push(fundef("predict", fparams, vec![mpar("probs")], body));
        pretty_print(&Program { stmts })
    }

    fn manifest(&self) -> PlanManifest {
        let state = self.state_names();
        let (epochs, num_iter) = match self.cfg.train_algo {
            TrainAlgo::Minibatch => match self.cfg.num_iter {
                Some(total) => (None, Some(total)),
                None => (Some(self.cfg.resolved_epochs()), None),
            },
            TrainAlgo::Batch => (
                None,
                Some(
                    self.cfg
                        .num_iter
                        .unwrap_or_else(|| self.cfg.resolved_epochs()),
                ),
            ),
        };
        PlanManifest {
            train_algo: self.cfg.train_algo,
            test_algo: self.cfg.test_algo,
            batch_size: self.cfg.batch_size,
            epochs,
            num_iter,
            seed: self.cfg.seed,
            params: self.param_names(),
            state: state.clone(),
            functions: FunctionSet {
                train: "train".to_string(),
                init_params: "init_params".to_string(),
                init_state: if state.is_empty() {
                    None
                } else {
                    Some("init_state".to_string())
                },
                gradients: "gradients".to_string(),
                update_params: "update_params".to_string(),
                predict: "predict".to_string(),
            },
            scripts: ScriptSet {
                train: TRAIN_SCRIPT_FILE.to_string(),
                gradients: GRAD_SCRIPT_FILE.to_string(),
                predict: PREDICT_SCRIPT_FILE.to_string(),
            },
            dims: DimsInfo {
                input_width: self.report.input_width(),
                output_width: self.report.output_width(),
            },
        }
    }
}

/// Validates the model and generates all artifacts. Output is a pure
/// function of (spec, cfg): identical inputs give byte-identical scripts.
pub fn translate(spec: &ModelSpec, cfg: &TrainConfig) -> Result<Artifacts, TranslateError> {
    let gen = Codegen::new(spec, cfg)?;
    Ok(Artifacts {
        train_script: gen.train_script(),
        grad_script: gen.grad_script(),
        predict_script: gen.predict_script(),
        manifest: gen.manifest(),
    })
}

/// The training script alone.
pub fn generate_training_script(
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<String, TranslateError> {
    Ok(translate(spec, cfg)?.train_script)
}

/// The prediction script plus its execution hint: `Allreduce` asks the
/// planner for parallel scoring over row partitions, anything else runs
/// sequentially.
pub fn generate_prediction_script(
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(String, TestAlgo), TranslateError> {
    let artifacts = translate(spec, cfg)?;
    Ok((artifacts.predict_script, artifacts.manifest.test_algo))
}
