//! Implementations behind the subcommands: script execution, model
//! translation, the train and predict pipelines, and gradient checking.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mml::dsl::{self, Env, InterpConfig, Session, Value};
use mml::matrix::{io as mio, Matrix};
use mml::nn::gradcheck::{
    check_layer, layer_names, max_rel_error, numerical_grad, CLI_TOLERANCE, FD_STEP,
};
use mml::nn::layers::cross_entropy_forward;
use mml::plan::{
    estimate_memory, execute_data_parallel_batch, execute_parfor_scoring, execute_single_node,
    select_plan, DataDims, ExecutionPlan, ParamSet, PlanConfig, PlanHint,
};
use mml::translate::{
    load_weights, read_model_spec, save_weights, translate as translate_spec, validate_model,
    write_artifacts, Artifacts, Layer, ShapeReport, TestAlgo, TrainAlgo, TrainConfig,
};

use crate::{
    parse_binding, script_failure, Failure, GradcheckArgs, Knobs, PredictArgs, RunArgs, TrainArgs,
    TranslateArgs,
};

fn interp_config(knobs: &Knobs) -> InterpConfig {
    InterpConfig {
        seed: knobs.seed,
        sparsity_threshold: knobs.sparsity_threshold,
        ..Default::default()
    }
}

fn train_config(knobs: &Knobs) -> Result<TrainConfig, Failure> {
    let cfg = TrainConfig {
        train_algo: knobs.train_algo,
        test_algo: knobs.test_algo,
        batch_size: knobs.batch_size,
        epochs: knobs.epochs,
        num_iter: knobs.num_iter,
        seed: knobs.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn plan_config(knobs: &Knobs) -> PlanConfig {
    PlanConfig {
        memory_budget_bytes: knobs.budget,
        max_workers: knobs.workers,
    }
}

/// Reads every NAME=PATH input binding into a matrix.
fn read_inputs(raw: &[String]) -> Result<Vec<(String, Matrix)>, Failure> {
    raw.iter()
        .map(|r| {
            let (name, path) = parse_binding(r)?;
            let m = mio::read_matrix(&path)
                .map_err(|e| Failure::Validation(format!("input {name}: {e}")))?;
            Ok((name, m))
        })
        .collect()
}

/// Pulls one named binding out of the list, or says which flag is missing.
fn take_input(
    inputs: &mut Vec<(String, Matrix)>,
    name: &str,
    cmd: &str,
) -> Result<Matrix, Failure> {
    match inputs.iter().position(|(n, _)| n == name) {
        Some(i) => Ok(inputs.remove(i).1),
        None => Err(Failure::Usage(format!("{cmd} needs --input {name}=PATH"))),
    }
}

fn reject_extra_inputs(inputs: &[(String, Matrix)], expected: &str) -> Result<(), Failure> {
    match inputs.first() {
        None => Ok(()),
        Some((name, _)) => Err(Failure::Usage(format!(
            "unexpected input binding {name:?}; this command reads only {expected}"
        ))),
    }
}

fn check_input_width(x: &Matrix, report: &ShapeReport) -> Result<(), Failure> {
    if x.cols() != report.input_width() {
        return Err(Failure::Validation(format!(
            "X has {} columns but the model expects {}",
            x.cols(),
            report.input_width()
        )));
    }
    Ok(())
}

/// Runs the generated prediction function once, sequentially.
fn forward(
    artifacts: &Artifacts,
    params: &ParamSet,
    x: &Matrix,
    cfg: &InterpConfig,
) -> Result<Matrix, Failure> {
    let prog = dsl::parse(&artifacts.predict_script).map_err(script_failure)?;
    let resolved = dsl::resolve(&prog, None).map_err(script_failure)?;
    let mut session = Session::new(resolved, cfg.clone());
    let mut args = Vec::with_capacity(params.len() + 1);
    args.push(Value::Matrix(x.clone()));
    args.extend(params.iter().map(|(_, m)| Value::Matrix(m.clone())));
    let mut rets = session
        .call(&artifacts.manifest.functions.predict, args)
        .map_err(script_failure)?;
    match (rets.pop(), rets.is_empty()) {
        (Some(Value::Matrix(m)), true) => Ok(m),
        _ => Err(Failure::Runtime(
            "prediction function did not return a single matrix".to_string(),
        )),
    }
}

pub fn run(args: RunArgs) -> Result<(), Failure> {
    let knobs = args.knobs.resolve()?;
    let outputs: Vec<(String, PathBuf)> = args
        .outputs
        .iter()
        .map(|r| parse_binding(r))
        .collect::<Result<_, _>>()?;
    let mut env = Env::new();
    for (name, matrix) in read_inputs(&args.inputs)? {
        env.insert(name, Value::Matrix(matrix));
    }
    let final_env =
        dsl::interpret_file(&args.script, env, &interp_config(&knobs)).map_err(script_failure)?;
    for (name, path) in &outputs {
        match final_env.get(name) {
            Some(Value::Matrix(m)) => mio::write_matrix(path, m)
                .map_err(|e| Failure::Validation(format!("output {name}: {e}")))?,
            Some(v) => {
                return Err(Failure::Validation(format!(
                    "output {name} is {}, expected a matrix",
                    v.kind_name()
                )))
            }
            None => {
                return Err(Failure::Validation(format!(
                    "output {name} was never assigned by the script"
                )))
            }
        }
    }
    Ok(())
}

pub fn translate(args: TranslateArgs) -> Result<(), Failure> {
    let knobs = args.knobs.resolve()?;
    let spec = read_model_spec(&args.model)?;
    let cfg = train_config(&knobs)?;
    let artifacts = translate_spec(&spec, &cfg)?;
    write_artifacts(&artifacts, &args.out_dir)?;
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let knobs = args.knobs.resolve()?;
    let spec = read_model_spec(&args.model)?;
    let cfg = train_config(&knobs)?;
    let mut inputs = read_inputs(&args.inputs)?;
    let x = take_input(&mut inputs, "X", "train")?;
    let y = take_input(&mut inputs, "Y", "train")?;
    reject_extra_inputs(&inputs, "X and Y")?;

    let report = validate_model(&spec)?;
    check_input_width(&x, &report)?;
    if y.cols() != report.output_width() {
        return Err(Failure::Validation(format!(
            "Y has {} columns but the model produces {}",
            y.cols(),
            report.output_width()
        )));
    }
    if x.rows() != y.rows() {
        return Err(Failure::Validation(format!(
            "X has {} rows but Y has {}",
            x.rows(),
            y.rows()
        )));
    }

    let artifacts = translate_spec(&spec, &cfg)?;
    write_artifacts(&artifacts, &args.out_dir)?;

    let dims = DataDims {
        rows: x.rows(),
        x_cols: x.cols(),
        y_cols: y.cols(),
        x_nnz: Some(x.nnz() as u64),
    };
    let batch = match cfg.train_algo {
        TrainAlgo::Minibatch => cfg.batch_size,
        TrainAlgo::Batch => x.rows(),
    };
    let estimate = estimate_memory(&spec, &dims, batch)?;
    let plan = select_plan(&estimate, &plan_config(&knobs), PlanHint::Train)?;
    let icfg = interp_config(&knobs);
    let params = match &plan {
        ExecutionPlan::SingleNode => {
            println!("plan: single-node");
            execute_single_node(&artifacts.train_script, &artifacts.manifest, &x, &y, &icfg)?
        }
        ExecutionPlan::DataParallelBatch { partitions } => {
            println!("plan: data-parallel batch training over {partitions} partitions");
            execute_data_parallel_batch(
                &artifacts.grad_script,
                &artifacts.manifest,
                &x,
                &y,
                *partitions,
                &icfg,
            )?
        }
        ExecutionPlan::ParForScoring { .. } => {
            return Err(Failure::Runtime(
                "planner chose a scoring plan for a training job".to_string(),
            ))
        }
    };
    save_weights(&params, &args.out_dir)?;

    let probs = forward(&artifacts, &params, &x, &icfg)?;
    let loss = cross_entropy_forward(&probs, &y)?;
    println!("final loss: {loss}");
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<(), Failure> {
    let knobs = args.knobs.resolve()?;
    let spec = read_model_spec(&args.model)?;
    let cfg = train_config(&knobs)?;
    let mut inputs = read_inputs(&args.inputs)?;
    let x = take_input(&mut inputs, "X", "predict")?;
    reject_extra_inputs(&inputs, "X")?;
    let outputs: Vec<(String, PathBuf)> = args
        .outputs
        .iter()
        .map(|r| parse_binding(r))
        .collect::<Result<_, _>>()?;
    if outputs.is_empty() {
        return Err(Failure::Usage(
            "predict needs --output probs=PATH".to_string(),
        ));
    }
    if let Some((name, _)) = outputs.iter().find(|(n, _)| n != "probs") {
        return Err(Failure::Usage(format!(
            "unknown output binding {name:?}; predict writes probs"
        )));
    }

    let report = validate_model(&spec)?;
    check_input_width(&x, &report)?;
    let manifest_path = match &args.weights {
        Some(p) => p.clone(),
        None => match &spec.weights_manifest {
            Some(rel) => args
                .model
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(rel),
            None => {
                return Err(Failure::Validation(
                    "no weights given: pass --weights FILE or set weights_manifest in the model spec"
                        .to_string(),
                ))
            }
        },
    };
    let params = load_weights(&spec, &manifest_path)?;
    let artifacts = translate_spec(&spec, &cfg)?;

    // Scoring scans the whole dataset, so the plan is sized to it; scripts
    // with an internal minibatch loop only tighten that bound.
    let dims = DataDims {
        rows: x.rows(),
        x_cols: x.cols(),
        y_cols: 0,
        x_nnz: Some(x.nnz() as u64),
    };
    let estimate = estimate_memory(&spec, &dims, x.rows())?;
    let hint = match cfg.test_algo {
        TestAlgo::Allreduce => PlanHint::ScoreAllreduce,
        _ => PlanHint::Score,
    };
    let plan = select_plan(&estimate, &plan_config(&knobs), hint)?;
    let icfg = interp_config(&knobs);
    let probs = match &plan {
        ExecutionPlan::SingleNode => {
            println!("plan: single-node");
            forward(&artifacts, &params, &x, &icfg)?
        }
        ExecutionPlan::ParForScoring {
            workers,
            row_partitions,
        } => {
            println!("plan: parallel scoring with {workers} workers");
            execute_parfor_scoring(
                &artifacts.predict_script,
                &artifacts.manifest,
                &params,
                &x,
                *workers,
                row_partitions,
                &icfg,
            )?
        }
        ExecutionPlan::DataParallelBatch { .. } => {
            return Err(Failure::Runtime(
                "planner chose a training plan for a scoring job".to_string(),
            ))
        }
    };
    for (name, path) in &outputs {
        mio::write_matrix(path, &probs)
            .map_err(|e| Failure::Validation(format!("output {name}: {e}")))?;
    }
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let knobs = args.knobs.resolve()?;
    let target = args.target.as_str();
    let reports: Vec<(String, f64)> = if target.ends_with(".json") || Path::new(target).is_file() {
        model_gradcheck(Path::new(target), &knobs)?
    } else if layer_names().contains(&target) {
        check_layer(target, knobs.seed)?
            .into_iter()
            .map(|r| (format!("{} {}", r.layer, r.param), r.max_rel))
            .collect()
    } else {
        return Err(Failure::Validation(format!(
            "unknown gradcheck target {target:?}: expected one of {}, or a model spec JSON file",
            layer_names().join(", ")
        )));
    };
    let mut worst = 0.0f64;
    for (name, rel) in &reports {
        println!("{name}: max rel err {rel:.3e}");
        worst = worst.max(*rel);
    }
    if worst > CLI_TOLERANCE {
        return Err(Failure::Runtime(format!(
            "gradient check failed: {worst:.3e} is above {CLI_TOLERANCE:e}"
        )));
    }
    Ok(())
}

fn as_matrix(v: &Value, what: &str) -> Result<Matrix, Failure> {
    match v {
        Value::Matrix(m) => Ok(m.clone()),
        other => Err(Failure::Runtime(format!(
            "{what} is {}, expected a matrix",
            other.kind_name()
        ))),
    }
}

/// Checks a whole model's analytic gradients, as produced by its generated
/// gradient script, against central differences of its generated forward
/// pass, one report per trainable parameter.
fn model_gradcheck(path: &Path, knobs: &Knobs) -> Result<Vec<(String, f64)>, Failure> {
    let spec = read_model_spec(path)?;
    if spec
        .layers
        .iter()
        .any(|l| matches!(l, Layer::Dropout { .. }))
    {
        return Err(Failure::Validation(
            "dropout draws a fresh mask per pass so finite differences cannot see a stable \
             function; remove dropout layers before gradient-checking"
                .to_string(),
        ));
    }
    let report = validate_model(&spec)?;
    let (x, y) = gradcheck_data(&report, knobs.seed);
    let n = x.rows();
    let cfg = TrainConfig {
        train_algo: TrainAlgo::Batch,
        test_algo: TestAlgo::Batch,
        batch_size: n,
        epochs: Some(1),
        num_iter: None,
        seed: knobs.seed,
    };
    let artifacts = translate_spec(&spec, &cfg)?;
    let icfg = interp_config(knobs);

    let grad_prog = dsl::parse(&artifacts.grad_script).map_err(script_failure)?;
    let grad_resolved = dsl::resolve(&grad_prog, None).map_err(script_failure)?;
    let mut grad_sess = Session::new(grad_resolved, icfg.clone());
    let init = grad_sess
        .call(
            &artifacts.manifest.functions.init_params,
            vec![Value::Matrix(x.clone()), Value::Matrix(y.clone())],
        )
        .map_err(script_failure)?;
    let mut grad_args = vec![
        Value::Matrix(x.clone()),
        Value::Matrix(y.clone()),
        Value::Scalar(n as f64),
        Value::Scalar(1.0),
    ];
    grad_args.extend(init.iter().cloned());
    let grads = grad_sess
        .call(&artifacts.manifest.functions.gradients, grad_args)
        .map_err(script_failure)?;
    let names = &artifacts.manifest.params;
    if grads.len() != names.len() || init.len() != names.len() {
        return Err(Failure::Runtime(format!(
            "gradient script returned {} values for {} parameters",
            grads.len(),
            names.len()
        )));
    }

    let predict_prog = dsl::parse(&artifacts.predict_script).map_err(script_failure)?;
    let predict_resolved = dsl::resolve(&predict_prog, None).map_err(script_failure)?;
    let mut predict_sess = Session::new(predict_resolved, icfg);
    let mut loss_of = |params: Vec<Value>| -> Result<f64, Failure> {
        let mut call_args = Vec::with_capacity(params.len() + 1);
        call_args.push(Value::Matrix(x.clone()));
        call_args.extend(params);
        let mut rets = predict_sess
            .call(&artifacts.manifest.functions.predict, call_args)
            .map_err(script_failure)?;
        match (rets.pop(), rets.is_empty()) {
            (Some(Value::Matrix(probs)), true) => Ok(cross_entropy_forward(&probs, &y)?),
            _ => Err(Failure::Runtime(
                "prediction function did not return a single matrix".to_string(),
            )),
        }
    };

    let mut out = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let analytic = as_matrix(&grads[i], &format!("gradient of {name}"))?;
        let at = as_matrix(&init[i], &format!("parameter {name}"))?;
        let mut first_err: Option<Failure> = None;
        let numeric = numerical_grad(&at, FD_STEP, |candidate| {
            if first_err.is_some() {
                return 0.0;
            }
            let mut params = init.clone();
            params[i] = Value::Matrix(candidate.clone());
            match loss_of(params) {
                Ok(l) => l,
                Err(e) => {
                    first_err = Some(e);
                    0.0
                }
            }
        });
        if let Some(e) = first_err {
            return Err(e);
        }
        out.push((name.clone(), max_rel_error(&analytic, &numeric)));
    }
    Ok(out)
}

/// Small seeded dataset matching the model's input and output widths.
/// Feature values are pushed away from zero so kinked layers keep stable
/// activation signs under the finite-difference step.
fn gradcheck_data(report: &ShapeReport, seed: u64) -> (Matrix, Matrix) {
    let n = 4usize;
    let (d, k) = (report.input_width(), report.output_width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xdata: Vec<f64> = (0..n * d)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v >= 0.0 {
                v + 0.2
            } else {
                v - 0.2
            }
        })
        .collect();
    let x = Matrix::dense(n, d, xdata).expect("positive dims");
    let mut ydata = vec![0.0; n * k];
    for r in 0..n {
        ydata[r * k + rng.random_range(0..k)] = 1.0;
    }
    let y = Matrix::dense(n, k, ydata).expect("positive dims");
    (x, y)
}
