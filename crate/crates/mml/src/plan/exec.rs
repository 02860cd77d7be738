//! The three executors behind an `ExecutionPlan`.
//!
//! Cluster execution is simulated with in-process worker threads over row
//! partitions. Workers get immutable inputs and their own interpreter
//! sessions; a single coordinator performs every reduction and optimizer
//! update, in a fixed order, so parallel runs reproduce sequential results
//! exactly.

use std::thread;

use crate::dsl::{parse, resolve, Env, InterpConfig, ResolvedProgram, Session, Value};
use crate::matrix::{ElemOp, Matrix};
use crate::translate::{PlanManifest, TrainAlgo};

use super::{driver_err, partition_rows, PlanError, RowRange};

/// Named parameter matrices, in manifest order.
pub type ParamSet = Vec<(String, Matrix)>;

fn load(script: &str) -> Result<ResolvedProgram, PlanError> {
    let prog = parse(script)?;
    Ok(resolve(&prog, None)?)
}

fn as_matrix(v: Value, what: &str) -> Result<Matrix, PlanError> {
    match v {
        Value::Matrix(m) => Ok(m),
        other => Err(driver_err(format!(
            "{what} produced a {} where a matrix was expected",
            other.kind_name()
        ))),
    }
}

fn collect_params(env: &Env, names: &[String], fun: &str) -> Result<ParamSet, PlanError> {
    names
        .iter()
        .map(|n| match env.get(n) {
            Some(Value::Matrix(m)) => Ok((n.clone(), m.clone())),
            Some(other) => Err(driver_err(format!(
                "{fun} left parameter {n} as a {}, not a matrix",
                other.kind_name()
            ))),
            None => Err(driver_err(format!("{fun} never assigned parameter {n}"))),
        })
        .collect()
}

/// The row range each optimizer update consumes, in update order. Batch
/// training repeats the full range; minibatch training walks fixed-size
/// slices, wrapping around when the iteration count outruns one pass.
pub fn update_schedule(manifest: &PlanManifest, n_rows: usize) -> Result<Vec<RowRange>, PlanError> {
    if n_rows == 0 {
        return Err(driver_err("the dataset has no rows"));
    }
    let nope = || driver_err("manifest sets neither epochs nor num_iter");
    match manifest.train_algo {
        TrainAlgo::Batch => {
            let iters = manifest.num_iter.or(manifest.epochs).ok_or_else(nope)?;
            Ok(vec![RowRange { start: 1, end: n_rows }; iters])
        }
        TrainAlgo::Minibatch => {
            let b = manifest.batch_size.max(1);
            let per_epoch = n_rows.div_ceil(b);
            let total = match (manifest.num_iter, manifest.epochs) {
                (Some(n), _) => n,
                (None, Some(e)) => e * per_epoch,
                (None, None) => return Err(nope()),
            };
            Ok((0..total)
                .map(|i| {
                    let start = (i % per_epoch) * b + 1;
                    RowRange {
                        start,
                        end: (start + b - 1).min(n_rows),
                    }
                })
                .collect())
        }
    }
}

/// Runs the whole training script in this thread and returns the trained
/// parameters named by the manifest.
pub fn execute_single_node(
    train_script: &str,
    manifest: &PlanManifest,
    x: &Matrix,
    y: &Matrix,
    icfg: &InterpConfig,
) -> Result<ParamSet, PlanError> {
    let resolved = load(train_script)?;
    let mut session = Session::new(resolved, icfg.clone());
    let (_, env) = session.call_capture(
        &manifest.functions.train,
        vec![Value::Matrix(x.clone()), Value::Matrix(y.clone())],
    )?;
    collect_params(&env, &manifest.params, &manifest.functions.train)
}

/// Trains by splitting each update's batch over `partitions` worker
/// threads. Workers compute per-sample gradients on their row ranges; the
/// coordinator folds them in global row order (zero seed, left to right)
/// and applies one optimizer update, so the result matches sequential
/// training bit for bit whenever per-sample work is order-independent.
pub fn execute_data_parallel_batch(
    grad_script: &str,
    manifest: &PlanManifest,
    x: &Matrix,
    y: &Matrix,
    partitions: usize,
    icfg: &InterpConfig,
) -> Result<ParamSet, PlanError> {
    if partitions == 0 {
        return Err(driver_err("partition count must be at least 1"));
    }
    let resolved = load(grad_script)?;
    let mut driver = Session::new(resolved.clone(), icfg.clone());
    let funs = &manifest.functions;

    let mut params = driver.call(
        &funs.init_params,
        vec![Value::Matrix(x.clone()), Value::Matrix(y.clone())],
    )?;
    if params.len() != manifest.params.len() {
        return Err(driver_err(format!(
            "{} returned {} values for {} parameters",
            funs.init_params,
            params.len(),
            manifest.params.len()
        )));
    }
    let mut state = match &funs.init_state {
        Some(f) => driver.call(f, params.clone())?,
        None => Vec::new(),
    };
    if state.len() != manifest.state.len() {
        return Err(driver_err(format!(
            "optimizer state holds {} values, manifest names {}",
            state.len(),
            manifest.state.len()
        )));
    }

    for (ord, batch) in update_schedule(manifest, x.rows())?.iter().enumerate() {
        let t = (ord + 1) as f64;
        let m = batch.len();
        // Worker ranges are offsets into this update's batch.
        let ranges: Vec<RowRange> = partition_rows(m, partitions.min(m))
            .into_iter()
            .map(|r| RowRange {
                start: r.start + batch.start - 1,
                end: r.end + batch.start - 1,
            })
            .collect();

        let per_sample = run_partitions(&ranges, |worker| {
            let mut session = Session::new(resolved.clone(), icfg.clone());
            let range = ranges[worker];
            let mut rows = Vec::with_capacity(range.len());
            for r in range.start..=range.end {
                let xr = x.slice(Some((r, r)), None)?;
                let yr = y.slice(Some((r, r)), None)?;
                let mut args = vec![
                    Value::Matrix(xr),
                    Value::Matrix(yr),
                    Value::Scalar(m as f64),
                    Value::Scalar(t),
                ];
                args.extend(params.iter().cloned());
                rows.push(session.call(&funs.gradients, args)?);
            }
            Ok(rows)
        })?;

        // Fixed-order reduction: accumulate every sample's gradients in
        // global row order, starting from zeros.
        let mut grads: Vec<Matrix> = Vec::new();
        for sample in per_sample.into_iter().flatten() {
            if sample.len() != params.len() {
                return Err(driver_err(format!(
                    "{} returned {} gradients for {} parameters",
                    funs.gradients,
                    sample.len(),
                    params.len()
                )));
            }
            if grads.is_empty() {
                grads = sample
                    .iter()
                    .map(|v| match v {
                        Value::Matrix(g) => Ok(Matrix::zeros(g.rows(), g.cols())),
                        other => Err(driver_err(format!(
                            "{} produced a {} where a matrix was expected",
                            funs.gradients,
                            other.kind_name()
                        ))),
                    })
                    .collect::<Result<_, _>>()?;
            }
            for (acc, g) in grads.iter_mut().zip(&sample) {
                let g = match g {
                    Value::Matrix(g) => g,
                    other => {
                        return Err(driver_err(format!(
                            "{} produced a {} where a matrix was expected",
                            funs.gradients,
                            other.kind_name()
                        )))
                    }
                };
                *acc = acc.elementwise(g, ElemOp::Add)?;
            }
        }

        let mut args = params;
        args.extend(grads.into_iter().map(Value::Matrix));
        args.append(&mut state);
        args.push(Value::Scalar(t));
        let mut rets = driver.call(&funs.update_params, args)?;
        if rets.len() != manifest.params.len() + manifest.state.len() {
            return Err(driver_err(format!(
                "{} returned {} values for {} parameters and {} state entries",
                funs.update_params,
                rets.len(),
                manifest.params.len(),
                manifest.state.len()
            )));
        }
        state = rets.split_off(manifest.params.len());
        params = rets;
    }

    manifest
        .params
        .iter()
        .zip(params)
        .map(|(n, v)| Ok((n.clone(), as_matrix(v, &funs.update_params)?)))
        .collect()
}

/// Scores row partitions on parallel workers, each running the prediction
/// function on its contiguous slice with a read-only copy of the weights,
/// and concatenates the outputs in row order.
pub fn execute_parfor_scoring(
    predict_script: &str,
    manifest: &PlanManifest,
    params: &ParamSet,
    x: &Matrix,
    workers: usize,
    row_partitions: &[RowRange],
    icfg: &InterpConfig,
) -> Result<Matrix, PlanError> {
    let got: Vec<&String> = params.iter().map(|(n, _)| n).collect();
    if !got.iter().copied().eq(manifest.params.iter()) {
        return Err(driver_err(format!(
            "parameters {:?} do not match the manifest's {:?}",
            got, manifest.params
        )));
    }
    check_cover(row_partitions, x.rows())?;
    let resolved = load(predict_script)?;
    let args: Vec<Value> = params
        .iter()
        .map(|(_, m)| Value::Matrix(m.clone()))
        .collect();
    let workers = workers.clamp(1, row_partitions.len());

    // Partition i runs on worker i mod workers; each worker keeps one
    // session across its partitions and works them in ascending order.
    let mut parts: Vec<Option<Matrix>> = vec![None; row_partitions.len()];
    let results = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let args = &args;
                let resolved = &resolved;
                let funs = &manifest.functions;
                scope.spawn(move || -> Result<Vec<(usize, Matrix)>, (usize, PlanError)> {
                    let mut session = Session::new(resolved.clone(), icfg.clone());
                    let mut out = Vec::new();
                    for (i, range) in row_partitions.iter().enumerate() {
                        if i % workers != w {
                            continue;
                        }
                        let mut run = || -> Result<Matrix, PlanError> {
                            let xp = x.slice(Some((range.start, range.end)), None)?;
                            let mut call_args = vec![Value::Matrix(xp)];
                            call_args.extend(args.iter().cloned());
                            let mut rets = session.call(&funs.predict, call_args)?;
                            if rets.len() != 1 {
                                return Err(driver_err(format!(
                                    "{} returned {} values instead of one",
                                    funs.predict,
                                    rets.len()
                                )));
                            }
                            as_matrix(rets.remove(0), &funs.predict)
                        };
                        out.push((i, run().map_err(|e| (i, e))?));
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scoring worker panicked"))
            .collect::<Vec<_>>()
    });

    let mut first_err: Option<(usize, PlanError)> = None;
    for res in results {
        match res {
            Ok(pairs) => {
                for (i, m) in pairs {
                    parts[i] = Some(m);
                }
            }
            Err((i, e)) => match &first_err {
                Some((j, _)) if *j <= i => {}
                _ => first_err = Some((i, e)),
            },
        }
    }
    if let Some((partition, source)) = first_err {
        return Err(PlanError::Worker {
            partition,
            source: Box::new(source),
        });
    }
    let slices: Vec<&Matrix> = parts
        .iter()
        .map(|p| p.as_ref().expect("no error, so every partition reported"))
        .collect();
    Ok(Matrix::concat_rows(&slices)?)
}

/// Runs `work(partition_index)` on one thread per partition and returns the
/// outputs in partition order, or the lowest-indexed failure wrapped as a
/// worker error.
fn run_partitions<T, F>(ranges: &[RowRange], work: F) -> Result<Vec<T>, PlanError>
where
    T: Send,
    F: Fn(usize) -> Result<T, PlanError> + Sync,
{
    let work = &work;
    let results: Vec<Result<T, PlanError>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..ranges.len())
            .map(|i| scope.spawn(move || work(i)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(results.len());
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => out.push(v),
            Err(e) => {
                return Err(PlanError::Worker {
                    partition: i,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

fn check_cover(partitions: &[RowRange], rows: usize) -> Result<(), PlanError> {
    let bad = || {
        driver_err(format!(
            "row partitions must be contiguous, nonempty, and cover rows 1 to {rows}"
        ))
    };
    if partitions.is_empty() {
        return Err(bad());
    }
    let mut next = 1;
    for p in partitions {
        if p.start != next || p.is_empty() {
            return Err(bad());
        }
        next = p.end + 1;
    }
    if next != rows + 1 {
        return Err(bad());
    }
    Ok(())
}
