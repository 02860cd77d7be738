//! End-to-end tests of the `mml` binary: exit codes, error wording, file
//! artifacts, and determinism under fixed seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mml::matrix::io::read_matrix;
use mml::translate::PlanManifest;

fn mml() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mml"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command, code: i32) -> String {
    let out = cmd.output().expect("binary runs");
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).expect("fixture write");
    path
}

fn binding(name: &str, path: &Path) -> String {
    format!("{name}={}", path.display())
}

/// 48-row, 4-feature dataset with 3 classes cut by simple linear rules.
fn write_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let mut xs = String::new();
    let mut ys = String::new();
    for i in 0..48 {
        let row: Vec<f64> = (0..4)
            .map(|j| ((i * 7 + j * 13) % 19) as f64 / 19.0 - 0.4)
            .collect();
        let class = if row[0] + row[1] > 0.2 {
            0
        } else if row[2] > 0.0 {
            1
        } else {
            2
        };
        xs.push_str(&format!("{},{},{},{}\n", row[0], row[1], row[2], row[3]));
        ys.push_str(&format!(
            "{},{},{}\n",
            (class == 0) as u8,
            (class == 1) as u8,
            (class == 2) as u8
        ));
    }
    (write(dir, "x.csv", &xs), write(dir, "y.csv", &ys))
}

const DENSE_MODEL: &str = r#"{
  "input_shape": [1, 1, 4],
  "layers": [
    {"kind": "dense", "units": 3},
    {"kind": "softmax"}
  ],
  "loss": "cross_entropy",
  "optimizer": {"kind": "sgd", "lr": 0.05}
}"#;

#[test]
fn run_executes_a_script_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let x = write(dir.path(), "x.csv", "1,2\n3,4\n");
    let w = write(dir.path(), "w.csv", "1,0\n0,1\n");
    let script = write(dir.path(), "prog.dml", "Z = X %*% W\n");
    let z = dir.path().join("z.csv");
    run_ok(mml()
        .arg("run")
        .arg(&script)
        .args(["--input", &binding("X", &x)])
        .args(["--input", &binding("W", &w)])
        .args(["--output", &binding("Z", &z)]));
    let got = read_matrix(&z).unwrap();
    assert_eq!(got.to_dense_vec(), vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn run_names_the_missing_input_binding() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(dir.path(), "prog.dml", "Z = X + 1\n");
    let stderr = run_err(
        mml()
            .arg("run")
            .arg(&script)
            .args(["--input", "X=does_not_exist.csv"]),
        3,
    );
    assert!(stderr.contains("input X"), "stderr: {stderr}");
}

#[test]
fn run_script_failures_carry_the_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(
        dir.path(),
        "prog.dml",
        "a = matrix(1, 2, 2)\nb = a %*% matrix(1, 3, 3)\n",
    );
    let stderr = run_err(mml().arg("run").arg(&script), 4);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn run_rejects_scripts_that_do_not_parse() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(dir.path(), "prog.dml", "x = matrix(1, 2,\n");
    let stderr = run_err(mml().arg("run").arg(&script), 3);
    assert!(stderr.contains("line 1"), "stderr: {stderr}");
}

#[test]
fn malformed_bindings_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(dir.path(), "prog.dml", "x = 1\n");
    run_err(mml().arg("run").arg(&script).args(["--input", "Xnopath"]), 2);
}

#[test]
fn unassigned_outputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(dir.path(), "prog.dml", "x = 1\n");
    let out = dir.path().join("z.csv");
    let stderr = run_err(
        mml()
            .arg("run")
            .arg(&script)
            .args(["--output", &binding("Z", &out)]),
        3,
    );
    assert!(stderr.contains("Z"), "stderr: {stderr}");
}

#[test]
fn seeded_library_initialization_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let x = write(dir.path(), "x.csv", "1,2\n3,4\n");
    let script = write(
        dir.path(),
        "prog.dml",
        "source(\"nn/layers/affine.dml\") as affine\n[W, b] = affine::init(ncol(X), 3)\n",
    );
    let mut weights = Vec::new();
    for (name, seed) in [("wa.csv", "11"), ("wb.csv", "11"), ("wc.csv", "12")] {
        let out = dir.path().join(name);
        run_ok(mml()
            .arg("run")
            .arg(&script)
            .args(["--input", &binding("X", &x)])
            .args(["--output", &binding("W", &out)])
            .args(["--seed", seed]));
        weights.push(fs::read(&out).unwrap());
    }
    assert_eq!(weights[0], weights[1], "same seed must reproduce bytes");
    assert_ne!(weights[0], weights[2], "different seed must change draws");
}

#[test]
fn translate_writes_the_script_set_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(mml()
            .arg("translate")
            .arg(&model)
            .arg("--out-dir")
            .arg(out)
            .args(["--batch-size", "8"]));
    }
    for name in ["train.dml", "grad.dml", "predict.dml", "plan.json"] {
        let a = fs::read(out_a.join(name)).unwrap();
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} must not vary between runs");
    }
    let manifest = PlanManifest::from_json(
        &fs::read_to_string(out_a.join("plan.json")).unwrap(),
        "plan.json",
    )
    .expect("manifest parses");
    assert_eq!(manifest.params, vec!["W".to_string(), "b".to_string()]);
    assert_eq!(manifest.batch_size, 8);
}

#[test]
fn generated_training_script_has_the_classifier_shape() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let out = dir.path().join("scripts");
    run_ok(mml().arg("translate").arg(&model).arg("--out-dir").arg(&out));
    // Normalize trailing whitespace and line endings before the golden
    // comparison so editor differences cannot fail it.
    let text = fs::read_to_string(out.join("train.dml"))
        .unwrap()
        .replace("\r\n", "\n");
    let normalized: Vec<&str> = text.lines().map(str::trim_end).collect();
    for line in [
        "train = function(matrix[double] X, matrix[double] Y) {",
        "  [W, b] = affine::init(D, K)",
        "    X_batch = X[beg:end,]",
        "    W = sgd::update(W, dW, lr)",
    ] {
        assert!(normalized.contains(&line), "missing line {line:?} in:\n{text}");
    }
}

#[test]
fn train_prints_the_plan_and_final_loss() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let (x, y) = write_dataset(dir.path());
    let out = dir.path().join("run");
    let stdout = String::from_utf8(
        run_ok(mml()
            .arg("train")
            .arg(&model)
            .args(["--input", &binding("X", &x)])
            .args(["--input", &binding("Y", &y)])
            .arg("--out-dir")
            .arg(&out)
            .args(["--epochs", "3", "--batch-size", "8", "--seed", "7"]))
        .stdout,
    )
    .unwrap();
    assert!(stdout.contains("plan: single-node"), "stdout: {stdout}");
    assert!(stdout.contains("final loss: "), "stdout: {stdout}");
    for name in ["train.dml", "plan.json", "weights.json", "W.csv", "b.csv"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
}

#[test]
fn train_rejects_label_width_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let (x, _) = write_dataset(dir.path());
    let bad_y = write(dir.path(), "bad_y.csv", &"1,0\n".repeat(48));
    let stderr = run_err(
        mml()
            .arg("train")
            .arg(&model)
            .args(["--input", &binding("X", &x)])
            .args(["--input", &binding("Y", &bad_y)]),
        3,
    );
    assert!(
        stderr.contains("2 columns") && stderr.contains("3"),
        "stderr: {stderr}"
    );
}

#[test]
fn tight_budgets_shift_training_to_the_parallel_plan() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let (x, y) = write_dataset(dir.path());
    let out = dir.path().join("run");
    let stdout = String::from_utf8(
        run_ok(mml()
            .arg("train")
            .arg(&model)
            .args(["--input", &binding("X", &x)])
            .args(["--input", &binding("Y", &y)])
            .arg("--out-dir")
            .arg(&out)
            .args(["--epochs", "1", "--batch-size", "48", "--budget", "4096"]))
        .stdout,
    )
    .unwrap();
    assert!(
        stdout.contains("plan: data-parallel batch training over"),
        "stdout: {stdout}"
    );
}

#[test]
fn impossible_budgets_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let (x, y) = write_dataset(dir.path());
    let stderr = run_err(
        mml()
            .arg("train")
            .arg(&model)
            .args(["--input", &binding("X", &x)])
            .args(["--input", &binding("Y", &y)])
            .args(["--budget", "64"]),
        4,
    );
    assert!(stderr.contains("budget"), "stderr: {stderr}");
}

#[test]
fn scoring_worker_counts_do_not_change_the_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let (x, y) = write_dataset(dir.path());
    let out = dir.path().join("run");
    run_ok(mml()
        .arg("train")
        .arg(&model)
        .args(["--input", &binding("X", &x)])
        .args(["--input", &binding("Y", &y)])
        .arg("--out-dir")
        .arg(&out)
        .args(["--epochs", "2", "--seed", "3"]));
    let weights = out.join("weights.json");
    let mut files = Vec::new();
    for workers in ["1", "4"] {
        let probs = dir.path().join(format!("probs_{workers}.csv"));
        run_ok(mml()
            .arg("predict")
            .arg(&model)
            .args(["--input", &binding("X", &x)])
            .arg("--weights")
            .arg(&weights)
            .args(["--output", &binding("probs", &probs)])
            .args(["--test-algo", "allreduce", "--workers", workers]));
        files.push(fs::read(&probs).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn predict_names_the_misshapen_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let (x, y) = write_dataset(dir.path());
    let out = dir.path().join("run");
    run_ok(mml()
        .arg("train")
        .arg(&model)
        .args(["--input", &binding("X", &x)])
        .args(["--input", &binding("Y", &y)])
        .arg("--out-dir")
        .arg(&out)
        .args(["--epochs", "1"]));
    // Same parameter names, different dense width: W and b no longer fit.
    let wider = DENSE_MODEL.replace("\"units\": 3", "\"units\": 2");
    let bad_model = write(dir.path(), "wider.json", &wider);
    let stderr = run_err(
        mml()
            .arg("predict")
            .arg(&bad_model)
            .args(["--input", &binding("X", &x)])
            .arg("--weights")
            .arg(out.join("weights.json"))
            .args(["--output", &binding("probs", &dir.path().join("p.csv"))]),
        3,
    );
    assert!(stderr.contains('W'), "stderr: {stderr}");
}

#[test]
fn predict_requires_an_output_binding() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let (x, _) = write_dataset(dir.path());
    run_err(
        mml()
            .arg("predict")
            .arg(&model)
            .args(["--input", &binding("X", &x)]),
        2,
    );
}

#[test]
fn gradcheck_reports_each_parameter() {
    let stdout = String::from_utf8(
        run_ok(mml().arg("gradcheck").arg("affine").args(["--seed", "5"])).stdout,
    )
    .unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3, "x, W, b reports expected: {stdout}");
    assert!(lines.iter().all(|l| l.contains("max rel err")));
}

#[test]
fn gradcheck_rejects_unknown_targets() {
    let stderr = run_err(mml().arg("gradcheck").arg("perceptron"), 3);
    assert!(stderr.contains("perceptron"), "stderr: {stderr}");
}

#[test]
fn config_file_supplies_knobs_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let (x, y) = write_dataset(dir.path());
    let config = write(
        dir.path(),
        "mml.toml",
        "seed = 5\nbatch_size = 16\nepochs = 2\n",
    );
    let out_cfg = dir.path().join("from_config");
    run_ok(mml()
        .arg("train")
        .arg(&model)
        .args(["--input", &binding("X", &x)])
        .args(["--input", &binding("Y", &y)])
        .arg("--out-dir")
        .arg(&out_cfg)
        .arg("--config")
        .arg(&config)
        .args(["--seed", "9"]));
    let out_flags = dir.path().join("from_flags");
    run_ok(mml()
        .arg("train")
        .arg(&model)
        .args(["--input", &binding("X", &x)])
        .args(["--input", &binding("Y", &y)])
        .arg("--out-dir")
        .arg(&out_flags)
        .args(["--seed", "9", "--batch-size", "16", "--epochs", "2"]));
    for name in ["weights.json", "W.csv", "b.csv", "train.dml"] {
        assert_eq!(
            fs::read(out_cfg.join(name)).unwrap(),
            fs::read(out_flags.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    let config = write(dir.path(), "mml.toml", "speed = 11\n");
    let stderr = run_err(
        mml()
            .arg("translate")
            .arg(&model)
            .arg("--config")
            .arg(&config),
        3,
    );
    assert!(stderr.contains("speed"), "stderr: {stderr}");
}

#[test]
fn epochs_and_num_iter_together_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", DENSE_MODEL);
    run_err(
        mml()
            .arg("translate")
            .arg(&model)
            .args(["--epochs", "2", "--num-iter", "5"]),
        3,
    );
}
