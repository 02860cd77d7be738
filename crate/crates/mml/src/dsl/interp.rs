//! Tree-walking evaluator.
//!
//! Every matrix an evaluation step produces passes through the configured
//! sparsity threshold before it lands in an environment, so storage format
//! is always a consequence of content, never of the operation that made it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ast::{BinOp, Expr, ExprKind, LValue, ParamKind, RangeSel, Stmt, StmtKind, UnOp};
use super::builtins;
use super::parser;
use super::resolve::{self, FunDef, Namespace, ResolvedProgram};
use super::{DslError, Value};
use crate::config;
use crate::matrix::{ElemOp, Matrix};

#[derive(Debug, Clone)]
pub struct InterpConfig {
    pub seed: u64,
    pub sparsity_threshold: f64,
    pub max_call_depth: usize,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig {
            seed: config::DEFAULT_SEED,
            sparsity_threshold: config::DEFAULT_SPARSITY_THRESHOLD,
            max_call_depth: 64,
        }
    }
}

pub type Env = BTreeMap<String, Value>;

/// One script loaded and ready to run. Keeps the generator state, so
/// repeated calls draw successive initializations exactly like a single
/// straight-line script would.
pub struct Session {
    prog: ResolvedProgram,
    cfg: InterpConfig,
    rng: ChaCha8Rng,
    depth: usize,
    /// Namespace of the user-imported function currently executing, so its
    /// unqualified calls reach siblings from the same file first.
    home: Vec<Option<String>>,
}

/// Parse, bind, and run a script that needs no filesystem, returning the
/// final top-level environment.
pub fn interpret(text: &str, inputs: Env, cfg: &InterpConfig) -> Result<Env, DslError> {
    let prog = parser::parse(text)?;
    let resolved = resolve::resolve(&prog, None)?;
    let mut session = Session::new(resolved, cfg.clone());
    session.run(inputs)
}

/// Like `interpret`, resolving imports relative to the script's directory.
pub fn interpret_file(path: &Path, inputs: Env, cfg: &InterpConfig) -> Result<Env, DslError> {
    let text = std::fs::read_to_string(path).map_err(|e| DslError::Import {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let prog = parser::parse(&text)?;
    let resolved = resolve::resolve(&prog, path.parent())?;
    let mut session = Session::new(resolved, cfg.clone());
    session.run(inputs)
}

fn strict_scalar(v: &Value, line: usize, what: &str) -> Result<f64, DslError> {
    match v {
        Value::Scalar(s) => Ok(*s),
        other => Err(DslError::KindMismatch {
            line,
            what: what.to_string(),
            expected: "a scalar",
            got: other.kind_name(),
        }),
    }
}

fn strict_whole(v: &Value, line: usize, what: &str) -> Result<i64, DslError> {
    let x = strict_scalar(v, line, what)?;
    let r = x.round();
    if (x - r).abs() > 1e-9 || !r.is_finite() {
        return Err(DslError::NonIntegerValue {
            line,
            what: what.to_string(),
            value: x,
        });
    }
    Ok(r as i64)
}

fn strict_index(v: &Value, line: usize, what: &str) -> Result<usize, DslError> {
    let n = strict_whole(v, line, what)?;
    if n < 1 {
        return Err(DslError::Runtime {
            line,
            msg: format!("{what} must be at least 1, got {n}"),
        });
    }
    Ok(n as usize)
}

fn rt(line: usize, e: impl std::fmt::Display) -> DslError {
    DslError::Runtime {
        line,
        msg: e.to_string(),
    }
}

impl Session {
    pub fn new(prog: ResolvedProgram, cfg: InterpConfig) -> Session {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Session {
            prog,
            cfg,
            rng,
            depth: 0,
            home: Vec::new(),
        }
    }

    pub fn program(&self) -> &ResolvedProgram {
        &self.prog
    }

    /// Execute the top-level statements over `inputs` and hand back the
    /// resulting environment.
    pub fn run(&mut self, inputs: Env) -> Result<Env, DslError> {
        let mut env: Env = inputs
            .into_iter()
            .map(|(k, v)| (k, self.settle(v)))
            .collect();
        let stmts = self.prog.stmts.clone();
        self.exec_block(&stmts, &mut env, true)?;
        Ok(env)
    }

    /// Call a top-level function by name.
    pub fn call(&mut self, name: &str, args: Vec<Value>) -> Result<Vec<Value>, DslError> {
        Ok(self.call_capture(name, args)?.0)
    }

    /// Call a top-level function and also return its final local
    /// environment, for drivers that harvest state a script leaves behind
    /// in a function that declares no returns.
    pub fn call_capture(
        &mut self,
        name: &str,
        args: Vec<Value>,
    ) -> Result<(Vec<Value>, Env), DslError> {
        let Some(f) = self.prog.functions.get(name).cloned() else {
            return Err(DslError::UndefinedFunction {
                line: 0,
                name: name.to_string(),
            });
        };
        let argv: Vec<Value> = args.into_iter().map(|v| self.settle(v)).collect();
        self.call_user(&f, argv, f.line, None)
    }

    fn settle(&self, v: Value) -> Value {
        match v {
            Value::Matrix(m) => Value::Matrix(m.decide_format(self.cfg.sparsity_threshold)),
            other => other,
        }
    }

    fn exec_block(&mut self, stmts: &[Stmt], env: &mut Env, top: bool) -> Result<(), DslError> {
        for stmt in stmts {
            self.exec_stmt(stmt, env, top)?;
        }
        Ok(())
    }

    fn exec_stmt(&mut self, stmt: &Stmt, env: &mut Env, top: bool) -> Result<(), DslError> {
        let line = stmt.line;
        match &stmt.kind {
            // Imports and definitions were bound at resolve time.
            StmtKind::Import { .. } => Ok(()),
            StmtKind::FunDef { .. } if top => Ok(()),
            StmtKind::FunDef { .. } => Err(rt(
                line,
                "function definitions are only allowed at the top level",
            )),
            StmtKind::Assign { target, value } => {
                let v = self.eval_single(value, env)?;
                match target {
                    LValue::Var(name) => {
                        let v = self.settle(v);
                        env.insert(name.clone(), v);
                        Ok(())
                    }
                    LValue::Indexed { name, rows, cols } => {
                        let base = match env.get(name) {
                            Some(Value::Matrix(m)) => m.clone(),
                            Some(other) => {
                                return Err(DslError::KindMismatch {
                                    line,
                                    what: format!("indexed assignment target {name}"),
                                    expected: "a matrix",
                                    got: other.kind_name(),
                                })
                            }
                            None => {
                                return Err(DslError::UndefinedVariable {
                                    line,
                                    name: name.clone(),
                                })
                            }
                        };
                        let r = self.sel_bounds(rows, env, line, "row index")?;
                        let c = self.sel_bounds(cols, env, line, "column index")?;
                        let rhs = match v {
                            Value::Matrix(m) => m,
                            Value::Scalar(s) => {
                                let rr = r.map(|(a, b)| b - a + 1).unwrap_or(base.rows());
                                let cc = c.map(|(a, b)| b - a + 1).unwrap_or(base.cols());
                                Matrix::filled(rr, cc, s)
                            }
                            other => {
                                return Err(DslError::KindMismatch {
                                    line,
                                    what: "indexed assignment value".to_string(),
                                    expected: "a matrix",
                                    got: other.kind_name(),
                                })
                            }
                        };
                        let updated = base.set_slice(r, c, &rhs).map_err(|e| rt(line, e))?;
                        env.insert(name.clone(), self.settle(Value::Matrix(updated)));
                        Ok(())
                    }
                }
            }
            StmtKind::MultiAssign { targets, value } => {
                let ExprKind::Call {
                    namespace,
                    name,
                    args,
                } = &value.kind
                else {
                    unreachable!("parser guarantees a call on the right");
                };
                let results = self.exec_call(namespace.as_deref(), name, args, env, value.line)?;
                if results.len() != targets.len() {
                    return Err(DslError::ReturnArity {
                        line,
                        name: name.clone(),
                        returned: results.len(),
                        wanted: targets.len(),
                    });
                }
                for (t, v) in targets.iter().zip(results) {
                    env.insert(t.clone(), v);
                }
                Ok(())
            }
            StmtKind::For { var, lo, hi, body } => {
                let lo_v = self.eval_single(lo, env)?;
                let hi_v = self.eval_single(hi, env)?;
                let lo_i = strict_whole(&lo_v, line, "loop lower bound")?;
                let hi_i = strict_whole(&hi_v, line, "loop upper bound")?;
                // A descending range runs zero times.
                for i in lo_i..=hi_i {
                    env.insert(var.clone(), Value::Scalar(i as f64));
                    self.exec_block(body, env, false)?;
                }
                Ok(())
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                let c = self.eval_single(cond, env)?;
                let c = strict_scalar(&c, line, "if condition")?;
                if c != 0.0 {
                    self.exec_block(then_body, env, false)
                } else if let Some(eb) = else_body {
                    self.exec_block(eb, env, false)
                } else {
                    Ok(())
                }
            }
            StmtKind::ExprStmt { expr } => {
                // Results of a bare expression are discarded, whatever their
                // count, so `f()` works for side-effect-free warm calls.
                match &expr.kind {
                    ExprKind::Call {
                        namespace,
                        name,
                        args,
                    } => {
                        self.exec_call(namespace.as_deref(), name, args, env, expr.line)?;
                    }
                    _ => {
                        self.eval_single(expr, env)?;
                    }
                }
                Ok(())
            }
        }
    }

    fn sel_bounds(
        &mut self,
        sel: &Option<RangeSel>,
        env: &Env,
        line: usize,
        what: &str,
    ) -> Result<Option<(usize, usize)>, DslError> {
        match sel {
            None => Ok(None),
            Some(RangeSel { lo, hi }) => {
                let lo_v = self.eval_single(lo, env)?;
                let lo_i = strict_index(&lo_v, line, what)?;
                let hi_i = match hi {
                    None => lo_i,
                    Some(h) => {
                        let hv = self.eval_single(h, env)?;
                        strict_index(&hv, line, what)?
                    }
                };
                Ok(Some((lo_i, hi_i)))
            }
        }
    }

    /// Evaluate an expression that must produce exactly one value.
    fn eval_single(&mut self, e: &Expr, env: &Env) -> Result<Value, DslError> {
        match &e.kind {
            ExprKind::Num(v) => Ok(Value::Scalar(*v)),
            ExprKind::Str(s) => Ok(Value::Str(s.clone())),
            ExprKind::Var(name) => env.get(name).cloned().ok_or_else(|| {
                DslError::UndefinedVariable {
                    line: e.line,
                    name: name.clone(),
                }
            }),
            ExprKind::Unary { op, operand } => {
                let v = self.eval_single(operand, env)?;
                match (op, v) {
                    (UnOp::Neg, Value::Scalar(s)) => Ok(Value::Scalar(-s)),
                    (UnOp::Neg, Value::Matrix(m)) => {
                        Ok(self.settle(Value::Matrix(m.map(|x| -x))))
                    }
                    (UnOp::Not, Value::Scalar(s)) => Ok(Value::Scalar(f64::from(s == 0.0))),
                    (UnOp::Not, Value::Matrix(m)) => {
                        Ok(self.settle(Value::Matrix(m.map(|x| f64::from(x == 0.0)))))
                    }
                    (_, other) => Err(DslError::KindMismatch {
                        line: e.line,
                        what: "unary operand".to_string(),
                        expected: "a matrix or scalar",
                        got: other.kind_name(),
                    }),
                }
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let l = self.eval_single(lhs, env)?;
                let r = self.eval_single(rhs, env)?;
                self.apply_binop(*op, l, r, e.line)
            }
            ExprKind::Call {
                namespace,
                name,
                args,
            } => {
                let mut results =
                    self.exec_call(namespace.as_deref(), name, args, env, e.line)?;
                if results.len() != 1 {
                    return Err(DslError::ReturnArity {
                        line: e.line,
                        name: name.clone(),
                        returned: results.len(),
                        wanted: 1,
                    });
                }
                Ok(results.pop().unwrap())
            }
            ExprKind::Index { base, rows, cols } => {
                let r = self.sel_bounds(rows, env, e.line, "row index")?;
                let c = self.sel_bounds(cols, env, e.line, "column index")?;
                // Slice straight off the stored matrix; cloning the base
                // first would double the largest buffer in the program.
                let m = match env.get(base) {
                    Some(Value::Matrix(m)) => m,
                    Some(other) => {
                        return Err(DslError::KindMismatch {
                            line: e.line,
                            what: format!("indexed variable {base}"),
                            expected: "a matrix",
                            got: other.kind_name(),
                        })
                    }
                    None => {
                        return Err(DslError::UndefinedVariable {
                            line: e.line,
                            name: base.clone(),
                        })
                    }
                };
                let out = m.slice(r, c).map_err(|e2| rt(e.line, e2))?;
                Ok(self.settle(Value::Matrix(out)))
            }
        }
    }

    fn apply_binop(&self, op: BinOp, l: Value, r: Value, line: usize) -> Result<Value, DslError> {
        use Value::{Matrix as VM, Scalar as VS};
        if op == BinOp::MatMul {
            return match (l, r) {
                (VM(a), VM(b)) => Ok(self.settle(VM(a.matmul(&b).map_err(|e| rt(line, e))?))),
                (a, b) => Err(DslError::KindMismatch {
                    line,
                    what: "%*% operand".to_string(),
                    expected: "a matrix",
                    got: if matches!(a, VM(_)) { b.kind_name() } else { a.kind_name() },
                }),
            };
        }
        if op == BinOp::Mod {
            let (a, b) = (
                strict_scalar(&l, line, "%% operand")?,
                strict_scalar(&r, line, "%% operand")?,
            );
            return Ok(VS(a - (a / b).floor() * b));
        }
        match (l, r) {
            (VS(a), VS(b)) => Ok(VS(scalar_binop(op, a, b))),
            (VM(a), VM(b)) => {
                let eop = elem_op(op);
                Ok(self.settle(VM(a.elementwise(&b, eop).map_err(|e| rt(line, e))?)))
            }
            (VM(a), VS(b)) => Ok(self.settle(VM(a.elementwise_scalar(b, elem_op(op))))),
            (VS(a), VM(b)) => {
                let am = Matrix::filled(1, 1, a);
                Ok(self.settle(VM(am.elementwise(&b, elem_op(op)).map_err(|e| rt(line, e))?)))
            }
            (a, b) => {
                let bad = if matches!(a, VM(_) | VS(_)) { b } else { a };
                Err(DslError::KindMismatch {
                    line,
                    what: format!("operand of {}", op.symbol()),
                    expected: "a matrix or scalar",
                    got: bad.kind_name(),
                })
            }
        }
    }

    fn exec_call(
        &mut self,
        ns: Option<&str>,
        name: &str,
        args: &[Expr],
        env: &Env,
        line: usize,
    ) -> Result<Vec<Value>, DslError> {
        // Dimension queries on a stored matrix read metadata only;
        // evaluating the argument normally would clone the whole buffer
        // first. User functions of the same name still win.
        if ns.is_none() && matches!(name, "nrow" | "ncol") && args.len() == 1 {
            if let ExprKind::Var(v) = &args[0].kind {
                let shadowed = self.prog.functions.contains_key(name)
                    || self.home.last().and_then(|h| h.as_ref()).is_some_and(|h| {
                        matches!(self.prog.namespaces.get(h),
                                 Some(Namespace::User(fns)) if fns.contains_key(name))
                    });
                if !shadowed {
                    if let Some(Value::Matrix(m)) = env.get(v) {
                        let d = if name == "nrow" { m.rows() } else { m.cols() };
                        return Ok(vec![Value::Scalar(d as f64)]);
                    }
                }
            }
        }
        let mut argv = Vec::with_capacity(args.len());
        for a in args {
            argv.push(self.eval_single(a, env)?);
        }
        let results = match ns {
            Some(alias) => match self.prog.namespaces.get(alias) {
                None => {
                    return Err(DslError::UndefinedNamespace {
                        line,
                        name: alias.to_string(),
                    })
                }
                Some(Namespace::Builtin(key)) => {
                    builtins::call_library(key, name, &argv, line, &mut self.rng)?
                }
                Some(Namespace::User(fns)) => match fns.get(name) {
                    Some(f) => {
                        let f = f.clone();
                        self.call_user(&f, argv, line, Some(alias.to_string()))?.0
                    }
                    None => {
                        return Err(DslError::UndefinedFunction {
                            line,
                            name: format!("{alias}::{name}"),
                        })
                    }
                },
            },
            None => {
                // A sibling from the same imported file shadows globals.
                let home_fn = self.home.last().cloned().flatten().and_then(|h| {
                    match self.prog.namespaces.get(&h) {
                        Some(Namespace::User(fns)) => {
                            fns.get(name).cloned().map(|f| (f, Some(h)))
                        }
                        _ => None,
                    }
                });
                if let Some((f, h)) = home_fn {
                    self.call_user(&f, argv, line, h)?.0
                } else if let Some(f) = self.prog.functions.get(name).cloned() {
                    self.call_user(&f, argv, line, None)?.0
                } else {
                    match builtins::call_global(name, &argv, line) {
                        Some(r) => r?,
                        None => {
                            return Err(DslError::UndefinedFunction {
                                line,
                                name: name.to_string(),
                            })
                        }
                    }
                }
            }
        };
        Ok(results.into_iter().map(|v| self.settle(v)).collect())
    }

    fn coerce_param(
        &self,
        v: Value,
        kind: ParamKind,
        line: usize,
        what: &str,
    ) -> Result<Value, DslError> {
        let fail = |expected: &'static str, got: &Value| DslError::KindMismatch {
            line,
            what: what.to_string(),
            expected,
            got: got.kind_name(),
        };
        match kind {
            ParamKind::Untyped => Ok(v),
            ParamKind::Matrix => match v {
                Value::Matrix(_) => Ok(v),
                Value::Scalar(s) => Ok(Value::Matrix(Matrix::filled(1, 1, s))),
                other => Err(fail("a matrix", &other)),
            },
            ParamKind::Double | ParamKind::Int => {
                let s = match v {
                    Value::Scalar(s) => s,
                    Value::Matrix(m) if m.rows() == 1 && m.cols() == 1 => m.get(0, 0),
                    other => return Err(fail("a scalar", &other)),
                };
                if kind == ParamKind::Int {
                    let r = s.round();
                    if (s - r).abs() > 1e-9 || !r.is_finite() {
                        return Err(DslError::NonIntegerValue {
                            line,
                            what: what.to_string(),
                            value: s,
                        });
                    }
                }
                Ok(Value::Scalar(s))
            }
            ParamKind::Str => match v {
                Value::Str(_) => Ok(v),
                other => Err(fail("a string", &other)),
            },
        }
    }

    fn call_user(
        &mut self,
        f: &FunDef,
        argv: Vec<Value>,
        line: usize,
        home: Option<String>,
    ) -> Result<(Vec<Value>, Env), DslError> {
        if self.depth >= self.cfg.max_call_depth {
            return Err(DslError::CallDepth {
                line,
                limit: self.cfg.max_call_depth,
            });
        }
        if argv.len() != f.params.len() {
            return Err(DslError::ArityMismatch {
                line,
                name: f.name.clone(),
                expected: f.params.len(),
                got: argv.len(),
            });
        }
        let mut env: Env = Env::new();
        for (p, v) in f.params.iter().zip(argv) {
            let coerced =
                self.coerce_param(v, p.kind, line, &format!("parameter {} of {}", p.name, f.name))?;
            env.insert(p.name.clone(), self.settle(coerced));
        }
        self.depth += 1;
        self.home.push(home);
        let body_result = self.exec_block(&f.body, &mut env, false);
        self.home.pop();
        self.depth -= 1;
        body_result?;
        let mut out = Vec::with_capacity(f.returns.len());
        for p in &f.returns {
            let v = env
                .get(&p.name)
                .cloned()
                .ok_or_else(|| DslError::ReturnUnset {
                    line: f.line,
                    name: p.name.clone(),
                    func: f.name.clone(),
                })?;
            out.push(self.coerce_param(
                v,
                p.kind,
                f.line,
                &format!("return value {} of {}", p.name, f.name),
            )?);
        }
        Ok((out, env))
    }
}

fn scalar_binop(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Pow => a.powf(b),
        BinOp::Lt => f64::from(a < b),
        BinOp::Le => f64::from(a <= b),
        BinOp::Gt => f64::from(a > b),
        BinOp::Ge => f64::from(a >= b),
        BinOp::Eq => f64::from(a == b),
        BinOp::Ne => f64::from(a != b),
        BinOp::And => f64::from(a != 0.0 && b != 0.0),
        BinOp::Or => f64::from(a != 0.0 || b != 0.0),
        BinOp::Mod | BinOp::MatMul => unreachable!("handled before dispatch"),
    }
}

fn elem_op(op: BinOp) -> ElemOp {
    match op {
        BinOp::Add => ElemOp::Add,
        BinOp::Sub => ElemOp::Sub,
        BinOp::Mul => ElemOp::Mul,
        BinOp::Div => ElemOp::Div,
        BinOp::Pow => ElemOp::Pow,
        BinOp::Lt => ElemOp::Lt,
        BinOp::Le => ElemOp::Le,
        BinOp::Gt => ElemOp::Gt,
        BinOp::Ge => ElemOp::Ge,
        BinOp::Eq => ElemOp::Eq,
        BinOp::Ne => ElemOp::Ne,
        BinOp::And => ElemOp::And,
        BinOp::Or => ElemOp::Or,
        BinOp::Mod | BinOp::MatMul => unreachable!("handled before dispatch"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers;
    use crate::Matrix;

    fn run(text: &str) -> Env {
        interpret(text, Env::new(), &InterpConfig::default()).expect("script failed")
    }

    fn run_with(text: &str, inputs: Env) -> Env {
        interpret(text, inputs, &InterpConfig::default()).expect("script failed")
    }

    fn scalar(env: &Env, name: &str) -> f64 {
        match env.get(name) {
            Some(Value::Scalar(s)) => *s,
            other => panic!("expected scalar {name}, got {other:?}"),
        }
    }

    fn matrix<'e>(env: &'e Env, name: &str) -> &'e Matrix {
        match env.get(name) {
            Some(Value::Matrix(m)) => m,
            other => panic!("expected matrix {name}, got {other:?}"),
        }
    }

    #[test]
    fn sum_of_filled_matrix() {
        let env = run("X = matrix(2.5, 2, 2)\ns = sum(X)");
        assert_eq!(scalar(&env, "s"), 10.0);
    }

    #[test]
    fn arithmetic_and_precedence_at_runtime() {
        let env = run("a = 2 + 3 * 4\nb = (2 + 3) * 4\nc = 2 ^ 3 ^ 2\nd = -2 ^ 2\ne = 7 %% 3");
        assert_eq!(scalar(&env, "a"), 14.0);
        assert_eq!(scalar(&env, "b"), 20.0);
        assert_eq!(scalar(&env, "c"), 512.0);
        assert_eq!(scalar(&env, "d"), -4.0);
        assert_eq!(scalar(&env, "e"), 1.0);
    }

    #[test]
    fn matmul_and_transpose() {
        let text = "A = matrix(1, 2, 3)\nB = t(A)\nC = A %*% B\ns = sum(C)";
        let env = run(text);
        // Ones 2x3 times ones 3x2 is all 3s, 2x2.
        assert_eq!(scalar(&env, "s"), 12.0);
        assert_eq!(matrix(&env, "C").rows(), 2);
    }

    #[test]
    fn slicing_reads_and_writes() {
        let mut inputs = Env::new();
        inputs.insert(
            "X".into(),
            Value::Matrix(Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()),
        );
        let env = run_with(
            "row = X[2,]\ncell = X[1, 2]\nX[1:1, 1:2] = matrix(9, 1, 2)\ntotal = sum(X)",
            inputs,
        );
        assert_eq!(matrix(&env, "row").to_dense_vec(), vec![3.0, 4.0]);
        assert_eq!(matrix(&env, "cell").to_dense_vec(), vec![2.0]);
        assert_eq!(scalar(&env, "total"), 9.0 + 9.0 + 3.0 + 4.0);
    }

    #[test]
    fn for_loop_accumulates_and_descending_range_skips() {
        let env = run("s = 0\nfor (i in 1:5) {\n  s = s + i\n}\nfor (i in 5:1) {\n  s = s + 100\n}");
        assert_eq!(scalar(&env, "s"), 15.0);
    }

    #[test]
    fn fractional_loop_bound_is_rejected_with_line() {
        let err = interpret("x = 1\nfor (i in 1:2.5) {\n  x = i\n}", Env::new(), &InterpConfig::default())
            .unwrap_err();
        match err {
            DslError::NonIntegerValue { line, value, .. } => {
                assert_eq!(line, 2);
                assert_eq!(value, 2.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn if_else_branches() {
        let env = run("a = 5\nif (a > 3) {\n  b = 1\n} else {\n  b = 2\n}");
        assert_eq!(scalar(&env, "b"), 1.0);
    }

    #[test]
    fn user_function_with_returns_and_coercion() {
        let text = "\
addk = function(matrix[double] X, double k) return (matrix[double] Y) {
  Y = X + k
}
Z = addk(matrix(1, 2, 2), 2)
s = sum(Z)
M = addk(5, 1)
";
        let env = run(text);
        assert_eq!(scalar(&env, "s"), 12.0);
        // Scalar argument was promoted to 1x1 at the call boundary.
        assert_eq!(matrix(&env, "M").to_dense_vec(), vec![6.0]);
    }

    #[test]
    fn multi_assignment_from_user_function() {
        let text = "\
two = function(matrix[double] X) return (matrix[double] A, matrix[double] B) {
  A = X * 2
  B = X * 3
}
[P, Q] = two(matrix(1, 1, 1))
";
        let env = run(text);
        assert_eq!(matrix(&env, "P").get(0, 0), 2.0);
        assert_eq!(matrix(&env, "Q").get(0, 0), 3.0);
    }

    #[test]
    fn empty_body_function_is_callable() {
        let env = run("noop = function(matrix[double] X) {\n}\nnoop(matrix(0, 1, 1))\nz = 1");
        assert_eq!(scalar(&env, "z"), 1.0);
    }

    #[test]
    fn undefined_variable_reports_its_line() {
        let err = interpret("a = 1\nb = a + missing", Env::new(), &InterpConfig::default())
            .unwrap_err();
        match err {
            DslError::UndefinedVariable { line, name } => {
                assert_eq!(line, 2);
                assert_eq!(name, "missing");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn arity_mismatch_reports_call_line() {
        let err = interpret(
            "f = function(matrix[double] X) return (matrix[double] Y) {\n  Y = X\n}\nZ = f(matrix(0, 1, 1), 2)",
            Env::new(),
            &InterpConfig::default(),
        )
        .unwrap_err();
        match err {
            DslError::ArityMismatch { line, expected, got, .. } => {
                assert_eq!(line, 4);
                assert_eq!((expected, got), (1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn runaway_recursion_is_cut_off() {
        let text = "f = function(double x) return (double y) {\n  y = f(x)\n}\nz = f(1)";
        let err = interpret(text, Env::new(), &InterpConfig::default()).unwrap_err();
        assert!(matches!(err, DslError::CallDepth { .. }));
    }

    #[test]
    fn library_affine_relu_round_trip() {
        let text = "\
source(\"nn/layers/affine.dml\") as affine
source(\"nn/layers/relu.dml\") as relu
[W, b] = affine::init(4, 3)
X = matrix(1, 2, 4)
out = affine::forward(X, W, b)
a = relu::forward(out)
";
        let env = run(text);
        assert_eq!(matrix(&env, "W").rows(), 4);
        assert_eq!(matrix(&env, "out").rows(), 2);
        let a = matrix(&env, "a");
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                assert!(a.get(r, c) >= 0.0);
            }
        }
    }

    #[test]
    fn library_init_matches_native_draws() {
        use rand::SeedableRng;
        let cfg = InterpConfig::default();
        let env = run("source(\"nn/layers/affine.dml\") as affine\n[W, b] = affine::init(4, 3)");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
        let (w_native, b_native) = layers::affine_init(&mut rng, 4, 3);
        assert_eq!(matrix(&env, "W"), &w_native);
        assert_eq!(matrix(&env, "b"), &b_native);
    }

    #[test]
    fn adam_step_zero_is_an_error() {
        let text = "\
source(\"nn/optim/adam.dml\") as adam
W = matrix(1, 2, 2)
dW = matrix(0.5, 2, 2)
[m, v] = adam::init(W)
[W2, m2, v2] = adam::update(W, dW, 0.01, 0.9, 0.999, 1e-8, 0, m, v)
";
        let err = interpret(text, Env::new(), &InterpConfig::default()).unwrap_err();
        match err {
            DslError::Runtime { line, msg } => {
                assert_eq!(line, 5);
                assert!(msg.contains(">= 1"), "message was {msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_training_iterations_match_native_loop_and_loss_decreases() {
        use rand::Rng;
        use rand::SeedableRng;
        let seed = 42;
        let n = 64;
        let d = 4;
        let k = 2;
        // Deterministic synthetic data, independent of interpreter state.
        let mut data_rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x_data: Vec<f64> = (0..n * d).map(|_| data_rng.random_range(-1.0..1.0)).collect();
        let mut y_data = vec![0.0; n * k];
        for r in 0..n {
            let cls = usize::from(x_data[r * d] + x_data[r * d + 1] > 0.0);
            y_data[r * k + cls] = 1.0;
        }
        let x = Matrix::dense(n, d, x_data).unwrap();
        let y = Matrix::dense(n, k, y_data).unwrap();

        let text = "\
source(\"nn/layers/affine.dml\") as affine
source(\"nn/layers/softmax.dml\") as softmax
source(\"nn/layers/cross_entropy_loss.dml\") as cross_entropy_loss
source(\"nn/optim/sgd.dml\") as sgd
lr = 0.1
[W, b] = affine::init(4, 2)
loss_first = 0
loss_last = 0
for (iter in 1:2) {
  scores = affine::forward(X, W, b)
  probs = softmax::forward(scores)
  loss = cross_entropy_loss::forward(probs, Y)
  if (iter == 1) {
    loss_first = loss
  }
  loss_last = loss
  dprobs = cross_entropy_loss::backward(probs, Y)
  dscores = softmax::backward(dprobs, scores)
  [dX, dW, db] = affine::backward(dscores, X, W, b)
  W = sgd::update(W, dW, lr)
  b = sgd::update(b, db, lr)
}
";
        let mut inputs = Env::new();
        inputs.insert("X".into(), Value::Matrix(x.clone()));
        inputs.insert("Y".into(), Value::Matrix(y.clone()));
        let cfg = InterpConfig {
            seed,
            ..InterpConfig::default()
        };
        let env = interpret(text, inputs, &cfg).expect("training script failed");

        // Native replay: same generator seed, same operation order.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (mut w, mut b) = layers::affine_init(&mut rng, d, k);
        let mut native_first = f64::NAN;
        let mut native_last = f64::NAN;
        for iter in 0..2 {
            let scores = layers::affine_forward(&x, &w, &b).unwrap();
            let probs = layers::softmax_forward(&scores);
            let loss = layers::cross_entropy_forward(&probs, &y).unwrap();
            if iter == 0 {
                native_first = loss;
            }
            native_last = loss;
            let dprobs = layers::cross_entropy_backward(&probs, &y).unwrap();
            let dscores = layers::softmax_backward(&dprobs, &scores).unwrap();
            let (_dx, dw, db) = layers::affine_backward(&dscores, &x, &w).unwrap();
            w = crate::nn::optim::sgd_update(&w, &dw, 0.1).unwrap();
            b = crate::nn::optim::sgd_update(&b, &db, 0.1).unwrap();
        }

        let script_first = scalar(&env, "loss_first");
        let script_last = scalar(&env, "loss_last");
        assert_eq!(script_first.to_bits(), native_first.to_bits());
        assert_eq!(script_last.to_bits(), native_last.to_bits());
        assert!(
            script_last < script_first,
            "loss went {script_first} -> {script_last}"
        );
        assert_eq!(matrix(&env, "W"), &w);
        assert_eq!(matrix(&env, "b"), &b);
    }

    #[test]
    fn repeat_runs_are_identical() {
        let text = "\
source(\"nn/layers/conv2d.dml\") as conv2d
[W, b] = conv2d::init(2, 1, 3, 3)
X = matrix(0.5, 2, 16)
[out, Hout, Wout] = conv2d::forward(X, W, b, 1, 4, 4, 3, 3, 1, 1, 1, 1)
s = sum(out)
";
        let a = run(text);
        let b = run(text);
        assert_eq!(scalar(&a, "s").to_bits(), scalar(&b, "s").to_bits());
        assert_eq!(matrix(&a, "out"), matrix(&b, "out"));
        assert_eq!(scalar(&a, "Hout"), 4.0);
    }

    #[test]
    fn imported_user_functions_run_and_reach_siblings() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("helpers.dml"),
            "\
scale = function(matrix[double] X, double k) return (matrix[double] Y) {
  Y = X * k
}
scale_twice = function(matrix[double] X, double k) return (matrix[double] Y) {
  Y = scale(scale(X, k), k)
}
",
        )
        .unwrap();
        let script_path = dir.path().join("main.dml");
        std::fs::write(
            &script_path,
            "source(\"helpers.dml\") as h\nZ = h::scale_twice(matrix(1, 2, 2), 3)\ns = sum(Z)\n",
        )
        .unwrap();
        let env = interpret_file(&script_path, Env::new(), &InterpConfig::default()).unwrap();
        assert_eq!(scalar(&env, "s"), 36.0);
    }

    #[test]
    fn call_capture_exposes_function_local_state() {
        let text = "\
train = function(matrix[double] X, matrix[double] Y) {
  W = X + Y
  b = sum(W)
}
";
        let prog = parser::parse(text).unwrap();
        let resolved = resolve::resolve(&prog, None).unwrap();
        let mut session = Session::new(resolved, InterpConfig::default());
        let x = Matrix::filled(2, 2, 1.0);
        let y = Matrix::filled(2, 2, 2.0);
        let (rets, env) = session
            .call_capture("train", vec![Value::Matrix(x), Value::Matrix(y)])
            .unwrap();
        assert!(rets.is_empty());
        assert_eq!(matrix(&env, "W").get(1, 1), 3.0);
        assert_eq!(scalar(&env, "b"), 12.0);
    }

    #[test]
    fn scalar_matrix_broadcast_both_sides() {
        let env = run("X = matrix(2, 2, 2)\nA = 10 - X\nB = X - 10\nC = 1 / X");
        assert_eq!(matrix(&env, "A").get(0, 0), 8.0);
        assert_eq!(matrix(&env, "B").get(0, 0), -8.0);
        assert_eq!(matrix(&env, "C").get(1, 1), 0.5);
    }

    #[test]
    fn comparison_produces_indicator_matrix() {
        let mut inputs = Env::new();
        inputs.insert(
            "X".into(),
            Value::Matrix(Matrix::from_rows(vec![vec![-1.0, 2.0], vec![3.0, -4.0]]).unwrap()),
        );
        let env = run_with("M = X > 0\ncount = sum(M)", inputs);
        assert_eq!(scalar(&env, "count"), 2.0);
    }

    #[test]
    fn custom_threshold_changes_storage_format() {
        let text = "X = matrix(0, 10, 10)\nX[1:2, 1:5] = matrix(1, 2, 5)";
        // Fill ratio is 0.10: sparse under the default threshold.
        let env = interpret(text, Env::new(), &InterpConfig::default()).unwrap();
        assert!(matrix(&env, "X").is_sparse());
        let cfg = InterpConfig {
            sparsity_threshold: 0.05,
            ..InterpConfig::default()
        };
        let env = interpret(text, Env::new(), &cfg).unwrap();
        assert!(!matrix(&env, "X").is_sparse());
    }
}
