//! Syntax tree and pretty-printer.
//!
//! Equality on statements and expressions ignores source positions, so a
//! parsed tree compares equal to the parse of its own pretty-printed text.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone)]
pub struct Stmt {
    pub line: usize,
    pub kind: StmtKind,
}

impl PartialEq for Stmt {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Import {
        path: String,
        alias: String,
    },
    FunDef {
        name: String,
        params: Vec<Param>,
        returns: Vec<Param>,
        body: Vec<Stmt>,
    },
    Assign {
        target: LValue,
        value: Expr,
    },
    MultiAssign {
        targets: Vec<String>,
        value: Expr,
    },
    For {
        var: String,
        lo: Expr,
        hi: Expr,
        body: Vec<Stmt>,
    },
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Option<Vec<Stmt>>,
    },
    ExprStmt {
        expr: Expr,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Matrix,
    Double,
    Int,
    Str,
    Untyped,
}

impl ParamKind {
    fn annotation(self) -> Option<&'static str> {
        match self {
            ParamKind::Matrix => Some("matrix[double]"),
            ParamKind::Double => Some("double"),
            ParamKind::Int => Some("integer"),
            ParamKind::Str => Some("string"),
            ParamKind::Untyped => None,
        }
    }
}

/// Row or column selector inside `X[...]`: a single position or an
/// inclusive range. `None` at the use site means the whole axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeSel {
    pub lo: Box<Expr>,
    pub hi: Option<Box<Expr>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LValue {
    Var(String),
    Indexed {
        name: String,
        rows: Option<RangeSel>,
        cols: Option<RangeSel>,
    },
}

#[derive(Debug, Clone)]
pub struct Expr {
    pub line: usize,
    pub kind: ExprKind,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Num(f64),
    Str(String),
    Var(String),
    Unary {
        op: UnOp,
        operand: Box<Expr>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        namespace: Option<String>,
        name: String,
        args: Vec<Expr>,
    },
    Index {
        base: String,
        rows: Option<RangeSel>,
        cols: Option<RangeSel>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Mod,
    MatMul,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
            BinOp::Mod => "%%",
            BinOp::MatMul => "%*%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&",
            BinOp::Or => "|",
        }
    }

    /// Binding strength. `^` is right-associative, everything else left.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Mod | BinOp::MatMul => 6,
            BinOp::Pow => 8,
        }
    }
}

const PREC_NOT: u8 = 3;
const PREC_NEG: u8 = 7;
const PREC_ATOM: u8 = 10;

fn expr_precedence(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary { op, .. } => op.precedence(),
        ExprKind::Unary { op: UnOp::Neg, .. } => PREC_NEG,
        ExprKind::Unary { op: UnOp::Not, .. } => PREC_NOT,
        _ => PREC_ATOM,
    }
}

/// Format a literal so that re-parsing yields the identical f64. Integral
/// values print without a fraction; tiny magnitudes keep exponent form so
/// constants like 1e-15 survive a round trip readably.
pub fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else if v != 0.0 && v.abs() < 1e-4 {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn pretty_print(program: &Program) -> String {
    let mut out = String::new();
    for stmt in &program.stmts {
        print_stmt(stmt, 0, &mut out);
    }
    out
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn print_block(body: &[Stmt], level: usize, out: &mut String) {
    out.push_str("{\n");
    for s in body {
        print_stmt(s, level + 1, out);
    }
    indent(level, out);
    out.push('}');
}

fn print_stmt(stmt: &Stmt, level: usize, out: &mut String) {
    indent(level, out);
    match &stmt.kind {
        StmtKind::Import { path, alias } => {
            let _ = write!(out, "source(\"{path}\") as {alias}");
        }
        StmtKind::FunDef {
            name,
            params,
            returns,
            body,
        } => {
            let _ = write!(out, "{name} = function(");
            print_params(params, out);
            out.push(')');
            if !returns.is_empty() {
                out.push_str(" return (");
                print_params(returns, out);
                out.push(')');
            }
            out.push(' ');
            print_block(body, level, out);
        }
        StmtKind::Assign { target, value } => {
            match target {
                LValue::Var(name) => out.push_str(name),
                LValue::Indexed { name, rows, cols } => print_index(name, rows, cols, out),
            }
            out.push_str(" = ");
            print_expr(value, out);
        }
        StmtKind::MultiAssign { targets, value } => {
            out.push('[');
            out.push_str(&targets.join(", "));
            out.push_str("] = ");
            print_expr(value, out);
        }
        StmtKind::For { var, lo, hi, body } => {
            let _ = write!(out, "for ({var} in ");
            print_expr(lo, out);
            out.push(':');
            print_expr(hi, out);
            out.push_str(") ");
            print_block(body, level, out);
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            out.push_str("if (");
            print_expr(cond, out);
            out.push_str(") ");
            print_block(then_body, level, out);
            if let Some(eb) = else_body {
                out.push_str(" else ");
                print_block(eb, level, out);
            }
        }
        StmtKind::ExprStmt { expr } => print_expr(expr, out),
    }
    out.push('\n');
}

fn print_params(params: &[Param], out: &mut String) {
    for (i, p) in params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        if let Some(ann) = p.kind.annotation() {
            let _ = write!(out, "{ann} ");
        }
        out.push_str(&p.name);
    }
}

fn print_range(sel: &Option<RangeSel>, out: &mut String) {
    if let Some(r) = sel {
        print_expr(&r.lo, out);
        if let Some(hi) = &r.hi {
            out.push(':');
            print_expr(hi, out);
        }
    }
}

fn print_index(base: &str, rows: &Option<RangeSel>, cols: &Option<RangeSel>, out: &mut String) {
    out.push_str(base);
    out.push('[');
    print_range(rows, out);
    out.push(',');
    if cols.is_some() {
        out.push(' ');
    }
    print_range(cols, out);
    out.push(']');
}

fn print_child(child: &Expr, min_prec: u8, out: &mut String) {
    if expr_precedence(child) < min_prec {
        out.push('(');
        print_expr(child, out);
        out.push(')');
    } else {
        print_expr(child, out);
    }
}

fn print_expr(e: &Expr, out: &mut String) {
    match &e.kind {
        ExprKind::Num(v) => out.push_str(&fmt_num(*v)),
        ExprKind::Str(s) => {
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    other => out.push(other),
                }
            }
            out.push('"');
        }
        ExprKind::Var(name) => out.push_str(name),
        ExprKind::Unary { op, operand } => {
            let (sym, prec) = match op {
                UnOp::Neg => ("-", PREC_NEG),
                UnOp::Not => ("!", PREC_NOT),
            };
            out.push_str(sym);
            print_child(operand, prec, out);
        }
        ExprKind::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            // Left-assoc: equal precedence is fine on the left, needs parens
            // on the right. Pow is the mirror image.
            let (lmin, rmin) = if *op == BinOp::Pow {
                (p + 1, p)
            } else {
                (p, p + 1)
            };
            print_child(lhs, lmin, out);
            let _ = write!(out, " {} ", op.symbol());
            print_child(rhs, rmin, out);
        }
        ExprKind::Call {
            namespace,
            name,
            args,
        } => {
            if let Some(ns) = namespace {
                let _ = write!(out, "{ns}::");
            }
            out.push_str(name);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                print_expr(a, out);
            }
            out.push(')');
        }
        ExprKind::Index { base, rows, cols } => print_index(base, rows, cols, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(v: f64) -> Expr {
        Expr {
            line: 0,
            kind: ExprKind::Num(v),
        }
    }

    fn bin(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr {
            line: 0,
            kind: ExprKind::Binary {
                op,
                lhs: Box::new(l),
                rhs: Box::new(r),
            },
        }
    }

    fn render(e: &Expr) -> String {
        let mut s = String::new();
        print_expr(e, &mut s);
        s
    }

    #[test]
    fn right_nested_subtraction_keeps_parens() {
        let e = bin(BinOp::Sub, num(1.0), bin(BinOp::Sub, num(2.0), num(3.0)));
        assert_eq!(render(&e), "1 - (2 - 3)");
        let f = bin(BinOp::Sub, bin(BinOp::Sub, num(1.0), num(2.0)), num(3.0));
        assert_eq!(render(&f), "1 - 2 - 3");
    }

    #[test]
    fn pow_is_right_associative_in_print() {
        let e = bin(BinOp::Pow, num(2.0), bin(BinOp::Pow, num(3.0), num(2.0)));
        assert_eq!(render(&e), "2 ^ 3 ^ 2");
        let f = bin(BinOp::Pow, bin(BinOp::Pow, num(2.0), num(3.0)), num(2.0));
        assert_eq!(render(&f), "(2 ^ 3) ^ 2");
    }

    #[test]
    fn mixed_precedence_drops_redundant_parens() {
        let e = bin(BinOp::Add, num(1.0), bin(BinOp::Mul, num(2.0), num(3.0)));
        assert_eq!(render(&e), "1 + 2 * 3");
        let f = bin(BinOp::Mul, bin(BinOp::Add, num(1.0), num(2.0)), num(3.0));
        assert_eq!(render(&f), "(1 + 2) * 3");
    }

    #[test]
    fn literal_formats_round_trip() {
        for v in [0.0, 1.0, -3.0, 0.01, 1e-15, 2.5e-7, 1234.5678, 1e20] {
            let printed = fmt_num(v);
            let back: f64 = printed.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "literal {printed} drifted");
        }
        assert_eq!(fmt_num(32.0), "32");
        assert_eq!(fmt_num(1e-15), "1e-15");
        assert_eq!(fmt_num(0.01), "0.01");
    }

    #[test]
    fn equality_ignores_line_numbers() {
        let a = Expr {
            line: 3,
            kind: ExprKind::Var("x".into()),
        };
        let b = Expr {
            line: 99,
            kind: ExprKind::Var("x".into()),
        };
        assert_eq!(a, b);
    }
}
