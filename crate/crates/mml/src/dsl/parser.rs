//! Recursive-descent parser. Statements end at a newline or semicolon at
//! bracket depth zero; the tokenizer already hides newlines inside
//! parentheses and square brackets so argument lists may wrap.

use super::ast::*;
use super::lexer::{tokenize, TokKind, Token};
use super::DslError;

pub fn parse(text: &str) -> Result<Program, DslError> {
    let toks = tokenize(text);
    let mut p = Parser { toks, pos: 0 };
    let mut stmts = Vec::new();
    p.skip_separators();
    while p.peek().is_some() {
        stmts.push(p.parse_stmt()?);
        p.expect_stmt_end()?;
        p.skip_separators();
    }
    Ok(Program { stmts })
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

fn describe(kind: &TokKind) -> String {
    match kind {
        TokKind::Ident(s) => format!("identifier {s:?}"),
        TokKind::Num(v) => format!("number {v}"),
        TokKind::Str(s) => format!("string {s:?}"),
        TokKind::Newline => "end of line".into(),
        TokKind::Error(msg) => msg.clone(),
        other => format!(
            "'{}'",
            match other {
                TokKind::Assign => "=",
                TokKind::Plus => "+",
                TokKind::Minus => "-",
                TokKind::Star => "*",
                TokKind::Slash => "/",
                TokKind::Caret => "^",
                TokKind::Modulo => "%%",
                TokKind::MatMul => "%*%",
                TokKind::Lt => "<",
                TokKind::Le => "<=",
                TokKind::Gt => ">",
                TokKind::Ge => ">=",
                TokKind::EqEq => "==",
                TokKind::Ne => "!=",
                TokKind::Not => "!",
                TokKind::And => "&",
                TokKind::Or => "|",
                TokKind::LParen => "(",
                TokKind::RParen => ")",
                TokKind::LBrace => "{",
                TokKind::RBrace => "}",
                TokKind::LBracket => "[",
                TokKind::RBracket => "]",
                TokKind::Comma => ",",
                TokKind::Semi => ";",
                TokKind::Colon => ":",
                TokKind::DoubleColon => "::",
                _ => unreachable!(),
            }
        ),
    }
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn peek_kind(&self, offset: usize) -> Option<&TokKind> {
        self.toks.get(self.pos + offset).map(|t| &t.kind)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> (usize, usize) {
        match self.peek() {
            Some(t) => (t.line, t.col),
            None => self
                .toks
                .last()
                .map(|t| (t.line, t.col))
                .unwrap_or((1, 1)),
        }
    }

    fn err(&self, msg: impl Into<String>) -> DslError {
        let (line, col) = self.here();
        DslError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn fail_expected(&self, what: &str) -> DslError {
        match self.peek() {
            Some(t) => self.err(format!("expected {what}, found {}", describe(&t.kind))),
            None => self.err(format!("expected {what}, found end of input")),
        }
    }

    fn expect(&mut self, kind: TokKind, what: &str) -> Result<Token, DslError> {
        match self.peek() {
            Some(t) if t.kind == kind => Ok(self.bump().unwrap()),
            _ => Err(self.fail_expected(what)),
        }
    }

    fn eat(&mut self, kind: TokKind) -> bool {
        if self.peek().map(|t| t.kind == kind).unwrap_or(false) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn skip_separators(&mut self) {
        while matches!(
            self.peek().map(|t| &t.kind),
            Some(TokKind::Newline) | Some(TokKind::Semi)
        ) {
            self.pos += 1;
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek().map(|t| &t.kind), Some(TokKind::Newline)) {
            self.pos += 1;
        }
    }

    fn expect_stmt_end(&mut self) -> Result<(), DslError> {
        match self.peek().map(|t| &t.kind) {
            None | Some(TokKind::Newline) | Some(TokKind::Semi) | Some(TokKind::RBrace) => Ok(()),
            Some(_) => Err(self.fail_expected("end of statement")),
        }
    }

    fn at_keyword(&self, word: &str) -> bool {
        matches!(self.peek().map(|t| &t.kind), Some(TokKind::Ident(s)) if s == word)
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), DslError> {
        match self.peek() {
            Some(Token {
                kind: TokKind::Ident(s),
                line,
                ..
            }) => {
                let out = (s.clone(), *line);
                self.pos += 1;
                Ok(out)
            }
            _ => Err(self.fail_expected(what)),
        }
    }

    fn parse_stmt(&mut self) -> Result<Stmt, DslError> {
        if let Some(t) = self.peek() {
            if let TokKind::Error(msg) = &t.kind {
                let (line, col) = (t.line, t.col);
                return Err(DslError::Syntax {
                    line,
                    col,
                    msg: msg.clone(),
                });
            }
        }
        if self.at_keyword("source") && self.peek_kind(1) == Some(&TokKind::LParen) {
            return self.parse_import();
        }
        if self.at_keyword("for") {
            return self.parse_for();
        }
        if self.at_keyword("if") {
            return self.parse_if();
        }
        if self.peek().map(|t| t.kind == TokKind::LBracket).unwrap_or(false) {
            return self.parse_multi_assign();
        }
        let expr = self.parse_expr()?;
        let line = expr.line;
        if self.eat(TokKind::Assign) {
            if self.at_keyword("function") {
                let name = match expr.kind {
                    ExprKind::Var(name) => name,
                    _ => return Err(self.err("function definitions need a plain name on the left")),
                };
                return self.parse_fundef(name, line);
            }
            let target = match expr.kind {
                ExprKind::Var(name) => LValue::Var(name),
                ExprKind::Index { base, rows, cols } => LValue::Indexed {
                    name: base,
                    rows,
                    cols,
                },
                _ => {
                    return Err(DslError::Syntax {
                        line,
                        col: 1,
                        msg: "invalid assignment target".into(),
                    })
                }
            };
            let value = self.parse_expr()?;
            return Ok(Stmt {
                line,
                kind: StmtKind::Assign { target, value },
            });
        }
        Ok(Stmt {
            line,
            kind: StmtKind::ExprStmt { expr },
        })
    }

    fn parse_import(&mut self) -> Result<Stmt, DslError> {
        let (_, line) = self.ident("'source'")?;
        self.expect(TokKind::LParen, "'('")?;
        let path = match self.peek() {
            Some(Token {
                kind: TokKind::Str(s),
                ..
            }) => {
                let s = s.clone();
                self.pos += 1;
                s
            }
            _ => return Err(self.fail_expected("a quoted script path")),
        };
        self.expect(TokKind::RParen, "')'")?;
        if !self.at_keyword("as") {
            return Err(self.fail_expected("'as'"));
        }
        self.pos += 1;
        let (alias, _) = self.ident("a namespace alias")?;
        Ok(Stmt {
            line,
            kind: StmtKind::Import { path, alias },
        })
    }

    fn parse_for(&mut self) -> Result<Stmt, DslError> {
        let (_, line) = self.ident("'for'")?;
        self.expect(TokKind::LParen, "'('")?;
        let (var, _) = self.ident("a loop variable")?;
        if !self.at_keyword("in") {
            return Err(self.fail_expected("'in'"));
        }
        self.pos += 1;
        let lo = self.parse_expr()?;
        self.expect(TokKind::Colon, "':' in loop range")?;
        let hi = self.parse_expr()?;
        self.expect(TokKind::RParen, "')'")?;
        let body = self.parse_block()?;
        Ok(Stmt {
            line,
            kind: StmtKind::For { var, lo, hi, body },
        })
    }

    fn parse_if(&mut self) -> Result<Stmt, DslError> {
        let (_, line) = self.ident("'if'")?;
        self.expect(TokKind::LParen, "'('")?;
        let cond = self.parse_expr()?;
        self.expect(TokKind::RParen, "')'")?;
        let then_body = self.parse_block()?;
        let else_body = if self.at_keyword("else") {
            self.pos += 1;
            if self.at_keyword("if") {
                Some(vec![self.parse_if()?])
            } else {
                Some(self.parse_block()?)
            }
        } else {
            None
        };
        Ok(Stmt {
            line,
            kind: StmtKind::If {
                cond,
                then_body,
                else_body,
            },
        })
    }

    fn parse_multi_assign(&mut self) -> Result<Stmt, DslError> {
        let line = self.here().0;
        self.expect(TokKind::LBracket, "'['")?;
        let mut targets = Vec::new();
        loop {
            let (name, _) = self.ident("a variable name")?;
            targets.push(name);
            if !self.eat(TokKind::Comma) {
                break;
            }
        }
        self.expect(TokKind::RBracket, "']'")?;
        self.expect(TokKind::Assign, "'='")?;
        let value = self.parse_expr()?;
        if !matches!(value.kind, ExprKind::Call { .. }) {
            return Err(DslError::Syntax {
                line,
                col: 1,
                msg: "multi-assignment requires a function call on the right".into(),
            });
        }
        Ok(Stmt {
            line,
            kind: StmtKind::MultiAssign { targets, value },
        })
    }

    fn parse_fundef(&mut self, name: String, line: usize) -> Result<Stmt, DslError> {
        self.pos += 1; // the 'function' word
        self.expect(TokKind::LParen, "'('")?;
        let params = self.parse_params(TokKind::RParen)?;
        self.expect(TokKind::RParen, "')'")?;
        // The return clause and body may start on a fresh line.
        self.skip_newlines();
        let returns = if self.at_keyword("return") {
            self.pos += 1;
            self.expect(TokKind::LParen, "'('")?;
            let r = self.parse_params(TokKind::RParen)?;
            self.expect(TokKind::RParen, "')'")?;
            self.skip_newlines();
            r
        } else {
            Vec::new()
        };
        let body = self.parse_block()?;
        Ok(Stmt {
            line,
            kind: StmtKind::FunDef {
                name,
                params,
                returns,
                body,
            },
        })
    }

    fn parse_params(&mut self, end: TokKind) -> Result<Vec<Param>, DslError> {
        let mut params = Vec::new();
        if self.peek().map(|t| t.kind == end).unwrap_or(false) {
            return Ok(params);
        }
        loop {
            params.push(self.parse_param()?);
            if !self.eat(TokKind::Comma) {
                break;
            }
        }
        Ok(params)
    }

    fn parse_param(&mut self) -> Result<Param, DslError> {
        let (first, _) = self.ident("a parameter")?;
        let kind = match first.as_str() {
            "matrix" if self.peek().map(|t| t.kind == TokKind::LBracket).unwrap_or(false) => {
                self.pos += 1;
                let (elem, _) = self.ident("an element type")?;
                if elem != "double" {
                    return Err(self.err(format!("unsupported matrix element type {elem:?}")));
                }
                self.expect(TokKind::RBracket, "']'")?;
                ParamKind::Matrix
            }
            "double" if matches!(self.peek_kind(0), Some(TokKind::Ident(_))) => ParamKind::Double,
            "integer" | "int" if matches!(self.peek_kind(0), Some(TokKind::Ident(_))) => {
                ParamKind::Int
            }
            "string" if matches!(self.peek_kind(0), Some(TokKind::Ident(_))) => ParamKind::Str,
            _ => {
                return Ok(Param {
                    name: first,
                    kind: ParamKind::Untyped,
                })
            }
        };
        let (name, _) = self.ident("a parameter name")?;
        Ok(Param { name, kind })
    }

    fn parse_block(&mut self) -> Result<Vec<Stmt>, DslError> {
        self.expect(TokKind::LBrace, "'{'")?;
        let mut body = Vec::new();
        self.skip_separators();
        while !self.peek().map(|t| t.kind == TokKind::RBrace).unwrap_or(false) {
            if self.peek().is_none() {
                return Err(self.fail_expected("'}'"));
            }
            body.push(self.parse_stmt()?);
            self.expect_stmt_end()?;
            self.skip_separators();
        }
        self.pos += 1; // closing brace
        Ok(body)
    }

    fn parse_expr(&mut self) -> Result<Expr, DslError> {
        self.parse_or()
    }

    fn parse_binary_level(
        &mut self,
        ops: &[(TokKind, BinOp)],
        next: fn(&mut Self) -> Result<Expr, DslError>,
    ) -> Result<Expr, DslError> {
        let mut lhs = next(self)?;
        'outer: loop {
            for (tok, op) in ops {
                if self.peek().map(|t| t.kind == *tok).unwrap_or(false) {
                    self.pos += 1;
                    let rhs = next(self)?;
                    let line = lhs.line;
                    lhs = Expr {
                        line,
                        kind: ExprKind::Binary {
                            op: *op,
                            lhs: Box::new(lhs),
                            rhs: Box::new(rhs),
                        },
                    };
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn parse_or(&mut self) -> Result<Expr, DslError> {
        self.parse_binary_level(&[(TokKind::Or, BinOp::Or)], Self::parse_and)
    }

    fn parse_and(&mut self) -> Result<Expr, DslError> {
        self.parse_binary_level(&[(TokKind::And, BinOp::And)], Self::parse_not)
    }

    fn parse_not(&mut self) -> Result<Expr, DslError> {
        if self.peek().map(|t| t.kind == TokKind::Not).unwrap_or(false) {
            let line = self.here().0;
            self.pos += 1;
            let operand = self.parse_not()?;
            return Ok(Expr {
                line,
                kind: ExprKind::Unary {
                    op: UnOp::Not,
                    operand: Box::new(operand),
                },
            });
        }
        self.parse_cmp()
    }

    fn parse_cmp(&mut self) -> Result<Expr, DslError> {
        self.parse_binary_level(
            &[
                (TokKind::Le, BinOp::Le),
                (TokKind::Ge, BinOp::Ge),
                (TokKind::Lt, BinOp::Lt),
                (TokKind::Gt, BinOp::Gt),
                (TokKind::EqEq, BinOp::Eq),
                (TokKind::Ne, BinOp::Ne),
            ],
            Self::parse_add,
        )
    }

    fn parse_add(&mut self) -> Result<Expr, DslError> {
        self.parse_binary_level(
            &[(TokKind::Plus, BinOp::Add), (TokKind::Minus, BinOp::Sub)],
            Self::parse_mul,
        )
    }

    fn parse_mul(&mut self) -> Result<Expr, DslError> {
        self.parse_binary_level(
            &[
                (TokKind::Star, BinOp::Mul),
                (TokKind::Slash, BinOp::Div),
                (TokKind::Modulo, BinOp::Mod),
                (TokKind::MatMul, BinOp::MatMul),
            ],
            Self::parse_unary,
        )
    }

    fn parse_unary(&mut self) -> Result<Expr, DslError> {
        if self.peek().map(|t| t.kind == TokKind::Minus).unwrap_or(false) {
            let line = self.here().0;
            self.pos += 1;
            let operand = self.parse_unary()?;
            return Ok(Expr {
                line,
                kind: ExprKind::Unary {
                    op: UnOp::Neg,
                    operand: Box::new(operand),
                },
            });
        }
        self.parse_pow()
    }

    fn parse_pow(&mut self) -> Result<Expr, DslError> {
        let base = self.parse_atom()?;
        if self.peek().map(|t| t.kind == TokKind::Caret).unwrap_or(false) {
            self.pos += 1;
            // Right-assoc, and the exponent may carry its own leading minus.
            let exponent = self.parse_unary()?;
            let line = base.line;
            return Ok(Expr {
                line,
                kind: ExprKind::Binary {
                    op: BinOp::Pow,
                    lhs: Box::new(base),
                    rhs: Box::new(exponent),
                },
            });
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr, DslError> {
        match self.peek().cloned() {
            Some(Token {
                kind: TokKind::Num(v),
                line,
                ..
            }) => {
                self.pos += 1;
                Ok(Expr {
                    line,
                    kind: ExprKind::Num(v),
                })
            }
            Some(Token {
                kind: TokKind::Str(s),
                line,
                ..
            }) => {
                self.pos += 1;
                Ok(Expr {
                    line,
                    kind: ExprKind::Str(s),
                })
            }
            Some(Token {
                kind: TokKind::LParen,
                ..
            }) => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                self.expect(TokKind::RParen, "')'")?;
                Ok(inner)
            }
            Some(Token {
                kind: TokKind::Ident(name),
                line,
                ..
            }) => {
                self.pos += 1;
                if self.eat(TokKind::DoubleColon) {
                    let (func, _) = self.ident("a function name after '::'")?;
                    self.expect(TokKind::LParen, "'(' to call the namespaced function")?;
                    let args = self.parse_args()?;
                    return Ok(Expr {
                        line,
                        kind: ExprKind::Call {
                            namespace: Some(name),
                            name: func,
                            args,
                        },
                    });
                }
                if self.eat(TokKind::LParen) {
                    let args = self.parse_args()?;
                    return Ok(Expr {
                        line,
                        kind: ExprKind::Call {
                            namespace: None,
                            name,
                            args,
                        },
                    });
                }
                if self.eat(TokKind::LBracket) {
                    let (rows, cols) = self.parse_selectors()?;
                    return Ok(Expr {
                        line,
                        kind: ExprKind::Index {
                            base: name,
                            rows,
                            cols,
                        },
                    });
                }
                Ok(Expr {
                    line,
                    kind: ExprKind::Var(name),
                })
            }
            Some(Token {
                kind: TokKind::Error(msg),
                line,
                col,
            }) => Err(DslError::Syntax { line, col, msg }),
            _ => Err(self.fail_expected("an expression")),
        }
    }

    fn parse_args(&mut self) -> Result<Vec<Expr>, DslError> {
        let mut args = Vec::new();
        if self.eat(TokKind::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.parse_expr()?);
            if !self.eat(TokKind::Comma) {
                break;
            }
        }
        self.expect(TokKind::RParen, "')' after arguments")?;
        Ok(args)
    }

    fn parse_selectors(&mut self) -> Result<(Option<RangeSel>, Option<RangeSel>), DslError> {
        let rows = if self.peek().map(|t| t.kind == TokKind::Comma).unwrap_or(false) {
            None
        } else {
            Some(self.parse_range_sel()?)
        };
        self.expect(TokKind::Comma, "',' between row and column selectors")?;
        let cols = if self.peek().map(|t| t.kind == TokKind::RBracket).unwrap_or(false) {
            None
        } else {
            Some(self.parse_range_sel()?)
        };
        self.expect(TokKind::RBracket, "']'")?;
        Ok((rows, cols))
    }

    fn parse_range_sel(&mut self) -> Result<RangeSel, DslError> {
        let lo = Box::new(self.parse_expr()?);
        let hi = if self.eat(TokKind::Colon) {
            Some(Box::new(self.parse_expr()?))
        } else {
            None
        };
        Ok(RangeSel { lo, hi })
    }
}
