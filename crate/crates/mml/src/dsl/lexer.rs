//! Tokenizer for the scripting language. Total: any byte string tokenizes,
//! with problems surfacing as `Error` tokens carrying line and column.
//!
//! Newlines are tokens at bracket depth zero (they terminate statements) and
//! are swallowed inside parentheses or square brackets, which is how long
//! call argument lists can wrap lines.

#[derive(Debug, Clone, PartialEq)]
pub enum TokKind {
    Ident(String),
    Num(f64),
    Str(String),
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Modulo,
    MatMul,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    Not,
    And,
    Or,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    DoubleColon,
    Newline,
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokKind,
    pub line: usize,
    pub col: usize,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out: Vec<Token> = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    // ( and [ nesting; newlines inside are insignificant.
    let mut depth = 0usize;

    let push = |kind: TokKind, line: usize, col: usize, out: &mut Vec<Token>| {
        out.push(Token { kind, line, col });
    };

    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        macro_rules! advance {
            ($n:expr) => {{
                for k in 0..$n {
                    if chars[i + k] == '\n' {
                        line += 1;
                        col = 1;
                    } else {
                        col += 1;
                    }
                }
                i += $n;
            }};
        }
        match c {
            '\n' => {
                if depth == 0 {
                    // Collapse runs of blank lines into one separator.
                    if !matches!(out.last().map(|t| &t.kind), Some(TokKind::Newline) | None) {
                        push(TokKind::Newline, tline, tcol, &mut out);
                    }
                }
                advance!(1);
            }
            ' ' | '\t' | '\r' => advance!(1),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    advance!(1);
                }
            }
            '(' => {
                depth += 1;
                push(TokKind::LParen, tline, tcol, &mut out);
                advance!(1);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                push(TokKind::RParen, tline, tcol, &mut out);
                advance!(1);
            }
            '[' => {
                depth += 1;
                push(TokKind::LBracket, tline, tcol, &mut out);
                advance!(1);
            }
            ']' => {
                depth = depth.saturating_sub(1);
                push(TokKind::RBracket, tline, tcol, &mut out);
                advance!(1);
            }
            '{' => {
                push(TokKind::LBrace, tline, tcol, &mut out);
                advance!(1);
            }
            '}' => {
                push(TokKind::RBrace, tline, tcol, &mut out);
                advance!(1);
            }
            ',' => {
                push(TokKind::Comma, tline, tcol, &mut out);
                advance!(1);
            }
            ';' => {
                push(TokKind::Semi, tline, tcol, &mut out);
                advance!(1);
            }
            '+' => {
                push(TokKind::Plus, tline, tcol, &mut out);
                advance!(1);
            }
            '-' => {
                push(TokKind::Minus, tline, tcol, &mut out);
                advance!(1);
            }
            '*' => {
                push(TokKind::Star, tline, tcol, &mut out);
                advance!(1);
            }
            '/' => {
                push(TokKind::Slash, tline, tcol, &mut out);
                advance!(1);
            }
            '^' => {
                push(TokKind::Caret, tline, tcol, &mut out);
                advance!(1);
            }
            '%' => {
                if i + 2 < chars.len() && chars[i + 1] == '*' && chars[i + 2] == '%' {
                    push(TokKind::MatMul, tline, tcol, &mut out);
                    advance!(3);
                } else if i + 1 < chars.len() && chars[i + 1] == '%' {
                    push(TokKind::Modulo, tline, tcol, &mut out);
                    advance!(2);
                } else {
                    push(
                        TokKind::Error("stray '%'; did you mean '%%' or '%*%'".into()),
                        tline,
                        tcol,
                        &mut out,
                    );
                    advance!(1);
                }
            }
            '<' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push(TokKind::Le, tline, tcol, &mut out);
                    advance!(2);
                } else {
                    push(TokKind::Lt, tline, tcol, &mut out);
                    advance!(1);
                }
            }
            '>' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push(TokKind::Ge, tline, tcol, &mut out);
                    advance!(2);
                } else {
                    push(TokKind::Gt, tline, tcol, &mut out);
                    advance!(1);
                }
            }
            '=' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push(TokKind::EqEq, tline, tcol, &mut out);
                    advance!(2);
                } else {
                    push(TokKind::Assign, tline, tcol, &mut out);
                    advance!(1);
                }
            }
            '!' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push(TokKind::Ne, tline, tcol, &mut out);
                    advance!(2);
                } else {
                    push(TokKind::Not, tline, tcol, &mut out);
                    advance!(1);
                }
            }
            '&' => {
                push(TokKind::And, tline, tcol, &mut out);
                advance!(1);
            }
            '|' => {
                push(TokKind::Or, tline, tcol, &mut out);
                advance!(1);
            }
            ':' => {
                if i + 1 < chars.len() && chars[i + 1] == ':' {
                    push(TokKind::DoubleColon, tline, tcol, &mut out);
                    advance!(2);
                } else {
                    push(TokKind::Colon, tline, tcol, &mut out);
                    advance!(1);
                }
            }
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                let mut closed = false;
                while j < chars.len() {
                    match chars[j] {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' if j + 1 < chars.len() => {
                            s.push(match chars[j + 1] {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                            j += 2;
                        }
                        '\n' => break,
                        other => {
                            s.push(other);
                            j += 1;
                        }
                    }
                }
                if closed {
                    let len = j + 1 - i;
                    push(TokKind::Str(s), tline, tcol, &mut out);
                    advance!(len);
                } else {
                    push(
                        TokKind::Error("unterminated string literal".into()),
                        tline,
                        tcol,
                        &mut out,
                    );
                    advance!(j - i);
                }
            }
            d if d.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j < chars.len() && chars[j] == '.' {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let len = j - i;
                match text.parse::<f64>() {
                    Ok(v) => push(TokKind::Num(v), tline, tcol, &mut out),
                    Err(_) => push(
                        TokKind::Error(format!("bad number literal {text:?}")),
                        tline,
                        tcol,
                        &mut out,
                    ),
                }
                advance!(len);
            }
            a if a.is_ascii_alphabetic() || a == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                let len = j - i;
                push(TokKind::Ident(text), tline, tcol, &mut out);
                advance!(len);
            }
            other => {
                push(
                    TokKind::Error(format!("illegal character {other:?}")),
                    tline,
                    tcol,
                    &mut out,
                );
                advance!(1);
            }
        }
    }
    out
}
