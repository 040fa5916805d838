//! Recursive-descent parser for the payoff grammar. Precedence, tightest
//! first: function call / atom, unary minus, `* /`, `+ -`. Errors carry
//! the 1-based column of the offending token.

use crate::error::{GmError, Result};

use super::{BinOp, Expr, Func, PayoffExpr};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token and its 1-based starting column.
    fn next(&mut self) -> Result<(Tok, usize)> {
        self.skip_ws();
        let col = self.pos + 1;
        if self.pos >= self.src.len() {
            return Ok((Tok::End, col));
        }
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'0'..=b'9' | b'.' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
                {
                    self.pos += 1;
                }
                // exponent part
                if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
                    let mut p = self.pos + 1;
                    if p < self.src.len() && (self.src[p] == b'+' || self.src[p] == b'-') {
                        p += 1;
                    }
                    if p < self.src.len() && self.src[p].is_ascii_digit() {
                        self.pos = p;
                        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                            self.pos += 1;
                        }
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let v: f64 = text.parse().map_err(|_| GmError::Parse {
                    col,
                    msg: format!("invalid number `{text}`"),
                })?;
                Tok::Num(v)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Tok::Ident(std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string())
            }
            other => {
                return Err(GmError::Parse {
                    col,
                    msg: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok((tok, col))
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    col: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self> {
        let mut lexer = Lexer::new(src);
        let (tok, col) = lexer.next()?;
        Ok(Self { lexer, tok, col })
    }

    fn advance(&mut self) -> Result<()> {
        let (tok, col) = self.lexer.next()?;
        self.tok = tok;
        self.col = col;
        Ok(())
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.tok == tok {
            self.advance()
        } else {
            Err(GmError::Parse {
                col: self.col,
                msg: format!("expected {what}"),
            })
        }
    }

    fn additive(&mut self) -> Result<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.multiplicative()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn multiplicative(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.tok == Tok::Minus {
            self.advance()?;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Lit(v))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.additive()?;
                self.expect(Tok::RParen, "closing `)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let col = self.col;
                self.advance()?;
                if self.tok == Tok::LParen {
                    self.call(&name, col)
                } else {
                    parse_var(&name, col)
                }
            }
            _ => Err(GmError::Parse {
                col: self.col,
                msg: "expected a number, variable, function call or `(`".into(),
            }),
        }
    }

    fn call(&mut self, name: &str, col: usize) -> Result<Expr> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.tok != Tok::RParen {
            loop {
                args.push(self.additive()?);
                if self.tok == Tok::Comma {
                    self.advance()?;
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "closing `)`")?;

        if name == "pow" {
            if args.len() != 2 {
                return Err(GmError::Parse {
                    col,
                    msg: format!("pow takes 2 arguments, got {}", args.len()),
                });
            }
            let exponent = match args[1] {
                Expr::Lit(v) if v >= 0.0 && v == v.trunc() && v <= u32::MAX as f64 => v as u32,
                _ => {
                    return Err(GmError::Parse {
                        col,
                        msg: "pow exponent must be a nonnegative integer literal".into(),
                    })
                }
            };
            let base = args.into_iter().next().unwrap();
            return Ok(Expr::Pow(Box::new(base), exponent));
        }

        let func = match name {
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "clamp" => Func::Clamp,
            _ => {
                return Err(GmError::Parse {
                    col,
                    msg: format!("unknown function `{name}`"),
                })
            }
        };
        if args.len() != func.arity() {
            return Err(GmError::Parse {
                col,
                msg: format!(
                    "{} takes {} argument(s), got {}",
                    func.name(),
                    func.arity(),
                    args.len()
                ),
            });
        }
        Ok(Expr::Call(func, args))
    }
}

fn parse_var(name: &str, col: usize) -> Result<Expr> {
    if let Some(idx) = name.strip_prefix('b') {
        if let Ok(i) = idx.parse::<usize>() {
            if i >= 1 {
                return Ok(Expr::Var(i - 1));
            }
        }
    }
    Err(GmError::Parse {
        col,
        msg: format!("unknown identifier `{name}` (variables are b1, b2, ...)"),
    })
}

/// Parse and validate a payoff expression.
pub fn parse_payoff(text: &str) -> Result<PayoffExpr> {
    let mut parser = Parser::new(text)?;
    let expr = parser.additive()?;
    if parser.tok != Tok::End {
        return Err(GmError::Parse {
            col: parser.col,
            msg: "unexpected trailing input".into(),
        });
    }
    PayoffExpr::new(expr)
}
