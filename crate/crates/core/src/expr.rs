//! Scalar expressions of `n` real variables: parsing, evaluation and exact
//! first derivatives.
//!
//! The grammar is deliberately small. Variables are written `x1`, `x2`, ...
//! (1-based). Supported functions: `sin`, `cos`, `exp`, `log`, `sqrt`, `abs`.
//! Derivatives are computed by forward-mode dual numbers, one pass per
//! variable, so gradients are exact up to floating point rounding.

use std::fmt;

use thiserror::Error;

/// A parsed, immutable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Number(f64),
    /// 1-based variable index, i.e. `Var(1)` is `x1`.
    Var(usize),
    Neg(Box<Expression>),
    Add(Box<Expression>, Box<Expression>),
    Sub(Box<Expression>, Box<Expression>),
    Mul(Box<Expression>, Box<Expression>),
    Div(Box<Expression>, Box<Expression>),
    Pow(Box<Expression>, Box<Expression>),
    Func(Function, Box<Expression>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Function {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Function {
    fn name(self) -> &'static str {
        match self {
            Function::Sin => "sin",
            Function::Cos => "cos",
            Function::Exp => "exp",
            Function::Log => "log",
            Function::Sqrt => "sqrt",
            Function::Abs => "abs",
        }
    }

    fn from_name(s: &str) -> Option<Function> {
        Some(match s {
            "sin" => Function::Sin,
            "cos" => Function::Cos,
            "exp" => Function::Exp,
            "log" => Function::Log,
            "sqrt" => Function::Sqrt,
            "abs" => Function::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("sqrt of negative value {0}")]
    SqrtDomain(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-integer power of non-positive base {0}")]
    PowDomain(f64),
    #[error("variable x{0} out of range for point of dimension {1}")]
    VarOutOfRange(usize, usize),
    #[error("abs is not differentiable at 0")]
    AbsNotDifferentiable,
}

/// Dual number for forward-mode differentiation: value plus derivative with
/// respect to one chosen variable.
#[derive(Debug, Clone, Copy)]
struct Dual {
    val: f64,
    der: f64,
}

impl Expression {
    /// Largest variable index appearing in the expression, 0 if none.
    pub fn max_var(&self) -> usize {
        match self {
            Expression::Number(_) => 0,
            Expression::Var(i) => *i,
            Expression::Neg(a) | Expression::Func(_, a) => a.max_var(),
            Expression::Add(a, b)
            | Expression::Sub(a, b)
            | Expression::Mul(a, b)
            | Expression::Div(a, b)
            | Expression::Pow(a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn evaluate(&self, p: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expression::Number(c) => Ok(*c),
            Expression::Var(i) => {
                if *i > p.len() {
                    Err(EvalError::VarOutOfRange(*i, p.len()))
                } else {
                    Ok(p[*i - 1])
                }
            }
            Expression::Neg(a) => Ok(-a.evaluate(p)?),
            Expression::Add(a, b) => Ok(a.evaluate(p)? + b.evaluate(p)?),
            Expression::Sub(a, b) => Ok(a.evaluate(p)? - b.evaluate(p)?),
            Expression::Mul(a, b) => Ok(a.evaluate(p)? * b.evaluate(p)?),
            Expression::Div(a, b) => {
                let d = b.evaluate(p)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                Ok(a.evaluate(p)? / d)
            }
            Expression::Pow(a, b) => {
                let base = a.evaluate(p)?;
                let expo = b.evaluate(p)?;
                pow_checked(base, expo)
            }
            Expression::Func(f, a) => {
                let v = a.evaluate(p)?;
                match f {
                    Function::Sin => Ok(v.sin()),
                    Function::Cos => Ok(v.cos()),
                    Function::Exp => Ok(v.exp()),
                    Function::Log => {
                        if v <= 0.0 {
                            Err(EvalError::LogDomain(v))
                        } else {
                            Ok(v.ln())
                        }
                    }
                    Function::Sqrt => {
                        if v < 0.0 {
                            Err(EvalError::SqrtDomain(v))
                        } else {
                            Ok(v.sqrt())
                        }
                    }
                    Function::Abs => Ok(v.abs()),
                }
            }
        }
    }

    /// Exact gradient at `p`, one forward pass per variable.
    pub fn gradient(&self, p: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut grad = vec![0.0; p.len()];
        for (wrt, slot) in grad.iter_mut().enumerate() {
            *slot = self.eval_dual(p, wrt)?.der;
        }
        Ok(grad)
    }

    /// Partial derivative with respect to variable `wrt` (0-based).
    fn eval_dual(&self, p: &[f64], wrt: usize) -> Result<Dual, EvalError> {
        match self {
            Expression::Number(c) => Ok(Dual { val: *c, der: 0.0 }),
            Expression::Var(i) => {
                if *i > p.len() {
                    return Err(EvalError::VarOutOfRange(*i, p.len()));
                }
                Ok(Dual {
                    val: p[*i - 1],
                    der: if *i - 1 == wrt { 1.0 } else { 0.0 },
                })
            }
            Expression::Neg(a) => {
                let a = a.eval_dual(p, wrt)?;
                Ok(Dual {
                    val: -a.val,
                    der: -a.der,
                })
            }
            Expression::Add(a, b) => {
                let (a, b) = (a.eval_dual(p, wrt)?, b.eval_dual(p, wrt)?);
                Ok(Dual {
                    val: a.val + b.val,
                    der: a.der + b.der,
                })
            }
            Expression::Sub(a, b) => {
                let (a, b) = (a.eval_dual(p, wrt)?, b.eval_dual(p, wrt)?);
                Ok(Dual {
                    val: a.val - b.val,
                    der: a.der - b.der,
                })
            }
            Expression::Mul(a, b) => {
                let (a, b) = (a.eval_dual(p, wrt)?, b.eval_dual(p, wrt)?);
                Ok(Dual {
                    val: a.val * b.val,
                    der: a.der * b.val + a.val * b.der,
                })
            }
            Expression::Div(a, b) => {
                let (a, b) = (a.eval_dual(p, wrt)?, b.eval_dual(p, wrt)?);
                if b.val == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                Ok(Dual {
                    val: a.val / b.val,
                    der: (a.der * b.val - a.val * b.der) / (b.val * b.val),
                })
            }
            Expression::Pow(a, b) => {
                let base = a.eval_dual(p, wrt)?;
                let expo = b.eval_dual(p, wrt)?;
                if expo.der == 0.0 && expo.val.fract() == 0.0 {
                    // constant integer exponent: n * a^(n-1) * a'
                    let n = expo.val;
                    let val = pow_checked(base.val, n)?;
                    let der = if base.der == 0.0 {
                        0.0
                    } else {
                        n * pow_checked(base.val, n - 1.0)? * base.der
                    };
                    Ok(Dual { val, der })
                } else {
                    // a^b = exp(b log a), requires a > 0
                    if base.val <= 0.0 {
                        return Err(EvalError::PowDomain(base.val));
                    }
                    let val = base.val.powf(expo.val);
                    let der =
                        val * (expo.der * base.val.ln() + expo.val * base.der / base.val);
                    Ok(Dual { val, der })
                }
            }
            Expression::Func(f, a) => {
                let a = a.eval_dual(p, wrt)?;
                let (val, dfdx) = match f {
                    Function::Sin => (a.val.sin(), a.val.cos()),
                    Function::Cos => (a.val.cos(), -a.val.sin()),
                    Function::Exp => (a.val.exp(), a.val.exp()),
                    Function::Log => {
                        if a.val <= 0.0 {
                            return Err(EvalError::LogDomain(a.val));
                        }
                        (a.val.ln(), 1.0 / a.val)
                    }
                    Function::Sqrt => {
                        if a.val < 0.0 {
                            return Err(EvalError::SqrtDomain(a.val));
                        }
                        (a.val.sqrt(), 0.5 / a.val.sqrt())
                    }
                    Function::Abs => {
                        if a.val == 0.0 && a.der != 0.0 {
                            return Err(EvalError::AbsNotDifferentiable);
                        }
                        (a.val.abs(), a.val.signum())
                    }
                };
                Ok(Dual {
                    val,
                    der: dfdx * a.der,
                })
            }
        }
    }
}

fn pow_checked(base: f64, expo: f64) -> Result<f64, EvalError> {
    if expo.fract() == 0.0 {
        if base == 0.0 && expo < 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        Ok(base.powi(expo as i32))
    } else if base <= 0.0 {
        Err(EvalError::PowDomain(base))
    } else {
        Ok(base.powf(expo))
    }
}

impl fmt::Display for Expression {
    /// Fully parenthesized form; parses back to an equivalent tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Number(c) => {
                if *c < 0.0 {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Expression::Var(i) => write!(f, "x{i}"),
            Expression::Neg(a) => write!(f, "(-{a})"),
            Expression::Add(a, b) => write!(f, "({a} + {b})"),
            Expression::Sub(a, b) => write!(f, "({a} - {b})"),
            Expression::Mul(a, b) => write!(f, "({a} * {b})"),
            Expression::Div(a, b) => write!(f, "({a} / {b})"),
            Expression::Pow(a, b) => write!(f, "({a}^{b})"),
            Expression::Func(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// Parse a scalar expression.
///
/// Grammar:
/// ```text
/// expr   := term (('+'|'-') term)*
/// term   := factor (('*'|'/') factor)*
/// factor := atom ('^' atom)?
/// atom   := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')' | '-' atom
/// VAR    := 'x' [1-9][0-9]*
/// ```
pub fn parse(text: &str) -> Result<Expression, ParseError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(ParseError::Syntax {
            offset: p.pos,
            message: format!("unexpected character `{}`", p.bytes[p.pos] as char),
        });
    }
    Ok(e)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == b'+' {
                Expression::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expression::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.factor()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = if c == b'*' {
                Expression::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expression::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expression, ParseError> {
        let base = self.atom()?;
        if let Some(b'^') = self.peek() {
            self.pos += 1;
            let expo = self.atom()?;
            return Ok(Expression::Pow(Box::new(base), Box::new(expo)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expression, ParseError> {
        match self.peek() {
            None => Err(ParseError::Syntax {
                offset: self.pos,
                message: "unexpected end of input".into(),
            }),
            Some(b'-') => {
                self.pos += 1;
                Ok(Expression::Neg(Box::new(self.atom()?)))
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(c) => Err(ParseError::Syntax {
                offset: self.pos,
                message: format!("unexpected character `{}`", c as char),
            }),
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError::Syntax {
                offset: self.pos,
                message: format!("expected `{}`", c as char),
            })
        }
    }

    fn number(&mut self) -> Result<Expression, ParseError> {
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_digit() || *c == b'.')
        {
            self.pos += 1;
        }
        // exponent suffix like 1e-3
        if self.bytes.get(self.pos).is_some_and(|c| *c == b'e' || *c == b'E') {
            let mut end = self.pos + 1;
            if self.bytes.get(end).is_some_and(|c| *c == b'+' || *c == b'-') {
                end += 1;
            }
            if self.bytes.get(end).is_some_and(u8::is_ascii_digit) {
                self.pos = end;
                while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expression::Number)
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("invalid number `{text}`"),
            })
    }

    fn identifier(&mut self) -> Result<Expression, ParseError> {
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric())
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        if let Some(rest) = name.strip_prefix('x') {
            if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                if rest.starts_with('0') {
                    return Err(ParseError::Syntax {
                        offset: start,
                        message: "variable indices are 1-based without leading zeros".into(),
                    });
                }
                return Ok(Expression::Var(rest.parse().unwrap()));
            }
        }
        if let Some(func) = Function::from_name(name) {
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(Expression::Func(func, Box::new(arg)));
        }
        Err(ParseError::UnknownIdentifier {
            offset: start,
            name: name.to_string(),
        })
    }
}
