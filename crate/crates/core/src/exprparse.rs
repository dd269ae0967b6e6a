//! Scalar expressions for `f(x, u)`, `phi(x, u)` and `u0(x)`.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    = term   { ("+" | "-") term } ;
//! term    = unary  { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = atom [ "^" unary ] ;
//! atom    = number | ident | ident "(" expr ")" | "(" expr ")" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```
//!
//! `^` is right associative and binds tighter than unary minus, so `-2^2`
//! is `-4` and `2^-1` is `0.5`. Identifiers are the variables `x1`, `x2`,
//! `u`, `t`, the constants `pi` and `e`, and the functions `sin`, `cos`,
//! `exp`, `log`, `sqrt`, `abs`, `tanh`. The Unicode minus sign is accepted
//! as `-`. Error offsets are 1-based byte positions.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("variable `{var}` is not allowed in {slot}")]
    IllegalVariable { var: Var, slot: Slot },
    #[error("variable `{0}` is not bound")]
    Unbound(Var),
    #[error("domain error: {func}({arg})")]
    Domain { func: &'static str, arg: f64 },
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X1,
    X2,
    U,
    T,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::U => "u",
            Var::T => "t",
        })
    }
}

/// Which configuration field an expression fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    F,
    Phi,
    U0,
    Any,
}

impl Slot {
    fn allows(self, v: Var) -> bool {
        match self {
            Slot::F | Slot::Phi => v != Var::T,
            Slot::U0 => matches!(v, Var::X1 | Var::X2),
            Slot::Any => true,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slot::F => "f",
            Slot::Phi => "phi",
            Slot::U0 => "u0",
            Slot::Any => "expression",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    const ALL: [Func; 7] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    fn apply(self, x: f64) -> Result<f64, ExprError> {
        let domain = |func| ExprError::Domain { func, arg: x };
        Ok(match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Log if x <= 0.0 => return Err(domain("log")),
            Func::Log => x.ln(),
            Func::Sqrt if x < 0.0 => return Err(domain("sqrt")),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
            Func::Tanh => x.tanh(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Variable bindings for evaluation; unset variables are unbound.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Env {
    pub x1: Option<f64>,
    pub x2: Option<f64>,
    pub u: Option<f64>,
    pub t: Option<f64>,
}

impl Env {
    pub fn at(x: [f64; 2]) -> Self {
        Self {
            x1: Some(x[0]),
            x2: Some(x[1]),
            ..Self::default()
        }
    }

    pub fn with_u(mut self, u: f64) -> Self {
        self.u = Some(u);
        self
    }

    pub fn with_t(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    fn get(&self, v: Var) -> Option<f64> {
        match v {
            Var::X1 => self.x1,
            Var::X2 => self.x2,
            Var::U => self.u,
            Var::T => self.t,
        }
    }
}

impl Expr {
    pub fn eval(&self, env: &Env) -> Result<f64, ExprError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => env.get(*v).ok_or(ExprError::Unbound(*v)),
            Expr::Neg(a) => Ok(-a.eval(env)?),
            Expr::Call(f, a) => f.apply(a.eval(env)?),
            Expr::Binary(op, a, b) => {
                let x = a.eval(env)?;
                let y = b.eval(env)?;
                match op {
                    BinOp::Add => Ok(x + y),
                    BinOp::Sub => Ok(x - y),
                    BinOp::Mul => Ok(x * y),
                    BinOp::Div if y == 0.0 => Err(ExprError::DivisionByZero),
                    BinOp::Div => Ok(x / y),
                    BinOp::Pow => Ok(x.powf(y)),
                }
            }
        }
    }

    /// Central difference in `u` with step `h`.
    pub fn partial_u(&self, env: &Env, h: f64) -> Result<f64, ExprError> {
        let u = env.u.ok_or(ExprError::Unbound(Var::U))?;
        let plus = self.eval(&env.with_u(u + h))?;
        let minus = self.eval(&env.with_u(u - h))?;
        Ok((plus - minus) / (2.0 * h))
    }

    pub fn uses(&self, v: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(a) | Expr::Call(_, a) => a.uses(v),
            Expr::Binary(_, a, b) => a.uses(v) || b.uses(v),
        }
    }

    pub fn check_slot(&self, slot: Slot) -> Result<(), ExprError> {
        for v in [Var::X1, Var::X2, Var::U, Var::T] {
            if self.uses(v) && !slot.allows(v) {
                return Err(ExprError::IllegalVariable { var: v, slot });
            }
        }
        Ok(())
    }
}

/// Fully parenthesized; reparses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let tokens = lex(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end: src.len() + 1,
    };
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some((tok, off)) => Err(ExprError::Syntax {
            offset: off,
            message: format!("unexpected {tok}"),
        }),
    }
}

/// Parses and checks that only variables legal for `slot` appear.
pub fn parse_for(src: &str, slot: Slot) -> Result<Expr, ExprError> {
    let e = parse(src)?;
    e.check_slot(slot)?;
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(x) => write!(f, "number {x}"),
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Op(c) => write!(f, "`{c}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let offset = i + 1;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == b'.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                offset,
                message: format!("malformed number `{text}`"),
            })?;
            out.push((Tok::Num(value), offset));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), offset));
        } else if src[i..].starts_with('\u{2212}') {
            out.push((Tok::Op('-'), offset));
            i += '\u{2212}'.len_utf8();
        } else {
            let tok = match c {
                b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c as char),
                b'(' => Tok::LParen,
                b')' => Tok::RParen,
                _ => {
                    let ch = src[i..].chars().next().unwrap_or('?');
                    return Err(ExprError::Syntax {
                        offset,
                        message: format!("unexpected character `{ch}`"),
                    });
                }
            };
            out.push((tok, offset));
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<(Tok, usize)> {
        self.tokens.get(self.pos).cloned()
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.1)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some((Tok::Op(c), _)) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some((Tok::RParen, _)) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ExprError::Syntax {
                offset: self.offset(),
                message: "expected `)`".into(),
            }),
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        let Some((tok, _)) = self.peek() else {
            return Err(ExprError::Syntax {
                offset,
                message: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match tok {
            Tok::Num(x) => Ok(Expr::Const(x)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::lookup(&name) {
                    match self.peek() {
                        Some((Tok::LParen, _)) => self.pos += 1,
                        _ => {
                            return Err(ExprError::Syntax {
                                offset: self.offset(),
                                message: format!("expected `(` after `{name}`"),
                            })
                        }
                    }
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                match name.as_str() {
                    "x1" => Ok(Expr::Var(Var::X1)),
                    "x2" => Ok(Expr::Var(Var::X2)),
                    "u" => Ok(Expr::Var(Var::U)),
                    "t" => Ok(Expr::Var(Var::T)),
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    "e" => Ok(Expr::Const(std::f64::consts::E)),
                    _ => Err(ExprError::UnknownIdentifier { name, offset }),
                }
            }
            other => Err(ExprError::Syntax {
                offset,
                message: format!("unexpected {other}"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_at(src: &str, env: Env) -> Result<f64, ExprError> {
        parse(src)?.eval(&env)
    }

    #[test]
    fn basic_evaluation() {
        assert_eq!(eval_at("x1^2 + x2^2", Env::at([1.0, 2.0])).unwrap(), 5.0);
        assert_eq!(eval_at("2*exp(u) ", Env::default().with_u(0.0)).unwrap(), 2.0);
        assert_eq!(eval_at("\u{2212}x1", Env::at([3.0, 0.0])).unwrap(), -3.0);
    }

    #[test]
    fn precedence() {
        assert_eq!(eval_at("2+3*4^2", Env::default()).unwrap(), 50.0);
        assert_eq!(eval_at("-2^2", Env::default()).unwrap(), -4.0);
        assert_eq!(eval_at("2^3^2", Env::default()).unwrap(), 512.0);
        assert_eq!(eval_at("2^-1", Env::default()).unwrap(), 0.5);
        assert_eq!(eval_at("8/2/2", Env::default()).unwrap(), 2.0);
        assert_eq!(eval_at("1e-3*2E+2", Env::default()).unwrap(), 0.2);
    }

    #[test]
    fn unbalanced_paren_offset() {
        assert_eq!(
            parse("log(x1"),
            Err(ExprError::Syntax {
                offset: 7,
                message: "expected `)`".into()
            })
        );
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse("1 +"), Err(ExprError::Syntax { offset: 4, .. })));
        assert!(matches!(parse("1 $ 2"), Err(ExprError::Syntax { offset: 3, .. })));
        assert!(matches!(parse("(1))"), Err(ExprError::Syntax { offset: 4, .. })));
        assert!(matches!(parse("sin 1"), Err(ExprError::Syntax { .. })));
        assert_eq!(
            parse("y + 1"),
            Err(ExprError::UnknownIdentifier {
                name: "y".into(),
                offset: 1
            })
        );
    }

    #[test]
    fn evaluation_errors() {
        assert_eq!(
            eval_at("x1/x2", Env::at([1.0, 0.0])),
            Err(ExprError::DivisionByZero)
        );
        assert_eq!(
            eval_at("log(x1)", Env::at([-1.0, 0.0])),
            Err(ExprError::Domain {
                func: "log",
                arg: -1.0
            })
        );
        assert!(matches!(
            eval_at("sqrt(x1)", Env::at([-4.0, 0.0])),
            Err(ExprError::Domain { func: "sqrt", .. })
        ));
        assert_eq!(eval_at("u", Env::default()), Err(ExprError::Unbound(Var::U)));
    }

    #[test]
    fn slots() {
        assert!(parse_for("x1 + u", Slot::U0).is_err());
        assert!(parse_for("x1 + t", Slot::F).is_err());
        assert!(parse_for("exp(u) * x2", Slot::Phi).is_ok());
        assert_eq!(
            parse_for("t", Slot::U0),
            Err(ExprError::IllegalVariable {
                var: Var::T,
                slot: Slot::U0
            })
        );
    }

    #[test]
    fn constants() {
        assert_eq!(eval_at("pi", Env::default()).unwrap(), std::f64::consts::PI);
        assert_eq!(eval_at("e", Env::default()).unwrap(), std::f64::consts::E);
        assert_eq!(eval_at("2e", Env::default()), Err(ExprError::Syntax {
            offset: 2,
            message: "unexpected identifier `e`".into()
        }));
    }

    #[test]
    fn u_derivatives() {
        let env = Env::at([0.3, 0.4]).with_u(1.0);
        let phi = parse("1 - u").unwrap();
        assert!((phi.partial_u(&env, 1e-6).unwrap() + 1.0).abs() < 1e-9);
        let f = parse("exp(u)").unwrap();
        let ratio = f.partial_u(&env, 1e-6).unwrap() / f.eval(&env).unwrap();
        assert!((ratio - 1.0).abs() < 1e-9);
        let g = parse("1 + u^2").unwrap();
        assert!((g.partial_u(&env, 1e-6).unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn pythagorean_sweep() {
        use rand::{Rng, SeedableRng};
        let e = parse("sin(x1)^2 + cos(x1)^2").unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(200);
        for _ in 0..200 {
            let x = rng.gen_range(-50.0..50.0);
            let v = e.eval(&Env::at([x, 0.0])).unwrap();
            assert!((v - 1.0).abs() <= 1e-12);
        }
    }
}
