//! Scalar expressions over named variables.
//!
//! Potentials, curve parametrizations and transverse wells are declared as
//! text in configuration files and turned into [`PotentialExpr`] values here.
//! The grammar is small: `+ - * / ^`, unary minus, numeric literals, the
//! constant `pi`, and the functions `exp log sin cos sqrt abs cutoff`.
//! `cutoff(t)` is a C-infinity step equal to 1 for `t <= 0` and 0 for
//! `t >= 1`; its first two derivatives are available as `dcutoff` and
//! `d2cutoff`.

mod diff;
mod parse;

use std::fmt;

use thiserror::Error;

pub use parse::parse;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("expected a point of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("`{0}` is not a variable of this expression")]
    UnknownVariable(String),
    #[error("cannot differentiate `{0}` symbolically")]
    NonDifferentiable(String),
}

/// Built-in scalar functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Cutoff,
    DCutoff,
    D2Cutoff,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Cutoff => "cutoff",
            Func::DCutoff => "dcutoff",
            Func::D2Cutoff => "d2cutoff",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "cutoff" => Func::Cutoff,
            "dcutoff" => Func::DCutoff,
            "d2cutoff" => Func::D2Cutoff,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> Result<f64, ExprError> {
        match self {
            Func::Exp => Ok(v.exp()),
            Func::Log if v <= 0.0 => Err(ExprError::Domain(format!("log of non-positive value {v}"))),
            Func::Log => Ok(v.ln()),
            Func::Sin => Ok(v.sin()),
            Func::Cos => Ok(v.cos()),
            Func::Sqrt if v < 0.0 => Err(ExprError::Domain(format!("sqrt of negative value {v}"))),
            Func::Sqrt => Ok(v.sqrt()),
            Func::Abs => Ok(v.abs()),
            Func::Cutoff => Ok(cutoff_derivatives(v).0),
            Func::DCutoff => Ok(cutoff_derivatives(v).1),
            Func::D2Cutoff => Ok(cutoff_derivatives(v).2),
        }
    }
}

/// Value, first and second derivative of the smooth step
/// `s(t) = 1 / (1 + q(t))`, `q(t) = exp(1/(1-t) - 1/t)` on `(0, 1)`.
fn cutoff_derivatives(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (1.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let u = 1.0 - t;
    let e = 1.0 / u - 1.0 / t;
    if e.abs() > 700.0 {
        return if e > 0.0 { (0.0, 0.0, 0.0) } else { (1.0, 0.0, 0.0) };
    }
    let q = e.exp();
    let r = 1.0 / (t * t) + 1.0 / (u * u);
    let dr = -2.0 / (t * t * t) + 2.0 / (u * u * u);
    let dq = q * r;
    let d2q = dq * r + q * dr;
    let p = 1.0 + q;
    let s = 1.0 / p;
    let ds = -dq / (p * p);
    let d2s = -d2q / (p * p) + 2.0 * dq * dq / (p * p * p);
    (s, ds, d2s)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        Ok(match self {
            Node::Num(v) => *v,
            Node::Var(i) => point[*i],
            Node::Neg(a) => -a.eval(point)?,
            Node::Add(a, b) => a.eval(point)? + b.eval(point)?,
            Node::Sub(a, b) => a.eval(point)? - b.eval(point)?,
            Node::Mul(a, b) => a.eval(point)? * b.eval(point)?,
            Node::Div(a, b) => {
                let den = b.eval(point)?;
                if den == 0.0 {
                    return Err(ExprError::Domain("division by zero".into()));
                }
                a.eval(point)? / den
            }
            Node::Pow(a, b) => {
                let base = a.eval(point)?;
                let exp = b.eval(point)?;
                pow(base, exp)?
            }
            Node::Call(f, a) => f.apply(a.eval(point)?)?,
        })
    }

    pub(crate) fn depends_on(&self, var: usize) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(i) => *i == var,
            Node::Neg(a) | Node::Call(_, a) => a.depends_on(var),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.depends_on(var) || b.depends_on(var)
            }
        }
    }

    fn write(&self, vars: &[String], out: &mut String) {
        use std::fmt::Write;
        match self {
            Node::Num(v) => {
                if *v < 0.0 {
                    let _ = write!(out, "(-{:?})", -v);
                } else {
                    let _ = write!(out, "{v:?}");
                }
            }
            Node::Var(i) => out.push_str(&vars[*i]),
            Node::Neg(a) => {
                out.push_str("(-");
                a.write(vars, out);
                out.push(')');
            }
            Node::Add(a, b) => binary(out, vars, a, "+", b),
            Node::Sub(a, b) => binary(out, vars, a, "-", b),
            Node::Mul(a, b) => binary(out, vars, a, "*", b),
            Node::Div(a, b) => binary(out, vars, a, "/", b),
            Node::Pow(a, b) => binary(out, vars, a, "^", b),
            Node::Call(f, a) => {
                out.push_str(f.name());
                out.push('(');
                a.write(vars, out);
                out.push(')');
            }
        }
    }
}

fn binary(out: &mut String, vars: &[String], a: &Node, op: &str, b: &Node) {
    out.push('(');
    a.write(vars, out);
    out.push_str(op);
    b.write(vars, out);
    out.push(')');
}

fn pow(base: f64, exp: f64) -> Result<f64, ExprError> {
    if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
        if base == 0.0 && exp < 0.0 {
            return Err(ExprError::Domain("zero raised to a negative power".into()));
        }
        return Ok(base.powi(exp as i32));
    }
    if base < 0.0 {
        return Err(ExprError::Domain(format!("negative base {base} with non-integer exponent {exp}")));
    }
    if base == 0.0 && exp < 0.0 {
        return Err(ExprError::Domain("zero raised to a negative power".into()));
    }
    Ok(base.powf(exp))
}

/// A parsed expression together with its ordered variable list.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialExpr {
    root: Node,
    vars: Vec<String>,
}

impl PotentialExpr {
    pub fn new(root: Node, vars: Vec<String>) -> Self {
        Self { root, vars }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        if point.len() != self.vars.len() {
            return Err(ExprError::Dimension { expected: self.vars.len(), got: point.len() });
        }
        self.root.eval(point)
    }

    /// Evaluates a function of a single variable.
    pub fn eval1(&self, t: f64) -> Result<f64, ExprError> {
        self.eval(&[t])
    }

    pub fn var_index(&self, name: &str) -> Result<usize, ExprError> {
        self.vars
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| ExprError::UnknownVariable(name.to_string()))
    }

    /// Symbolic partial derivative with respect to `var`.
    pub fn derive(&self, var: &str) -> Result<PotentialExpr, ExprError> {
        let idx = self.var_index(var)?;
        let root = diff::derive(&self.root, idx)?;
        Ok(PotentialExpr { root, vars: self.vars.clone() })
    }

    /// Same expression read with a different (but equally long) variable list.
    pub fn rename_vars(&self, vars: Vec<String>) -> PotentialExpr {
        assert_eq!(vars.len(), self.vars.len());
        PotentialExpr { root: self.root.clone(), vars }
    }

    /// `self / c` for a literal `c`.
    pub fn scaled_by_inverse(&self, c: f64) -> PotentialExpr {
        PotentialExpr {
            root: Node::Div(Box::new(self.root.clone()), Box::new(Node::Num(c))),
            vars: self.vars.clone(),
        }
    }

    /// `c * self` for a literal `c`.
    pub fn scaled(&self, c: f64) -> PotentialExpr {
        PotentialExpr {
            root: Node::Mul(Box::new(Node::Num(c)), Box::new(self.root.clone())),
            vars: self.vars.clone(),
        }
    }
}

impl fmt::Display for PotentialExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.root.write(&self.vars, &mut s);
        f.write_str(&s)
    }
}
