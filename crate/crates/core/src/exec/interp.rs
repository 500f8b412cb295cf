//! A micro-interpreter for the host-tensor subset used by fixture tasks.
//!
//! It evaluates straight-line function bodies made of `name = expr` and
//! `return expr` statements over a fixed set of elementwise, reduction and
//! matmul ops with NumPy-style broadcasting. Anything outside that subset is
//! an execution error, which is what a real runtime would report too.

use std::collections::HashMap;

use super::task::DType;
use super::tensor::{cast, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterpError {
    #[error("syntax: {0}")]
    Syntax(String),
    #[error("call: {0}")]
    Call(String),
    #[error("exec: {0}")]
    Exec(String),
}

type Result<T> = std::result::Result<T, InterpError>;

fn exec_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(InterpError::Exec(msg.into()))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Op(&'static str),
}

const OPS: &[&str] = &[
    "**", "==", "+", "-", "*", "/", "@", "(", ")", ",", ".", "=", "[", "]", ":",
];

fn lex(text: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || chars[i] == '.'
                    || chars[i] == 'e'
                    || chars[i] == 'E'
                    || ((chars[i] == '-' || chars[i] == '+') && matches!(chars[i - 1], 'e' | 'E')))
            {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| InterpError::Syntax(format!("bad number {s:?}")))?;
            out.push(Tok::Num(v));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Name(chars[start..i].iter().collect()));
            continue;
        }
        for op in OPS {
            let len = op.len();
            if i + len <= chars.len() && chars[i..i + len].iter().copied().eq(op.chars()) {
                out.push(Tok::Op(op));
                i += len;
                continue 'outer;
            }
        }
        return Err(InterpError::Syntax(format!("unexpected character {c:?}")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(&'static str, Box<Expr>, Box<Expr>),
    /// `func` is the bare op name; `receiver` is set for method calls.
    Call {
        func: String,
        receiver: Option<Box<Expr>>,
        args: Vec<Expr>,
        kwargs: Vec<(String, Expr)>,
    },
    Attr(Box<Expr>, String),
    Tuple(Vec<Expr>),
}

const MODULES: &[&str] = &["torch", "F", "nn", "functional", "math", "tl"];

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_op(&self, op: &str) -> bool {
        matches!(self.peek(), Some(Tok::Op(o)) if *o == op)
    }

    fn expect(&mut self, op: &str) -> Result<()> {
        if self.peek_op(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(InterpError::Syntax(format!("expected {op:?}, found {:?}", self.peek())))
        }
    }

    fn tuple(&mut self) -> Result<Expr> {
        let first = self.sum()?;
        if !self.peek_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.peek_op(",") {
            self.pos += 1;
            if self.peek().is_none() || self.peek_op(")") {
                break;
            }
            items.push(self.sum()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op("+")) => "+",
                Some(Tok::Op("-")) => "-",
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op("*")) => "*",
                Some(Tok::Op("/")) => "/",
                Some(Tok::Op("@")) => "@",
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_op("-") {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek_op("+") {
            self.pos += 1;
            return self.unary();
        }
        let base = self.postfix()?;
        if self.peek_op("**") {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin("**", Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<(Vec<Expr>, Vec<(String, Expr)>)> {
        self.expect("(")?;
        let mut args = Vec::new();
        let mut kwargs = Vec::new();
        while !self.peek_op(")") {
            if let (Some(Tok::Name(n)), Some(Tok::Op("="))) =
                (self.toks.get(self.pos).cloned(), self.toks.get(self.pos + 1))
            {
                self.pos += 2;
                kwargs.push((n, self.sum()?));
            } else {
                args.push(self.sum()?);
            }
            if self.peek_op(",") {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.expect(")")?;
        Ok((args, kwargs))
    }

    fn postfix(&mut self) -> Result<Expr> {
        let mut expr = self.primary()?;
        while self.peek_op(".") {
            self.pos += 1;
            let Some(Tok::Name(name)) = self.peek().cloned() else {
                return Err(InterpError::Syntax("expected attribute name".into()));
            };
            self.pos += 1;
            if self.peek_op("(") {
                let (args, kwargs) = self.args()?;
                expr = Expr::Call {
                    func: name,
                    receiver: Some(Box::new(expr)),
                    args,
                    kwargs,
                };
            } else {
                expr = Expr::Attr(Box::new(expr), name);
            }
        }
        Ok(expr)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Op("(")) => {
                self.pos += 1;
                let e = self.tuple()?;
                self.expect(")")?;
                Ok(e)
            }
            Some(Tok::Name(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "True" => return Ok(Expr::Num(1.0)),
                    "False" => return Ok(Expr::Num(0.0)),
                    _ => {}
                }
                if MODULES.contains(&name.as_str()) {
                    // module path: keep only the final function name
                    let mut func = name;
                    while self.peek_op(".") {
                        self.pos += 1;
                        match self.peek().cloned() {
                            Some(Tok::Name(n)) => {
                                func = n;
                                self.pos += 1;
                            }
                            _ => return Err(InterpError::Syntax("dangling '.'".into())),
                        }
                    }
                    let (args, kwargs) = self.args()?;
                    return Ok(Expr::Call {
                        func,
                        receiver: None,
                        args,
                        kwargs,
                    });
                }
                if self.peek_op("(") {
                    let (args, kwargs) = self.args()?;
                    return Ok(Expr::Call {
                        func: name,
                        receiver: None,
                        args,
                        kwargs,
                    });
                }
                Ok(Expr::Var(name))
            }
            other => Err(InterpError::Syntax(format!("unexpected token {other:?}"))),
        }
    }
}

fn parse_expr(text: &str) -> Result<Expr> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.tuple()?;
    if p.pos != p.toks.len() {
        return Err(InterpError::Syntax(format!("trailing input in {text:?}")));
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
struct Arr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Scalar(f64),
    Arr(Arr),
    Tuple(Vec<Value>),
}

impl Value {
    fn scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(v) => Some(*v),
            Value::Arr(a) if a.data.len() == 1 && a.shape.is_empty() => Some(a.data[0]),
            _ => None,
        }
    }

    fn into_arr(self) -> Result<Arr> {
        match self {
            Value::Scalar(v) => Ok(Arr {
                shape: vec![],
                data: vec![v],
            }),
            Value::Arr(a) => Ok(a),
            Value::Tuple(_) => exec_err("expected a tensor, got a tuple"),
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return exec_err(format!("shapes {a:?} and {b:?} do not broadcast")),
        };
    }
    Ok(out)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Index into `src` (shape `src_shape`) for the flat output index under broadcasting.
fn broadcast_index(
    flat: usize,
    out_shape: &[usize],
    out_strides: &[usize],
    src_shape: &[usize],
    src_strides: &[usize],
) -> usize {
    let offset = out_shape.len() - src_shape.len();
    let mut idx = 0;
    for (i, (&os, _)) in out_strides.iter().zip(out_shape).enumerate() {
        let coord = (flat / os) % out_shape[i];
        if i >= offset {
            let d = i - offset;
            if src_shape[d] != 1 {
                idx += coord * src_strides[d];
            }
        }
    }
    idx
}

fn zip_with(a: &Arr, b: &Arr, f: impl Fn(f64, f64) -> f64) -> Result<Arr> {
    let shape = broadcast_shape(&a.shape, &b.shape)?;
    let n: usize = shape.iter().product();
    let os = strides(&shape);
    let (sa, sb) = (strides(&a.shape), strides(&b.shape));
    let data = (0..n)
        .map(|k| {
            let x = a.data[broadcast_index(k, &shape, &os, &a.shape, &sa)];
            let y = b.data[broadcast_index(k, &shape, &os, &b.shape, &sb)];
            f(x, y)
        })
        .collect();
    Ok(Arr { shape, data })
}

fn select(cond: &Arr, a: &Arr, b: &Arr) -> Result<Arr> {
    let shape = broadcast_shape(&broadcast_shape(&cond.shape, &a.shape)?, &b.shape)?;
    let n: usize = shape.iter().product();
    let os = strides(&shape);
    let (sc, sa, sb) = (strides(&cond.shape), strides(&a.shape), strides(&b.shape));
    let data = (0..n)
        .map(|k| {
            if cond.data[broadcast_index(k, &shape, &os, &cond.shape, &sc)] != 0.0 {
                a.data[broadcast_index(k, &shape, &os, &a.shape, &sa)]
            } else {
                b.data[broadcast_index(k, &shape, &os, &b.shape, &sb)]
            }
        })
        .collect();
    Ok(Arr { shape, data })
}

fn map(a: Arr, f: impl Fn(f64) -> f64) -> Arr {
    Arr {
        shape: a.shape,
        data: a.data.into_iter().map(f).collect(),
    }
}

fn normalize_dim(dim: i64, rank: usize) -> Result<usize> {
    let r = rank as i64;
    let d = if dim < 0 { dim + r } else { dim };
    if d < 0 || d >= r.max(1) {
        return exec_err(format!("dim {dim} out of range for rank {rank}"));
    }
    Ok(d as usize)
}

/// Reduces along `dim` (or everything when `None`) with `fold` from `init`.
fn reduce(a: &Arr, dim: Option<usize>, keepdim: bool, init: f64, fold: impl Fn(f64, f64) -> f64) -> Arr {
    match dim {
        None => {
            let v = a.data.iter().fold(init, |acc, &x| fold(acc, x));
            let shape = if keepdim { vec![1; a.shape.len()] } else { vec![] };
            Arr { shape, data: vec![v] }
        }
        Some(d) => {
            let outer: usize = a.shape[..d].iter().product();
            let len = a.shape[d];
            let inner: usize = a.shape[d + 1..].iter().product();
            let mut data = vec![init; outer * inner];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        let slot = &mut data[o * inner + i];
                        *slot = fold(*slot, a.data[(o * len + k) * inner + i]);
                    }
                }
            }
            let mut shape = a.shape.clone();
            if keepdim {
                shape[d] = 1;
            } else {
                shape.remove(d);
            }
            Arr { shape, data }
        }
    }
}

fn matmul(a: &Arr, b: &Arr) -> Result<Arr> {
    match (a.shape.as_slice(), b.shape.as_slice()) {
        ([m, k], [k2, n]) if k == k2 => {
            let (m, k, n) = (*m, *k, *n);
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let x = a.data[i * k + p];
                    for j in 0..n {
                        data[i * n + j] += x * b.data[p * n + j];
                    }
                }
            }
            Ok(Arr {
                shape: vec![m, n],
                data,
            })
        }
        ([m, k], [k2]) if k == k2 => {
            let data = (0..*m)
                .map(|i| (0..*k).map(|p| a.data[i * k + p] * b.data[p]).sum())
                .collect();
            Ok(Arr { shape: vec![*m], data })
        }
        _ => exec_err(format!("matmul shapes {:?} x {:?} unsupported", a.shape, b.shape)),
    }
}

fn transpose2(a: &Arr) -> Result<Arr> {
    let [m, n] = a.shape.as_slice() else {
        return exec_err(format!("transpose of rank-{} tensor unsupported", a.shape.len()));
    };
    let (m, n) = (*m, *n);
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = a.data[i * n + j];
        }
    }
    Ok(Arr {
        shape: vec![n, m],
        data,
    })
}

fn gelu(x: f64) -> f64 {
    // tanh approximation
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn unary_fn(name: &str) -> Option<fn(f64) -> f64> {
    Some(match name {
        "relu" => |x: f64| if x > 0.0 { x } else { 0.0 },
        "sigmoid" => |x: f64| 1.0 / (1.0 + (-x).exp()),
        "tanh" => f64::tanh,
        "exp" => f64::exp,
        "log" => f64::ln,
        "abs" => f64::abs,
        "sqrt" => f64::sqrt,
        "rsqrt" => |x: f64| 1.0 / x.sqrt(),
        "neg" | "negative" => |x: f64| -x,
        "sin" => f64::sin,
        "cos" => f64::cos,
        "floor" => f64::floor,
        "ceil" => f64::ceil,
        "square" => |x: f64| x * x,
        "reciprocal" => |x: f64| 1.0 / x,
        "gelu" => gelu,
        "silu" => |x: f64| x / (1.0 + (-x).exp()),
        _ => return None,
    })
}

fn binary_fn(name: &str) -> Option<fn(f64, f64) -> f64> {
    Some(match name {
        "add" | "+" => |x, y| x + y,
        "sub" | "subtract" | "-" => |x, y| x - y,
        "mul" | "multiply" | "*" => |x, y| x * y,
        "div" | "divide" | "true_divide" | "/" => |x, y| x / y,
        "maximum" => f64::max,
        "minimum" => f64::min,
        "pow" | "**" => f64::powf,
        _ => return None,
    })
}

struct Eval<'a> {
    env: &'a HashMap<String, Value>,
    cost: u64,
}

impl Eval<'_> {
    fn charge(&mut self, v: &Value) {
        if let Value::Arr(a) = v {
            self.cost += a.data.len() as u64;
        }
    }

    fn eval(&mut self, e: &Expr) -> Result<Value> {
        let v = match e {
            Expr::Num(v) => Value::Scalar(*v),
            Expr::Var(name) => match self.env.get(name) {
                Some(v) => v.clone(),
                None => return exec_err(format!("name {name:?} is not defined")),
            },
            Expr::Neg(inner) => match self.eval(inner)? {
                Value::Scalar(v) => Value::Scalar(-v),
                other => Value::Arr(map(other.into_arr()?, |x| -x)),
            },
            Expr::Bin(op, a, b) => {
                let (a, b) = (self.eval(a)?, self.eval(b)?);
                if *op == "@" {
                    Value::Arr(matmul(&a.into_arr()?, &b.into_arr()?)?)
                } else {
                    self.binary(op, a, b)?
                }
            }
            Expr::Tuple(items) => Value::Tuple(items.iter().map(|i| self.eval(i)).collect::<Result<_>>()?),
            Expr::Attr(recv, name) => {
                let a = self.eval(recv)?.into_arr()?;
                match name.as_str() {
                    "T" => Value::Arr(transpose2(&a)?),
                    _ => return exec_err(format!("unsupported attribute .{name}")),
                }
            }
            Expr::Call {
                func,
                receiver,
                args,
                kwargs,
            } => {
                let mut vals = Vec::with_capacity(args.len() + 1);
                if let Some(r) = receiver {
                    vals.push(self.eval(r)?);
                }
                for a in args {
                    vals.push(self.eval(a)?);
                }
                let mut kw = HashMap::new();
                for (k, v) in kwargs {
                    kw.insert(k.as_str(), self.eval(v)?);
                }
                self.call(func, vals, kw)?
            }
        };
        self.charge(&v);
        Ok(v)
    }

    fn binary(&self, op: &str, a: Value, b: Value) -> Result<Value> {
        let f = binary_fn(op).ok_or_else(|| InterpError::Exec(format!("unsupported operator {op}")))?;
        match (&a, &b) {
            (Value::Scalar(x), Value::Scalar(y)) => Ok(Value::Scalar(f(*x, *y))),
            _ => Ok(Value::Arr(zip_with(&a.into_arr()?, &b.into_arr()?, f)?)),
        }
    }

    fn int_kw(kw: &HashMap<&str, Value>, name: &str) -> Option<i64> {
        kw.get(name).and_then(Value::scalar).map(|v| v as i64)
    }

    fn call(&mut self, func: &str, mut vals: Vec<Value>, kw: HashMap<&str, Value>) -> Result<Value> {
        let arity = |n: usize, vals: &Vec<Value>| -> Result<()> {
            if vals.len() < n {
                return exec_err(format!("{func}() expects {n} argument(s), got {}", vals.len()));
            }
            Ok(())
        };
        if let Some(f) = unary_fn(func) {
            arity(1, &vals)?;
            return Ok(match vals.swap_remove(0) {
                Value::Scalar(x) => Value::Scalar(f(x)),
                other => Value::Arr(map(other.into_arr()?, f)),
            });
        }
        let dim_arg = |vals: &Vec<Value>, kw: &HashMap<&str, Value>| -> Option<i64> {
            Self::int_kw(kw, "dim").or_else(|| vals.get(1).and_then(Value::scalar).map(|v| v as i64))
        };
        let keepdim = kw.get("keepdim").and_then(Value::scalar).is_some_and(|v| v != 0.0);
        match func {
            "max" | "min" if vals.len() >= 2 && vals[1].scalar().is_none() => {
                let name = if func == "max" { "maximum" } else { "minimum" };
                let b = vals.swap_remove(1);
                let a = vals.swap_remove(0);
                self.binary(name, a, b)
            }
            "sum" | "mean" | "amax" | "amin" | "max" | "min" | "prod" => {
                arity(1, &vals)?;
                let dim = dim_arg(&vals, &kw);
                let a = vals.swap_remove(0).into_arr()?;
                let d = dim.map(|d| normalize_dim(d, a.shape.len())).transpose()?;
                let count = match d {
                    Some(d) => a.shape[d],
                    None => a.data.len(),
                } as f64;
                let r = match func {
                    "sum" => reduce(&a, d, keepdim, 0.0, |x, y| x + y),
                    "mean" => map(reduce(&a, d, keepdim, 0.0, |x, y| x + y), |s| s / count),
                    "prod" => reduce(&a, d, keepdim, 1.0, |x, y| x * y),
                    "amax" | "max" => reduce(&a, d, keepdim, f64::NEG_INFINITY, f64::max),
                    _ => reduce(&a, d, keepdim, f64::INFINITY, f64::min),
                };
                Ok(Value::Arr(r))
            }
            "softmax" | "log_softmax" => {
                arity(1, &vals)?;
                let dim = dim_arg(&vals, &kw).unwrap_or(-1);
                let a = vals.swap_remove(0).into_arr()?;
                let d = normalize_dim(dim, a.shape.len())?;
                let m = reduce(&a, Some(d), true, f64::NEG_INFINITY, f64::max);
                let shifted = zip_with(&a, &m, |x, y| x - y)?;
                let e = map(shifted.clone(), f64::exp);
                let s = reduce(&e, Some(d), true, 0.0, |x, y| x + y);
                Ok(Value::Arr(if func == "softmax" {
                    zip_with(&e, &s, |x, y| x / y)?
                } else {
                    zip_with(&shifted, &s, |x, y| x - y.ln())?
                }))
            }
            "matmul" | "mm" => {
                arity(2, &vals)?;
                let b = vals.swap_remove(1).into_arr()?;
                let a = vals.swap_remove(0).into_arr()?;
                Ok(Value::Arr(matmul(&a, &b)?))
            }
            "clamp" | "clip" => {
                arity(1, &vals)?;
                let lo = kw
                    .get("min")
                    .and_then(Value::scalar)
                    .or_else(|| vals.get(1).and_then(Value::scalar));
                let hi = kw
                    .get("max")
                    .and_then(Value::scalar)
                    .or_else(|| vals.get(2).and_then(Value::scalar));
                let a = vals.swap_remove(0).into_arr()?;
                Ok(Value::Arr(map(a, |x| {
                    let x = lo.map_or(x, |l| x.max(l));
                    hi.map_or(x, |h| x.min(h))
                })))
            }
            "where" => {
                arity(3, &vals)?;
                let b = vals.swap_remove(2).into_arr()?;
                let a = vals.swap_remove(1).into_arr()?;
                let c = vals.swap_remove(0).into_arr()?;
                Ok(Value::Arr(select(&c, &a, &b)?))
            }
            "t" | "transpose" => {
                arity(1, &vals)?;
                Ok(Value::Arr(transpose2(&vals.swap_remove(0).into_arr()?)?))
            }
            "reshape" | "view" => {
                arity(1, &vals)?;
                let a = vals.remove(0).into_arr()?;
                let dims: Vec<i64> = match vals.as_slice() {
                    [Value::Tuple(items)] => items.iter().filter_map(Value::scalar).map(|v| v as i64).collect(),
                    rest => rest.iter().filter_map(Value::scalar).map(|v| v as i64).collect(),
                };
                Ok(Value::Arr(reshape(a, &dims)?))
            }
            "flatten" => {
                arity(1, &vals)?;
                let a = vals.swap_remove(0).into_arr()?;
                let n = a.data.len();
                Ok(Value::Arr(Arr {
                    shape: vec![n],
                    data: a.data,
                }))
            }
            "zeros_like" | "ones_like" => {
                arity(1, &vals)?;
                let fill = if func == "zeros_like" { 0.0 } else { 1.0 };
                Ok(Value::Arr(map(vals.swap_remove(0).into_arr()?, |_| fill)))
            }
            "contiguous" | "float" | "clone" | "detach" | "to" => {
                arity(1, &vals)?;
                Ok(vals.swap_remove(0))
            }
            _ => {
                if binary_fn(func).is_some() {
                    arity(2, &vals)?;
                    let b = vals.swap_remove(1);
                    let a = vals.swap_remove(0);
                    return self.binary(func, a, b);
                }
                exec_err(format!("unsupported operation {func}()"))
            }
        }
    }
}

fn reshape(a: Arr, dims: &[i64]) -> Result<Arr> {
    let n = a.data.len();
    let known: i64 = dims.iter().filter(|&&d| d != -1).product();
    let mut shape = Vec::with_capacity(dims.len());
    for &d in dims {
        if d == -1 {
            if known == 0 || n as i64 % known != 0 {
                return exec_err(format!("cannot reshape {n} elements to {dims:?}"));
            }
            shape.push((n as i64 / known) as usize);
        } else if d < 0 {
            return exec_err(format!("invalid dimension {d}"));
        } else {
            shape.push(d as usize);
        }
    }
    if shape.iter().product::<usize>() != n {
        return exec_err(format!("cannot reshape {n} elements to {dims:?}"));
    }
    Ok(Arr { shape, data: a.data })
}

#[derive(Debug, Clone, PartialEq)]
enum Stmt {
    Assign(String, Expr),
    Return(Expr),
}

/// A parsed entry function: positional parameters plus a straight-line body.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    params: Vec<(String, Option<f64>)>,
    body: Vec<Stmt>,
}

/// Result of running a [`Program`].
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub outputs: Vec<Tensor>,
    /// Deterministic cost in element-operations, used as simulated time.
    pub cost: u64,
}

fn indent_of(line: &str) -> usize {
    line.chars().take_while(|c| *c == ' ' || *c == '\t').count()
}

fn strip_comment(line: &str) -> &str {
    // the subset has no string literals worth preserving
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn bracket_balance(s: &str) -> i64 {
    s.chars()
        .map(|c| match c {
            '(' | '[' | '{' => 1,
            ')' | ']' | '}' => -1,
            _ => 0,
        })
        .sum()
}

fn parse_params(sig: &str) -> Result<Vec<(String, Option<f64>)>> {
    let mut out = Vec::new();
    for raw in sig.split(',') {
        let raw = raw.trim();
        if raw.is_empty() || raw == "self" || raw.starts_with('*') {
            continue;
        }
        let (name_part, default) = match raw.split_once('=') {
            Some((n, d)) => (n.trim(), Some(d.trim())),
            None => (raw, None),
        };
        let name = name_part.split(':').next().unwrap_or(name_part).trim();
        let default = match default {
            Some(d) => Some(match d {
                "True" => 1.0,
                "False" => 0.0,
                "None" => f64::NAN,
                _ => d
                    .parse::<f64>()
                    .map_err(|_| InterpError::Call(format!("unsupported default {d:?} for {name}")))?,
            }),
            None => None,
        };
        out.push((name.to_string(), default));
    }
    Ok(out)
}

impl Program {
    /// Locates `def <entry>(...)` in `source` (method or free function) and
    /// parses its body. `override_expr` replaces the body with `return <expr>`.
    pub fn from_source(source: &str, entry: &str, override_expr: Option<&str>) -> Result<Self> {
        let lines: Vec<&str> = source.lines().collect();
        let bare = entry.rsplit('.').next().unwrap_or(entry);
        let needle = format!("def {bare}(");
        let start = lines
            .iter()
            .position(|l| {
                let t = l.trim_start();
                t.starts_with(&needle) || t.starts_with(&format!("async {needle}"))
            })
            .ok_or_else(|| InterpError::Call(format!("entry {entry:?} not found")))?;
        let def_indent = indent_of(lines[start]);

        // signature may span several lines
        let mut sig = String::new();
        let mut idx = start;
        loop {
            sig.push_str(strip_comment(lines[idx]));
            sig.push(' ');
            if bracket_balance(&sig) <= 0 && sig.contains(')') {
                break;
            }
            idx += 1;
            if idx >= lines.len() {
                return Err(InterpError::Syntax("unterminated signature".into()));
            }
        }
        let open = sig.find('(').unwrap_or(0);
        let mut depth = 0i64;
        let mut close = sig.len();
        for (i, c) in sig.char_indices().skip(open) {
            match c {
                '(' | '[' => depth += 1,
                ')' | ']' => {
                    depth -= 1;
                    if depth == 0 {
                        close = i;
                        break;
                    }
                }
                _ => {}
            }
        }
        let params = parse_params(&sig[open + 1..close.min(sig.len())])?;

        if let Some(expr) = override_expr {
            return Ok(Self {
                params,
                body: vec![Stmt::Return(parse_expr(expr)?)],
            });
        }

        let mut body = Vec::new();
        let mut i = idx + 1;
        let mut in_docstring: Option<&str> = None;
        while i < lines.len() {
            let line = lines[i];
            i += 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(q) = in_docstring {
                if line.contains(q) {
                    in_docstring = None;
                }
                continue;
            }
            if indent_of(line) <= def_indent {
                break;
            }
            let t = strip_comment(line).trim();
            if t.is_empty() {
                continue;
            }
            if t.starts_with("\"\"\"") || t.starts_with("'''") {
                let q = &t[..3];
                if !(t.len() >= 6 && t[3..].contains(q)) {
                    in_docstring = Some(q);
                }
                continue;
            }
            let mut stmt = t.to_string();
            while bracket_balance(&stmt) > 0 && i < lines.len() {
                stmt.push(' ');
                stmt.push_str(strip_comment(lines[i]).trim());
                i += 1;
            }
            if stmt == "pass" {
                continue;
            }
            if let Some(rest) = stmt.strip_prefix("return ") {
                body.push(Stmt::Return(parse_expr(rest)?));
                break;
            }
            match stmt.split_once('=') {
                Some((lhs, rhs))
                    if !rhs.starts_with('=')
                        && lhs.trim().chars().all(|c| c.is_alphanumeric() || c == '_')
                        && !lhs.trim().is_empty() =>
                {
                    body.push(Stmt::Assign(lhs.trim().to_string(), parse_expr(rhs)?));
                }
                _ => {
                    body.push(Stmt::Assign(
                        "_unsupported".into(),
                        Expr::Call {
                            func: format!("<statement {stmt:?}>"),
                            receiver: None,
                            args: vec![],
                            kwargs: vec![],
                        },
                    ));
                }
            }
        }
        if !body.iter().any(|s| matches!(s, Stmt::Return(_))) {
            return Err(InterpError::Call(format!("entry {entry:?} returns nothing")));
        }
        Ok(Self { params, body })
    }

    pub fn run(&self, inputs: &[Tensor]) -> Result<Outcome> {
        let required = self.params.iter().filter(|(_, d)| d.is_none()).count();
        if inputs.len() < required || inputs.len() > self.params.len() {
            return Err(InterpError::Call(format!(
                "entry takes {required}..={} inputs, got {}",
                self.params.len(),
                inputs.len()
            )));
        }
        let mut env = HashMap::new();
        for (i, (name, default)) in self.params.iter().enumerate() {
            let v = match inputs.get(i) {
                Some(t) => Value::Arr(Arr {
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                }),
                None => Value::Scalar(default.unwrap_or(f64::NAN)),
            };
            env.insert(name.clone(), v);
        }
        let out_dtype = inputs
            .iter()
            .map(|t| t.dtype)
            .find(|d| d.is_float())
            .unwrap_or(DType::F32);
        let mut cost = 0u64;
        for stmt in &self.body {
            let mut ev = Eval { env: &env, cost: 0 };
            match stmt {
                Stmt::Assign(name, e) => {
                    let v = ev.eval(e)?;
                    cost += ev.cost;
                    env.insert(name.clone(), v);
                }
                Stmt::Return(e) => {
                    let v = ev.eval(e)?;
                    cost += ev.cost;
                    let values = match v {
                        Value::Tuple(items) => items,
                        other => vec![other],
                    };
                    let outputs = values
                        .into_iter()
                        .map(|v| {
                            let a = v.into_arr()?;
                            Ok(Tensor {
                                data: a.data.iter().map(|&x| cast(x, out_dtype)).collect(),
                                shape: a.shape,
                                dtype: out_dtype,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    return Ok(Outcome { outputs, cost });
                }
            }
        }
        exec_err("entry fell off the end without returning")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor {
            shape,
            dtype: DType::F32,
            data,
        }
    }

    fn run(src: &str, entry: &str, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        Program::from_source(src, entry, None)?.run(inputs).map(|o| o.outputs)
    }

    #[test]
    fn elementwise_with_assignments() {
        let src = "import torch\nclass Model(torch.nn.Module):\n    def forward(self, x, y):\n        \"\"\"add then relu\"\"\"\n        z = x + y  # sum\n        return torch.relu(z)\n";
        let out = run(
            src,
            "forward",
            &[t(vec![3], vec![-2.0, 0.5, 1.0]), t(vec![3], vec![1.0, 1.0, 1.0])],
        )
        .unwrap();
        assert_eq!(out[0].data, vec![0.0, 1.5, 2.0]);
    }

    #[test]
    fn broadcasting_and_reductions() {
        let src = "def f(x, b):\n    y = x * b\n    return y.sum(dim=1), torch.mean(x), x.amax(-1, keepdim=True)\n";
        let x = t(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(vec![3], vec![1.0, 0.0, -1.0]);
        let out = run(src, "f", &[x, b]).unwrap();
        assert_eq!(out[0].shape, vec![2]);
        assert_eq!(out[0].data, vec![-2.0, -2.0]);
        assert_eq!(out[1].data, vec![3.5]);
        assert_eq!(out[2].shape, vec![2, 1]);
        assert_eq!(out[2].data, vec![3.0, 6.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let src = "import torch.nn.functional as F\ndef f(x):\n    return F.softmax(x, dim=-1)\n";
        let out = run(src, "f", &[t(vec![2, 2], vec![0.0, 1.0, 2.0, 2.0])]).unwrap();
        let d = &out[0].data;
        assert!((d[0] + d[1] - 1.0).abs() < 1e-6);
        assert!((d[2] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn matmul_forms() {
        let a = t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let i = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        for src in [
            "def f(a, b):\n    return a @ b\n",
            "def f(a, b):\n    return torch.matmul(a, b)\n",
        ] {
            assert_eq!(run(src, "f", &[a.clone(), i.clone()]).unwrap()[0].data, a.data);
        }
        let out = run("def f(a):\n    return a.t()\n", "f", &[a]).unwrap();
        assert_eq!(out[0].data, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn error_classes() {
        let x = t(vec![2], vec![1.0, 2.0]);
        assert!(matches!(
            run("def f(x):\n    return x\n", "g", &[x.clone()]),
            Err(InterpError::Call(_))
        ));
        assert!(matches!(
            run("def f(x, y):\n    return x\n", "f", &[x.clone()]),
            Err(InterpError::Call(_))
        ));
        assert!(matches!(
            run("def f(x):\n    return x + t(vec)\n", "f", &[x.clone()]),
            Err(InterpError::Exec(_))
        ));
        assert!(matches!(
            run("def f(x):\n    return x + torch.ones(3)\n", "f", &[x.clone()]),
            Err(InterpError::Exec(_))
        ));
        let y = t(vec![3], vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            run("def f(x, y):\n    return x + y\n", "f", &[x.clone(), y]),
            Err(InterpError::Exec(_))
        ));
        assert!(matches!(
            run("def f(x):\n    return (x +\n", "f", &[x]),
            Err(InterpError::Syntax(_))
        ));
    }

    #[test]
    fn override_expression() {
        let p = Program::from_source(
            "def launch(a, b):\n    k[(1,)](a, b)\n    return a\n",
            "launch",
            Some("a * 2 + b"),
        )
        .unwrap();
        let out = p.run(&[t(vec![1], vec![1.0]), t(vec![1], vec![3.0])]).unwrap();
        assert_eq!(out.outputs[0].data, vec![5.0]);
        assert!(out.cost > 0);
    }

    #[test]
    fn default_parameters() {
        let out = run(
            "def f(x, alpha=0.5):\n    return x * alpha\n",
            "f",
            &[t(vec![1], vec![4.0])],
        )
        .unwrap();
        assert_eq!(out[0].data, vec![2.0]);
    }
}
