//! Expression language for vector fields and pair maps.
//!
//! Grammar: `+ - * / ^` (right-associative `^`), unary minus, parentheses,
//! numeric literals, `exp(s)`, `norm2(v)`, and `[a, b]` vector literals.
//! Variables are `x` and `y` (vectors when `d > 1`) and their components
//! `x1, x2, y1, y2`. Vectors combine with `+`/`-` and scale by scalars.
//!
//! Expressions are lowered to per-component scalar graphs over the variables
//! `x1..xd, y1..yd`, differentiated symbolically and compiled to flat tapes.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};

const NORM_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------- parsing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    pos: usize,
}

/// Parsed but untyped syntax tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Ast {
    Num(f64),
    Var(String),
    Call(String, Vec<Ast>),
    Neg(Box<Ast>),
    Bin(char, Box<Ast>, Box<Ast>),
    Vector(Vec<Ast>),
}

#[derive(Clone, Debug)]
struct Spanned {
    ast: Ast,
    pos: usize,
    children: Vec<Spanned>,
}

fn line_col(text: &str, pos: usize) -> (usize, usize) {
    let before = &text[..pos.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

fn err(text: &str, pos: usize, message: impl Into<String>) -> Error {
    let (line, column) = line_col(text, pos);
    Error::Expression {
        line,
        column,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
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
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s = &text[start..i];
            let v: f64 = s
                .parse()
                .map_err(|_| err(text, start, format!("malformed number '{s}'")))?;
            out.push(Token {
                tok: Tok::Num(v),
                pos: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(text[start..i].to_string()),
                pos: start,
            });
        } else if "+-*/^(),[]".contains(c) {
            out.push(Token {
                tok: Tok::Op(c),
                pos: i,
            });
            i += 1;
        } else {
            let ch = text[i..].chars().next().unwrap_or(c);
            return Err(err(text, i, format!("unexpected character '{ch}'")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    text: &'a str,
    toks: Vec<Token>,
    i: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.tok)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.i).map_or(self.text.len(), |t| t.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(err(self.text, self.pos(), format!("expected '{c}'")))
        }
    }

    fn node(ast: Ast, pos: usize, children: Vec<Spanned>) -> Spanned {
        Spanned { ast, pos, children }
    }

    fn expr(&mut self) -> Result<Spanned> {
        let mut lhs = self.term()?;
        loop {
            let pos = self.pos();
            let op = if self.eat('+') {
                '+'
            } else if self.eat('-') {
                '-'
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Self::bin(op, lhs, rhs, pos);
        }
    }

    fn bin(op: char, l: Spanned, r: Spanned, pos: usize) -> Spanned {
        let ast = Ast::Bin(op, Box::new(l.ast.clone()), Box::new(r.ast.clone()));
        Self::node(ast, pos, vec![l, r])
    }

    fn term(&mut self) -> Result<Spanned> {
        let mut lhs = self.unary()?;
        loop {
            let pos = self.pos();
            let op = if self.eat('*') {
                '*'
            } else if self.eat('/') {
                '/'
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Self::bin(op, lhs, rhs, pos);
        }
    }

    fn unary(&mut self) -> Result<Spanned> {
        let pos = self.pos();
        if self.eat('-') {
            let inner = self.unary()?;
            return Ok(Self::node(Ast::Neg(Box::new(inner.ast.clone())), pos, vec![inner]));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Spanned> {
        let base = self.primary()?;
        let pos = self.pos();
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Self::bin('^', base, exp, pos));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Spanned> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.i += 1;
                Ok(Self::node(Ast::Num(v), pos, vec![]))
            }
            Some(Tok::Ident(name)) => {
                self.i += 1;
                if self.eat('(') {
                    let mut args = Vec::new();
                    if !self.eat(')') {
                        loop {
                            args.push(self.expr()?);
                            if self.eat(')') {
                                break;
                            }
                            self.expect(',')?;
                        }
                    }
                    let ast = Ast::Call(name, args.iter().map(|a| a.ast.clone()).collect());
                    Ok(Self::node(ast, pos, args))
                } else {
                    Ok(Self::node(Ast::Var(name), pos, vec![]))
                }
            }
            Some(Tok::Op('(')) => {
                self.i += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Op('[')) => {
                self.i += 1;
                let mut items = vec![self.expr()?];
                while self.eat(',') {
                    items.push(self.expr()?);
                }
                self.expect(']')?;
                let ast = Ast::Vector(items.iter().map(|a| a.ast.clone()).collect());
                Ok(Self::node(ast, pos, items))
            }
            Some(Tok::Op(c)) => Err(err(self.text, pos, format!("unexpected '{c}'"))),
            None => Err(err(self.text, pos, "unexpected end of expression")),
        }
    }
}

fn parse_spanned(text: &str) -> Result<Spanned> {
    let toks = tokenize(text)?;
    let mut p = Parser { text, toks, i: 0 };
    let e = p.expr()?;
    if p.i != p.toks.len() {
        return Err(err(text, p.pos(), "unexpected trailing input"));
    }
    Ok(e)
}

/// Parses `text` into an untyped syntax tree.
pub fn parse(text: &str) -> Result<Ast> {
    parse_spanned(text).map(|s| s.ast)
}

// ---------------------------------------------------------------- scalar graph

#[derive(Clone, Copy, Debug, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Pow(usize, usize),
    Neg(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    /// `1 / max(a, NORM_FLOOR)`
    InvFloor(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Key {
    Const(u64),
    Var(usize),
    Op(u8, usize, usize),
}

#[derive(Default)]
struct Graph {
    nodes: Vec<Node>,
    dedup: HashMap<Key, usize>,
}

impl Graph {
    fn key(n: &Node) -> Key {
        match *n {
            Node::Const(v) => Key::Const(v.to_bits()),
            Node::Var(i) => Key::Var(i),
            Node::Add(a, b) => Key::Op(0, a.min(b), a.max(b)),
            Node::Sub(a, b) => Key::Op(1, a, b),
            Node::Mul(a, b) => Key::Op(2, a.min(b), a.max(b)),
            Node::Div(a, b) => Key::Op(3, a, b),
            Node::Pow(a, b) => Key::Op(4, a, b),
            Node::Neg(a) => Key::Op(5, a, 0),
            Node::Exp(a) => Key::Op(6, a, 0),
            Node::Ln(a) => Key::Op(7, a, 0),
            Node::Sqrt(a) => Key::Op(8, a, 0),
            Node::InvFloor(a) => Key::Op(9, a, 0),
        }
    }

    fn push(&mut self, n: Node) -> usize {
        let k = Self::key(&n);
        if let Some(&id) = self.dedup.get(&k) {
            return id;
        }
        self.nodes.push(n);
        let id = self.nodes.len() - 1;
        self.dedup.insert(k, id);
        id
    }

    fn constant(&self, id: usize) -> Option<f64> {
        match self.nodes[id] {
            Node::Const(v) => Some(v),
            _ => None,
        }
    }

    fn c(&mut self, v: f64) -> usize {
        self.push(Node::Const(v))
    }

    fn add(&mut self, a: usize, b: usize) -> usize {
        match (self.constant(a), self.constant(b)) {
            (Some(x), Some(y)) => self.c(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => self.push(Node::Add(a, b)),
        }
    }

    fn sub(&mut self, a: usize, b: usize) -> usize {
        match (self.constant(a), self.constant(b)) {
            (Some(x), Some(y)) => self.c(x - y),
            (Some(x), _) if x == 0.0 => self.neg(b),
            (_, Some(y)) if y == 0.0 => a,
            _ => self.push(Node::Sub(a, b)),
        }
    }

    fn mul(&mut self, a: usize, b: usize) -> usize {
        match (self.constant(a), self.constant(b)) {
            (Some(x), Some(y)) => self.c(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => self.c(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            _ => self.push(Node::Mul(a, b)),
        }
    }

    fn div(&mut self, a: usize, b: usize) -> usize {
        match (self.constant(a), self.constant(b)) {
            (Some(x), Some(y)) => self.c(x / y),
            (Some(x), _) if x == 0.0 => self.c(0.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => self.push(Node::Div(a, b)),
        }
    }

    fn pow(&mut self, a: usize, b: usize) -> usize {
        match (self.constant(a), self.constant(b)) {
            (Some(x), Some(y)) => self.c(x.powf(y)),
            (_, Some(y)) if y == 0.0 => self.c(1.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => self.push(Node::Pow(a, b)),
        }
    }

    fn neg(&mut self, a: usize) -> usize {
        match self.nodes[a] {
            Node::Const(x) => self.c(-x),
            Node::Neg(inner) => inner,
            _ => self.push(Node::Neg(a)),
        }
    }

    fn unary(&mut self, n: Node) -> usize {
        let folded = match n {
            Node::Exp(a) => self.constant(a).map(f64::exp),
            Node::Ln(a) => self.constant(a).map(f64::ln),
            Node::Sqrt(a) => self.constant(a).map(f64::sqrt),
            Node::InvFloor(a) => self.constant(a).map(|v| 1.0 / v.max(NORM_FLOOR)),
            _ => None,
        };
        match folded {
            Some(v) => self.c(v),
            None => self.push(n),
        }
    }

    fn diff(&mut self, id: usize, var: usize, memo: &mut HashMap<usize, usize>) -> usize {
        if let Some(&d) = memo.get(&id) {
            return d;
        }
        let d = match self.nodes[id] {
            Node::Const(_) => self.c(0.0),
            Node::Var(v) => self.c(if v == var { 1.0 } else { 0.0 }),
            Node::Add(a, b) => {
                let (da, db) = (self.diff(a, var, memo), self.diff(b, var, memo));
                self.add(da, db)
            }
            Node::Sub(a, b) => {
                let (da, db) = (self.diff(a, var, memo), self.diff(b, var, memo));
                self.sub(da, db)
            }
            Node::Mul(a, b) => {
                let (da, db) = (self.diff(a, var, memo), self.diff(b, var, memo));
                let l = self.mul(da, b);
                let r = self.mul(a, db);
                self.add(l, r)
            }
            Node::Div(a, b) => {
                let (da, db) = (self.diff(a, var, memo), self.diff(b, var, memo));
                let l = self.div(da, b);
                let q = self.div(a, b);
                let r = self.mul(q, db);
                let r = self.div(r, b);
                self.sub(l, r)
            }
            Node::Pow(a, b) => {
                let da = self.diff(a, var, memo);
                if let Some(c) = self.constant(b) {
                    let cm1 = self.c(c - 1.0);
                    let p = self.pow(a, cm1);
                    let k = self.c(c);
                    let t = self.mul(k, p);
                    self.mul(t, da)
                } else {
                    let db = self.diff(b, var, memo);
                    let ln = self.unary(Node::Ln(a));
                    let l = self.mul(db, ln);
                    let q = self.div(da, a);
                    let r = self.mul(b, q);
                    let s = self.add(l, r);
                    self.mul(id, s)
                }
            }
            Node::Neg(a) => {
                let da = self.diff(a, var, memo);
                self.neg(da)
            }
            Node::Exp(a) => {
                let da = self.diff(a, var, memo);
                self.mul(id, da)
            }
            Node::Ln(a) => {
                let da = self.diff(a, var, memo);
                self.div(da, a)
            }
            Node::Sqrt(a) => {
                // d sqrt(u) = u' / (2 max(sqrt(u), floor))
                let da = self.diff(a, var, memo);
                let inv = self.unary(Node::InvFloor(id));
                let half = self.c(0.5);
                let t = self.mul(half, inv);
                self.mul(t, da)
            }
            Node::InvFloor(a) => {
                let da = self.diff(a, var, memo);
                let sq = self.mul(id, id);
                let t = self.mul(sq, da);
                self.neg(t)
            }
        };
        memo.insert(id, d);
        d
    }
}

#[derive(Clone, Debug)]
enum Value {
    Scalar(usize),
    Vector(Vec<usize>),
}

struct Lowering<'a> {
    text: &'a str,
    dim: usize,
    allow_y: bool,
    g: Graph,
}

impl Lowering<'_> {
    fn var(&mut self, name: &str, pos: usize) -> Result<Value> {
        let (base, rest) = name.split_at(1);
        let offset = match base {
            "x" => 0,
            "y" if self.allow_y => self.dim,
            "y" => return Err(err(self.text, pos, "'y' is not available in a single-point field")),
            _ => return Err(err(self.text, pos, format!("unknown identifier '{name}'"))),
        };
        if rest.is_empty() {
            return Ok(if self.dim == 1 {
                Value::Scalar(self.g.push(Node::Var(offset)))
            } else {
                Value::Vector((0..self.dim).map(|i| self.g.push(Node::Var(offset + i))).collect())
            });
        }
        match rest.parse::<usize>() {
            Ok(i) if (1..=self.dim).contains(&i) => Ok(Value::Scalar(self.g.push(Node::Var(offset + i - 1)))),
            _ => Err(err(self.text, pos, format!("unknown identifier '{name}'"))),
        }
    }

    fn scalar(&self, v: Value, pos: usize, what: &str) -> Result<usize> {
        match v {
            Value::Scalar(s) => Ok(s),
            Value::Vector(_) => Err(err(self.text, pos, format!("{what} needs a scalar operand"))),
        }
    }

    fn lower(&mut self, s: &Spanned) -> Result<Value> {
        match &s.ast {
            Ast::Num(v) => Ok(Value::Scalar(self.g.c(*v))),
            Ast::Var(name) => self.var(name, s.pos),
            Ast::Neg(_) => match self.lower(&s.children[0])? {
                Value::Scalar(a) => Ok(Value::Scalar(self.g.neg(a))),
                Value::Vector(v) => Ok(Value::Vector(v.into_iter().map(|a| self.g.neg(a)).collect())),
            },
            Ast::Vector(_) => {
                let mut comps = Vec::new();
                for c in &s.children {
                    let v = self.lower(c)?;
                    comps.push(self.scalar(v, c.pos, "a vector entry")?);
                }
                Ok(Value::Vector(comps))
            }
            Ast::Call(name, _) => {
                let arity = s.children.len();
                match name.as_str() {
                    "exp" | "norm2" if arity != 1 => Err(err(
                        self.text,
                        s.pos,
                        format!("{name} takes 1 argument, got {arity}"),
                    )),
                    "exp" => {
                        let a = self.lower(&s.children[0])?;
                        let a = self.scalar(a, s.pos, "exp")?;
                        Ok(Value::Scalar(self.g.unary(Node::Exp(a))))
                    }
                    "norm2" => {
                        let comps = match self.lower(&s.children[0])? {
                            Value::Scalar(a) => vec![a],
                            Value::Vector(v) => v,
                        };
                        let mut sum = self.g.c(0.0);
                        for c in comps {
                            let sq = self.g.mul(c, c);
                            sum = self.g.add(sum, sq);
                        }
                        Ok(Value::Scalar(self.g.unary(Node::Sqrt(sum))))
                    }
                    _ => Err(err(self.text, s.pos, format!("unknown function '{name}'"))),
                }
            }
            Ast::Bin(op, _, _) => {
                let l = self.lower(&s.children[0])?;
                let r = self.lower(&s.children[1])?;
                self.binary(*op, l, r, s.pos)
            }
        }
    }

    fn binary(&mut self, op: char, l: Value, r: Value, pos: usize) -> Result<Value> {
        use Value::*;
        let g = &mut self.g;
        let f = |g: &mut Graph, a: usize, b: usize| match op {
            '+' => g.add(a, b),
            '-' => g.sub(a, b),
            '*' => g.mul(a, b),
            '/' => g.div(a, b),
            _ => g.pow(a, b),
        };
        match (l, r) {
            (Scalar(a), Scalar(b)) => Ok(Scalar(f(g, a, b))),
            (Vector(a), Vector(b)) if matches!(op, '+' | '-') => {
                if a.len() != b.len() {
                    return Err(err(self.text, pos, format!("vector lengths {} and {} differ", a.len(), b.len())));
                }
                Ok(Vector(a.into_iter().zip(b).map(|(x, y)| f(g, x, y)).collect()))
            }
            (Scalar(a), Vector(b)) if op == '*' => Ok(Vector(b.into_iter().map(|y| f(g, a, y)).collect())),
            (Vector(a), Scalar(b)) if matches!(op, '*' | '/') => {
                Ok(Vector(a.into_iter().map(|x| f(g, x, b)).collect()))
            }
            _ => Err(err(
                self.text,
                pos,
                format!("operator '{op}' is not defined for these operand shapes"),
            )),
        }
    }
}

// ---------------------------------------------------------------- tapes

#[derive(Clone, Debug)]
struct Tape {
    ops: Vec<Node>,
    outputs: Vec<usize>,
}

impl Tape {
    fn compile(g: &Graph, roots: &[usize]) -> Self {
        let mut keep = vec![false; g.nodes.len()];
        let mut stack: Vec<usize> = roots.to_vec();
        while let Some(id) = stack.pop() {
            if keep[id] {
                continue;
            }
            keep[id] = true;
            match g.nodes[id] {
                Node::Const(_) | Node::Var(_) => {}
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
                Node::Neg(a) | Node::Exp(a) | Node::Ln(a) | Node::Sqrt(a) | Node::InvFloor(a) => stack.push(a),
            }
        }
        let mut remap = vec![usize::MAX; g.nodes.len()];
        let mut ops = Vec::new();
        for (id, node) in g.nodes.iter().enumerate() {
            if !keep[id] {
                continue;
            }
            let m = |i: usize| remap[i];
            let op = match *node {
                Node::Add(a, b) => Node::Add(m(a), m(b)),
                Node::Sub(a, b) => Node::Sub(m(a), m(b)),
                Node::Mul(a, b) => Node::Mul(m(a), m(b)),
                Node::Div(a, b) => Node::Div(m(a), m(b)),
                Node::Pow(a, b) => Node::Pow(m(a), m(b)),
                Node::Neg(a) => Node::Neg(m(a)),
                Node::Exp(a) => Node::Exp(m(a)),
                Node::Ln(a) => Node::Ln(m(a)),
                Node::Sqrt(a) => Node::Sqrt(m(a)),
                Node::InvFloor(a) => Node::InvFloor(m(a)),
                leaf => leaf,
            };
            remap[id] = ops.len();
            ops.push(op);
        }
        Self {
            ops,
            outputs: roots.iter().map(|&r| remap[r]).collect(),
        }
    }

    fn run(&self, vars: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        scratch.clear();
        scratch.reserve(self.ops.len());
        for op in &self.ops {
            let s = &*scratch;
            let v = match *op {
                Node::Const(c) => c,
                Node::Var(i) => vars[i],
                Node::Add(a, b) => s[a] + s[b],
                Node::Sub(a, b) => s[a] - s[b],
                Node::Mul(a, b) => s[a] * s[b],
                Node::Div(a, b) => s[a] / s[b],
                Node::Pow(a, b) => {
                    let e = s[b];
                    if e == e.trunc() && e.abs() < 64.0 {
                        s[a].powi(e as i32)
                    } else {
                        s[a].powf(e)
                    }
                }
                Node::Neg(a) => -s[a],
                Node::Exp(a) => s[a].exp(),
                Node::Ln(a) => s[a].ln(),
                Node::Sqrt(a) => s[a].sqrt(),
                Node::InvFloor(a) => 1.0 / s[a].max(NORM_FLOOR),
            };
            scratch.push(v);
        }
        for (o, &i) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[i];
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// A compiled expression with its analytic Jacobian.
#[derive(Clone, Debug)]
pub struct Expression {
    text: String,
    dim: usize,
    n_vars: usize,
    n_out: usize,
    value: Tape,
    /// Row-major `n_out x n_vars`.
    jacobian: Tape,
}

impl Expression {
    /// A field `f(x)` on `R^dim` returning `dim` components.
    pub fn field(text: &str, dim: usize) -> Result<Self> {
        Self::build(text, dim, false)
    }

    /// A pair map `g(x, y)` on `R^dim x R^dim` returning `dim` components.
    pub fn pair(text: &str, dim: usize) -> Result<Self> {
        Self::build(text, dim, true)
    }

    fn build(text: &str, dim: usize, allow_y: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("expression dimension must be positive".into()));
        }
        let tree = parse_spanned(text)?;
        let mut low = Lowering {
            text,
            dim,
            allow_y,
            g: Graph::default(),
        };
        let outputs = match low.lower(&tree)? {
            Value::Scalar(s) if dim == 1 => vec![s],
            Value::Vector(v) if v.len() == dim => v,
            Value::Scalar(_) if text.trim() == "0" => {
                let z = low.g.c(0.0);
                vec![z; dim]
            }
            other => {
                let got = match other {
                    Value::Scalar(_) => "a scalar".to_string(),
                    Value::Vector(v) => format!("{} components", v.len()),
                };
                return Err(err(text, 0, format!("expected {dim} components, got {got}")));
            }
        };
        let n_vars = if allow_y { 2 * dim } else { dim };
        let mut g = low.g;
        let mut jac = Vec::with_capacity(outputs.len() * n_vars);
        for &o in &outputs {
            for v in 0..n_vars {
                let mut memo = HashMap::new();
                jac.push(g.diff(o, v, &mut memo));
            }
        }
        Ok(Self {
            text: text.to_string(),
            dim,
            n_vars,
            n_out: outputs.len(),
            value: Tape::compile(&g, &outputs),
            jacobian: Tape::compile(&g, &jac),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of input variables (`dim`, or `2 dim` for pair maps).
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// `vars` holds `x1..xd` followed by `y1..yd` for pair maps.
    pub fn eval(&self, vars: &[f64], out: &mut [f64]) {
        debug_assert_eq!(vars.len(), self.n_vars);
        debug_assert_eq!(out.len(), self.n_out);
        SCRATCH.with(|s| self.value.run(vars, &mut s.borrow_mut(), out));
    }

    /// Row-major Jacobian, `dim x n_vars`.
    pub fn jacobian(&self, vars: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_out * self.n_vars);
        SCRATCH.with(|s| self.jacobian.run(vars, &mut s.borrow_mut(), out));
    }
}
