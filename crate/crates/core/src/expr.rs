//! Scalar coefficient expressions of one or two real variables.
//!
//! Grammar: numeric literals, the bound variables, `+ - * / ^`, unary minus,
//! parentheses and the functions `sin cos exp log sqrt abs`. `^` is
//! right-associative and binds tighter than unary minus, so `-x^2 = -(x^2)`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ExprError;

/// Which variables an expression is allowed to reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Signature {
    /// One argument named `x`.
    X,
    /// One argument named `t` (time-only data such as fluxes and traces).
    T,
    /// Two arguments `(x, t)`.
    XT,
}

impl Signature {
    pub fn arity(self) -> usize {
        match self {
            Signature::X | Signature::T => 1,
            Signature::XT => 2,
        }
    }

    fn slot(self, name: &str) -> Option<usize> {
        match (self, name) {
            (Signature::X, "x") | (Signature::T, "t") | (Signature::XT, "x") => Some(0),
            (Signature::XT, "t") => Some(1),
            _ => None,
        }
    }

    fn var_name(self, slot: usize) -> &'static str {
        match (self, slot) {
            (Signature::T, _) => "t",
            (_, 0) => "x",
            _ => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, args: &[f64; 2]) -> Result<f64, ExprError> {
        let v = match self {
            Node::Num(v) => *v,
            Node::Var(i) => args[*i],
            Node::Neg(a) => -a.eval(args)?,
            Node::Bin(op, l, r) => {
                let a = l.eval(args)?;
                let b = r.eval(args)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::Domain("division by zero".into()));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Node::Call(f, a) => {
                let a = a.eval(args)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(ExprError::Domain(format!("log of nonpositive value {a}")));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(ExprError::Domain(format!("sqrt of negative value {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Domain(format!("non-finite result {v}")))
        }
    }

    fn uses(&self, slot: usize) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(i) => *i == slot,
            Node::Neg(a) | Node::Call(_, a) => a.uses(slot),
            Node::Bin(_, l, r) => l.uses(slot) || r.uses(slot),
        }
    }

    fn write(&self, sig: Signature, out: &mut String) {
        match self {
            Node::Num(v) => {
                if *v < 0.0 {
                    out.push_str(&format!("(-{:?})", -v));
                } else {
                    out.push_str(&format!("{v:?}"));
                }
            }
            Node::Var(i) => out.push_str(sig.var_name(*i)),
            Node::Neg(a) => {
                out.push_str("(-");
                a.write(sig, out);
                out.push(')');
            }
            Node::Bin(op, l, r) => {
                out.push('(');
                l.write(sig, out);
                out.push_str(match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => " * ",
                    BinOp::Div => " / ",
                    BinOp::Pow => " ^ ",
                });
                r.write(sig, out);
                out.push(')');
            }
            Node::Call(f, a) => {
                out.push_str(f.name());
                out.push('(');
                a.write(sig, out);
                out.push(')');
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
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
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("malformed number `{text}`"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else if c == '(' {
            out.push((i, Tok::LParen));
            i += 1;
        } else if c == ')' {
            out.push((i, Tok::RParen));
            i += 1;
        } else {
            return Err(ExprError::Syntax {
                pos: i,
                msg: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [(usize, Tok)],
    pos: usize,
    end: usize,
    sig: Signature,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            pos: self.here(),
            msg: msg.into(),
        })
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let at = self.here();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(func) = Func::from_name(&name) {
                    if self.peek() != Some(&Tok::LParen) {
                        return self.syntax(format!("expected `(` after `{name}`"));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Node::Call(func, Box::new(arg)))
                } else if let Some(slot) = self.sig.slot(&name) {
                    Ok(Node::Var(slot))
                } else {
                    Err(ExprError::UnknownIdentifier { name, pos: at })
                }
            }
            Some(tok) => self.syntax(format!("unexpected token {tok:?}")),
            None => self.syntax("unexpected end of expression"),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            self.syntax("expected `)`")
        }
    }
}

/// A parsed, immutable coefficient function.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSpec {
    source: String,
    sig: Signature,
    tree: Node,
}

/// Parses `text` as a function of `x` (arity 1) or of `(x, t)` (arity 2).
pub fn parse_expression(text: &str, arity: usize) -> Result<FunctionSpec, ExprError> {
    let sig = match arity {
        1 => Signature::X,
        2 => Signature::XT,
        other => {
            return Err(ExprError::Arity {
                expected: 2,
                got: other,
            })
        }
    };
    FunctionSpec::parse(text, sig)
}

impl FunctionSpec {
    pub fn parse(text: &str, sig: Signature) -> Result<Self, ExprError> {
        let toks = tokenize(text)?;
        let mut p = Parser {
            toks: &toks,
            pos: 0,
            end: text.len(),
            sig,
        };
        let tree = p.expr()?;
        if p.pos != toks.len() {
            return p.syntax("trailing input");
        }
        Ok(Self {
            source: text.to_string(),
            sig,
            tree,
        })
    }

    /// Constant function, printed with round-trip precision.
    pub fn constant(value: f64, sig: Signature) -> Self {
        let tree = Node::Num(value);
        let mut source = String::new();
        tree.write(sig, &mut source);
        Self { source, sig, tree }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn signature(&self) -> Signature {
        self.sig
    }

    pub fn arity(&self) -> usize {
        self.sig.arity()
    }

    /// Evaluates with one argument, or two when `t` is supplied.
    pub fn evaluate(&self, x: f64, t: Option<f64>) -> Result<f64, ExprError> {
        let got = 1 + t.is_some() as usize;
        if got != self.arity() {
            return Err(ExprError::Arity {
                expected: self.arity(),
                got,
            });
        }
        self.tree.eval(&[x, t.unwrap_or(0.0)])
    }

    pub fn eval1(&self, v: f64) -> Result<f64, ExprError> {
        self.evaluate(v, None)
    }

    pub fn eval2(&self, x: f64, t: f64) -> Result<f64, ExprError> {
        self.evaluate(x, Some(t))
    }

    /// True if the expression references `t`.
    pub fn depends_on_time(&self) -> bool {
        match self.sig {
            Signature::X => false,
            Signature::T => self.tree.uses(0),
            Signature::XT => self.tree.uses(1),
        }
    }

    /// True if the expression references no variable at all.
    pub fn is_constant(&self) -> bool {
        !self.tree.uses(0) && !self.tree.uses(1)
    }

    /// Fully parenthesized canonical form; re-parses to an equivalent tree.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        self.tree.write(self.sig, &mut s);
        s
    }
}

impl fmt::Display for FunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl Serialize for FunctionSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

/// Deserializes as a string; the signature is decided by the caller, so
/// this wrapper is only used where the field's signature is implied.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ExprText(pub String);

impl<'de> Deserialize<'de> for ExprText {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Num(f64),
            Int(i64),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Text(s) => ExprText(s),
            Raw::Num(v) => ExprText(format!("{v:?}")),
            Raw::Int(v) => ExprText(v.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xt(s: &str) -> FunctionSpec {
        parse_expression(s, 2).unwrap()
    }

    #[test]
    fn basic_examples() {
        assert!((xt("1 + 0.1*x*t").eval2(2.0, 3.0).unwrap() - 1.6).abs() < 1e-15);
        let f = parse_expression("x^2 + x", 1).unwrap();
        assert_eq!(f.eval1(2.0).unwrap(), 6.0);
        assert!(matches!(
            parse_expression("x + y", 2),
            Err(ExprError::UnknownIdentifier { ref name, pos: 4 }) if name == "y"
        ));
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(parse_expression("sin(x)", 1).unwrap().eval1(0.0).unwrap(), 0.0);
        assert!(matches!(xt("x/t").eval2(1.0, 0.0), Err(ExprError::Domain(_))));
        assert_eq!(xt("exp(-t)*cos(x)").eval2(0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let c = |s: &str| parse_expression(s, 1).unwrap().eval1(0.0).unwrap();
        assert_eq!(c("2+3*4"), 14.0);
        assert_eq!(c("2^3^2"), 512.0);
        assert_eq!(c("-2^2"), -4.0);
        assert_eq!(c("8/4/2"), 1.0);
        assert_eq!(c("10-4-3"), 3.0);
        assert_eq!(c("2^-1"), 0.5);
        assert_eq!(c("1.5e2 + 2E-1"), 150.2);
    }

    #[test]
    fn arity_is_enforced() {
        let one = parse_expression("x", 1).unwrap();
        assert!(matches!(one.eval2(1.0, 2.0), Err(ExprError::Arity { expected: 1, got: 2 })));
        let two = xt("x*t");
        assert!(matches!(two.eval1(1.0), Err(ExprError::Arity { expected: 2, got: 1 })));
        assert!(matches!(parse_expression("t", 1), Err(ExprError::UnknownIdentifier { .. })));
        assert!(parse_expression("x", 3).is_err());
    }

    #[test]
    fn time_signature() {
        let g = FunctionSpec::parse("1 + t/4", Signature::T).unwrap();
        assert_eq!(g.eval1(4.0).unwrap(), 2.0);
        assert!(g.depends_on_time());
        assert!(FunctionSpec::parse("x", Signature::T).is_err());
    }

    #[test]
    fn syntax_errors_report_position() {
        match FunctionSpec::parse("1 + * 2", Signature::XT) {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(FunctionSpec::parse("(1 + x", Signature::XT), Err(ExprError::Syntax { pos: 6, .. })));
        assert!(matches!(FunctionSpec::parse("sin x", Signature::XT), Err(ExprError::Syntax { .. })));
        assert!(matches!(FunctionSpec::parse("1 2", Signature::XT), Err(ExprError::Syntax { .. })));
        assert!(matches!(FunctionSpec::parse("1 $ 2", Signature::XT), Err(ExprError::Syntax { pos: 2, .. })));
        assert!(matches!(FunctionSpec::parse("", Signature::XT), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn domain_errors() {
        let c = |s: &str| parse_expression(s, 1).unwrap().eval1(0.0);
        assert!(c("log(x)").is_err());
        assert!(c("sqrt(x-1)").is_err());
        assert!(c("exp(1000)").is_err());
        assert!(c("abs(x-3)").is_ok());
    }

    #[test]
    fn constant_and_time_dependence() {
        assert!(xt("2*3").is_constant());
        assert!(!xt("2*x").depends_on_time());
        assert!(xt("x*t").depends_on_time());
        let c = FunctionSpec::constant(-0.25, Signature::XT);
        assert_eq!(c.eval2(5.0, 5.0).unwrap(), -0.25);
        assert_eq!(FunctionSpec::parse(c.source(), Signature::XT).unwrap().eval2(0.0, 0.0).unwrap(), -0.25);
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(|v| format!("{v}")),
            Just("x".to_string()),
            Just("t".to_string()),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), prop::sample::select(vec!["+", "-", "*", "/"]))
                    .prop_map(|(a, b, op)| format!("{a} {op} {b}")),
                (inner.clone(), 0u8..3).prop_map(|(a, p)| format!("({a})^{p}")),
                inner.clone().prop_map(|a| format!("-{a}")),
                (inner, prop::sample::select(vec!["sin", "cos", "abs"])).prop_map(|(a, f)| format!("{f}({a})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_equivalent(src in arb_expr(), pts in prop::collection::vec((-3.0f64..3.0, 0.0f64..2.0), 100)) {
            let e = xt(&src);
            let again = xt(&e.canonical());
            prop_assert_eq!(&again.canonical(), &e.canonical());
            for (x, t) in pts {
                let a = e.eval2(x, t);
                let b = again.eval2(x, t);
                match (a, b) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                    (Err(_), Err(_)) => {}
                    (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
                }
            }
        }
    }
}
