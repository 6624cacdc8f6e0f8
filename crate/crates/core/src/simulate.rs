//! Synthetic ordinal data from a latent variable model.
//!
//! The latent response is `y* = location(x) + scale(x) * eps` and the observed
//! category is `r` when `theta_{r-1} < y* <= theta_r`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{VariableKind, VariableSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Indicator(CmpOp, Box<Node>, Box<Node>),
    Exp(Box<Node>),
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Var(j) => x[*j],
            Node::Neg(a) => -a.eval(x),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Node::Indicator(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                let holds = match op {
                    CmpOp::Le => a <= b,
                    CmpOp::Lt => a < b,
                    CmpOp::Ge => a >= b,
                    CmpOp::Gt => a > b,
                    CmpOp::Eq => a == b,
                    CmpOp::Ne => a != b,
                };
                f64::from(u8::from(holds))
            }
            Node::Exp(a) => a.eval(x).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    Cmp(CmpOp),
    LParen,
    RParen,
}

fn tokenize(text: &str) -> std::result::Result<Vec<Token>, String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            '+' | '-' | '*' | '/' => {
                tokens.push(Token::Op(c));
                i += 1;
            }
            '<' | '>' | '=' | '!' => {
                let two = chars.get(i + 1) == Some(&'=');
                let op = match (c, two) {
                    ('<', true) => CmpOp::Le,
                    ('<', false) => CmpOp::Lt,
                    ('>', true) => CmpOp::Ge,
                    ('>', false) => CmpOp::Gt,
                    ('=', true) => CmpOp::Eq,
                    ('!', true) => CmpOp::Ne,
                    _ => return Err(format!("unexpected `{c}` at position {}", i + 1)),
                };
                tokens.push(Token::Cmp(op));
                i += if two { 2 } else { 1 };
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse().map_err(|_| format!("bad number `{s}`"))?;
                tokens.push(Token::Num(v));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                tokens.push(Token::Ident(chars[start..i].iter().collect()));
            }
            _ => return Err(format!("unexpected `{c}` at position {}", i + 1)),
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    names: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Token) -> std::result::Result<(), String> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(format!("expected {want:?}, found {t:?}")),
            None => Err(format!("expected {want:?}, found end of input")),
        }
    }

    fn expr(&mut self) -> std::result::Result<Node, String> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> std::result::Result<Node, String> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> std::result::Result<Node, String> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> std::result::Result<Node, String> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Node::Num(v)),
            Some(Token::LParen) => {
                let e = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Some(Token::Ident(name)) if self.peek() == Some(&Token::LParen) => {
                self.pos += 1;
                let node = match name.as_str() {
                    "I" => {
                        let lhs = self.expr()?;
                        let op = match self.next() {
                            Some(Token::Cmp(op)) => op,
                            _ => return Err("I(...) needs a comparison".into()),
                        };
                        Node::Indicator(op, Box::new(lhs), Box::new(self.expr()?))
                    }
                    "exp" => Node::Exp(Box::new(self.expr()?)),
                    _ => return Err(format!("unknown function `{name}`")),
                };
                self.expect(Token::RParen)?;
                Ok(node)
            }
            Some(Token::Ident(name)) => self
                .names
                .iter()
                .position(|n| *n == name)
                .map(Node::Var)
                .ok_or_else(|| format!("unknown variable `{name}`")),
            Some(t) => Err(format!("unexpected {t:?}")),
            None => Err("unexpected end of input".into()),
        }
    }
}

/// Arithmetic over covariates: `+ - * /`, parentheses, numbers, variable
/// names, `exp(e)` and indicators `I(a <= b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Formula {
    text: String,
    root: Node,
}

impl Formula {
    pub fn parse(text: &str, names: &[String]) -> Result<Self> {
        let err = |message: String| Error::Formula {
            formula: text.to_string(),
            message,
        };
        let tokens = tokenize(text).map_err(err)?;
        if tokens.is_empty() {
            return Err(err("empty formula".into()));
        }
        let mut parser = Parser { tokens, pos: 0, names };
        let root = parser.expr().map_err(err)?;
        if parser.pos < parser.tokens.len() {
            return Err(err(format!("trailing input at token {}", parser.pos + 1)));
        }
        Ok(Formula {
            text: text.to_string(),
            root,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.root.eval(x)
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    /// Standard normal.
    Normal,
    /// Uniform on `[0, 1)`.
    Uniform,
    /// 0 or 1 with equal probability.
    Binary,
    /// Uniform over `1..=levels`.
    Ordinal(u32),
}

impl Generator {
    fn kind(self) -> VariableKind {
        match self {
            Generator::Normal | Generator::Uniform => VariableKind::Metric,
            Generator::Binary => VariableKind::Binary,
            Generator::Ordinal(_) => VariableKind::Ordinal,
        }
    }

    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Generator::Normal => rng.sample(StandardNormal),
            Generator::Uniform => rng.random::<f64>(),
            Generator::Binary => f64::from(u8::from(rng.random_bool(0.5))),
            Generator::Ordinal(m) => f64::from(rng.random_range(1..=m)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub generator: Generator,
}

impl FromStr for CovariateSpec {
    type Err = Error;

    /// `name:normal`, `name:uniform`, `name:binary` or `name:ordinal:levels`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || Error::InvalidOptions(format!("bad covariate `{s}`; expected name:normal|uniform|binary|ordinal:m"));
        let generator = match parts.as_slice() {
            [_, "normal"] => Generator::Normal,
            [_, "uniform"] => Generator::Uniform,
            [_, "binary"] => Generator::Binary,
            [_, "ordinal", m] => match m.parse::<u32>() {
                Ok(m) if m >= 2 => Generator::Ordinal(m),
                _ => return Err(bad()),
            },
            _ => return Err(bad()),
        };
        if parts[0].is_empty() {
            return Err(bad());
        }
        Ok(CovariateSpec {
            name: parts[0].to_string(),
            generator,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    #[default]
    Logistic,
    Normal,
}

impl Noise {
    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Noise::Normal => rng.sample(StandardNormal),
            Noise::Logistic => {
                // inverse cdf on the open interval
                let u: f64 = loop {
                    let u = rng.random::<f64>();
                    if u > 0.0 {
                        break u;
                    }
                };
                (u / (1.0 - u)).ln()
            }
        }
    }
}

impl FromStr for Noise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" => Ok(Noise::Logistic),
            "normal" => Ok(Noise::Normal),
            _ => Err(Error::InvalidOptions(format!("unknown noise `{s}`"))),
        }
    }
}

impl fmt::Display for Noise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Noise::Logistic => "logistic",
            Noise::Normal => "normal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub covariates: Vec<CovariateSpec>,
    pub location: String,
    /// Latent standard-deviation multiplier; must be positive on every row.
    pub scale: String,
    pub noise: Noise,
    /// Increasing category boundaries; `k = thresholds.len() + 1`.
    pub thresholds: Vec<f64>,
    pub seed: u64,
}

impl SimSpec {
    pub fn k(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn variable_specs(&self) -> Vec<VariableSpec> {
        self.covariates
            .iter()
            .enumerate()
            .map(|(j, c)| VariableSpec::new(c.name.clone(), c.generator.kind(), j))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub specs: Vec<VariableSpec>,
    pub y: Vec<usize>,
    /// Column-major covariates.
    pub columns: Vec<Vec<f64>>,
}

impl SimulatedData {
    pub fn write_csv<W: Write>(&self, response: &str, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec![response.to_string()];
        header.extend(self.specs.iter().map(|s| s.name.clone()));
        writer.write_record(&header)?;
        for (i, y) in self.y.iter().enumerate() {
            let mut record = vec![y.to_string()];
            record.extend(self.columns.iter().map(|c| c[i].to_string()));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub fn simulate(spec: &SimSpec) -> Result<SimulatedData> {
    if spec.n == 0 {
        return Err(Error::InvalidOptions("n must be positive".into()));
    }
    if spec.thresholds.is_empty() {
        return Err(Error::InvalidOptions("at least one threshold is required".into()));
    }
    if spec.thresholds.iter().any(|t| !t.is_finite()) || spec.thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidOptions("thresholds must be finite and strictly increasing".into()));
    }
    let names: Vec<String> = spec.covariates.iter().map(|c| c.name.clone()).collect();
    for (j, name) in names.iter().enumerate() {
        if names[..j].contains(name) {
            return Err(Error::InvalidOptions(format!("duplicate covariate `{name}`")));
        }
    }
    let location = Formula::parse(&spec.location, &names)?;
    let scale = Formula::parse(&spec.scale, &names)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut columns = vec![Vec::with_capacity(spec.n); names.len()];
    let mut y = Vec::with_capacity(spec.n);
    let mut row = vec![0.0; names.len()];
    for i in 0..spec.n {
        for (j, c) in spec.covariates.iter().enumerate() {
            row[j] = c.generator.draw(&mut rng);
            columns[j].push(row[j]);
        }
        let sigma = scale.eval(&row);
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Formula {
                formula: spec.scale.clone(),
                message: format!("scale is {sigma} on row {}; it must be positive", i + 1),
            });
        }
        let mu = location.eval(&row);
        if !mu.is_finite() {
            return Err(Error::Formula {
                formula: spec.location.clone(),
                message: format!("location is {mu} on row {}", i + 1),
            });
        }
        let latent = mu + sigma * spec.noise.draw(&mut rng);
        y.push(1 + spec.thresholds.iter().filter(|&&t| t < latent).count());
    }
    Ok(SimulatedData {
        specs: spec.variable_specs(),
        y,
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn formula_evaluation() {
        let n = names(&["x1", "x2"]);
        let cases = [
            ("1*I(x1 <= 0)", [-0.5, 3.0], 1.0),
            ("1*I(x1 <= 0)", [0.5, 3.0], 0.0),
            ("exp(0.8*I(x2<=0))", [0.0, -1.0], 0.8f64.exp()),
            ("2 + 3 * x1 - x2 / 2", [1.0, 4.0], 3.0),
            ("-(x1 - 1) * 2", [3.0, 0.0], -4.0),
            ("1.5e1 + I(x2 != 0)", [0.0, 0.0], 15.0),
            ("I(x1 > x2) + I(x1 >= 1) + I(x2 < 1) + I(x1 == 1)", [1.0, 0.0], 4.0),
        ];
        for (text, x, want) in cases {
            let f = Formula::parse(text, &n).unwrap();
            assert!((f.eval(&x) - want).abs() < 1e-15, "{text}");
        }
    }

    #[test]
    fn formula_errors() {
        let n = names(&["x1"]);
        for bad in ["", "x2", "1 +", "foo(1)", "I(x1)", "(1", "1 2", "x1 $ 2", "1 = 2"] {
            assert!(matches!(Formula::parse(bad, &n), Err(Error::Formula { .. })), "{bad}");
        }
    }

    #[test]
    fn covariate_specs() {
        let c: CovariateSpec = "x:ordinal:5".parse().unwrap();
        assert_eq!(c.generator, Generator::Ordinal(5));
        assert!("x:poisson".parse::<CovariateSpec>().is_err());
        assert!(":normal".parse::<CovariateSpec>().is_err());
        assert!("x:ordinal:1".parse::<CovariateSpec>().is_err());
    }

    fn spec(location: &str, scale: &str) -> SimSpec {
        SimSpec {
            n: 500,
            covariates: vec!["x1:binary".parse().unwrap(), "x2:normal".parse().unwrap()],
            location: location.into(),
            scale: scale.into(),
            noise: Noise::Logistic,
            thresholds: vec![-1.0, 1.0],
            seed: 3,
        }
    }

    #[test]
    fn seeded_and_well_formed() {
        let s = spec("I(x1 <= 0)", "1");
        let a = simulate(&s).unwrap();
        assert_eq!(a, simulate(&s).unwrap());
        assert!(a.y.iter().all(|&y| (1..=3).contains(&y)));
        assert!(a.columns[0].iter().all(|&v| v == 0.0 || v == 1.0));
        let mut buf = Vec::new();
        a.write_csv("y", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("y,x1,x2\n"));
        assert_eq!(text.lines().count(), 501);
    }

    #[test]
    fn nonpositive_scale_rejected() {
        assert!(matches!(simulate(&spec("0", "x2")), Err(Error::Formula { .. })));
        let mut s = spec("0", "1");
        s.thresholds = vec![1.0, 1.0];
        assert!(simulate(&s).is_err());
    }
}
