//! Text specs for coefficient fields, weights and boundary data.
//!
//! ```text
//! spec  := name [ '{' arg (',' arg)* '}' ]
//! arg   := key '=' value
//! value := number | '[' value (',' value)* ']' | spec
//! ```
//!
//! Identifiers produced by the field constructors are valid specs, so
//! `build_field(field.id())` rebuilds the same field.

use crate::coeffs::{
    build_tiled, compact_perturbation, conic_nd, meyer_conic, mollify, partial_conic, rescale, strip_perturbation,
    MatrixField, RadiiSchedule, WeightField,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Number(f64),
    List(Vec<Value>),
    Spec(Spec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spec {
    pub name: String,
    pub args: Vec<(String, Value)>,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::FieldSpec { spec: self.src.to_string(), detail: format!("{} (at byte {})", detail.into(), self.pos) }
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        if start == self.pos || self.src[start..].starts_with(|c: char| c.is_ascii_digit()) {
            return Err(self.err("expected an identifier"));
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn spec(&mut self) -> Result<Spec> {
        let name = self.ident()?;
        let mut args = Vec::new();
        if self.eat('{') {
            if !self.eat('}') {
                loop {
                    let key = self.ident()?;
                    self.expect('=')?;
                    let value = self.value()?;
                    if args.iter().any(|(k, _)| *k == key) {
                        return Err(self.err(format!("duplicate argument `{key}`")));
                    }
                    args.push((key, value));
                    if self.eat('}') {
                        break;
                    }
                    self.expect(',')?;
                }
            }
        }
        Ok(Spec { name, args })
    }

    fn value(&mut self) -> Result<Value> {
        self.skip_ws();
        match self.peek() {
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                if !self.eat(']') {
                    loop {
                        items.push(self.value()?);
                        if self.eat(']') {
                            break;
                        }
                        self.expect(',')?;
                    }
                }
                Ok(Value::List(items))
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || "+-.".contains(c)) {
                    self.pos += 1;
                }
                let text = &self.src[start..self.pos];
                text.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Value::Number)
                    .ok_or_else(|| self.err(format!("bad number `{text}`")))
            }
            Some(_) => Ok(Value::Spec(self.spec()?)),
            None => Err(self.err("unexpected end of input")),
        }
    }
}

/// Parses a spec string.
pub fn parse(src: &str) -> Result<Spec> {
    let mut p = Parser { src, pos: 0 };
    let spec = p.spec()?;
    p.skip_ws();
    if p.pos != src.len() {
        return Err(p.err("trailing characters"));
    }
    Ok(spec)
}

impl Spec {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::FieldSpec { spec: self.to_string(), detail: detail.into() }
    }

    /// Rejects arguments outside `allowed`.
    fn check_args(&self, allowed: &[&str]) -> Result<()> {
        match self.args.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, _)) => Err(self.fail(format!("unknown argument `{k}` for `{}`", self.name))),
            None => Ok(()),
        }
    }

    fn arg(&self, key: &str) -> Result<&Value> {
        self.args
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| self.fail(format!("missing argument `{key}`")))
    }

    fn number(&self, key: &str) -> Result<f64> {
        match self.arg(key)? {
            Value::Number(v) => Ok(*v),
            _ => Err(self.fail(format!("`{key}` must be a number"))),
        }
    }

    fn number_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.args.iter().any(|(k, _)| k == key) {
            self.number(key)
        } else {
            Ok(default)
        }
    }

    fn count(&self, key: &str) -> Result<usize> {
        let v = self.number(key)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(self.fail(format!("`{key}` must be a positive integer")));
        }
        Ok(v as usize)
    }

    fn numbers(&self, key: &str) -> Result<Vec<f64>> {
        match self.arg(key)? {
            Value::List(items) => items
                .iter()
                .map(|v| match v {
                    Value::Number(x) => Ok(*x),
                    _ => Err(self.fail(format!("`{key}` must be a list of numbers"))),
                })
                .collect(),
            _ => Err(self.fail(format!("`{key}` must be a list"))),
        }
    }

    fn sub(&self, key: &str) -> Result<&Spec> {
        match self.arg(key)? {
            Value::Spec(s) => Ok(s),
            _ => Err(self.fail(format!("`{key}` must be a field spec"))),
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::List(items) => {
                write!(f, "[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
            Value::Spec(s) => write!(f, "{s}"),
        }
    }
}

impl std::fmt::Display for Spec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name)?;
        if !self.args.is_empty() {
            write!(f, "{{")?;
            for (i, (k, v)) in self.args.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{k}={v}")?;
            }
            write!(f, "}}")?;
        }
        Ok(())
    }
}

/// Field names understood by [`build_field`].
pub const FIELD_NAMES: &[&str] = &[
    "identity",
    "scalar",
    "diag",
    "meyer_conic",
    "conic_nd",
    "partial_conic",
    "strip",
    "compact",
    "mollify",
    "tiled",
    "rescale",
];

fn field_from(spec: &Spec, dim: usize) -> Result<MatrixField> {
    let field = match spec.name.as_str() {
        "identity" => {
            spec.check_args(&[])?;
            MatrixField::identity(dim)
        }
        "scalar" => {
            spec.check_args(&["c"])?;
            MatrixField::scalar(dim, spec.number("c")?)?
        }
        "diag" => {
            spec.check_args(&["a"])?;
            MatrixField::diagonal(&spec.numbers("a")?)?
        }
        "meyer_conic" => {
            spec.check_args(&["beta"])?;
            meyer_conic(spec.number("beta")?)?
        }
        "conic_nd" => {
            spec.check_args(&["lambda", "N"])?;
            conic_nd(spec.number("lambda")?, spec.count("N")?)?
        }
        "partial_conic" => {
            spec.check_args(&["beta", "N"])?;
            partial_conic(spec.number("beta")?, spec.count("N")?)?
        }
        "strip" => {
            spec.check_args(&["a0", "pert"])?;
            strip_perturbation(&field_from(spec.sub("a0")?, dim)?, &field_from(spec.sub("pert")?, dim)?)?
        }
        "compact" => {
            spec.check_args(&["a0", "pert", "R0"])?;
            compact_perturbation(
                &field_from(spec.sub("a0")?, dim)?,
                &field_from(spec.sub("pert")?, dim)?,
                spec.number_or("R0", 1.0)?,
            )?
        }
        "mollify" => {
            spec.check_args(&["field", "scale"])?;
            mollify(&field_from(spec.sub("field")?, dim)?, spec.number("scale")?)?
        }
        "tiled" => {
            spec.check_args(&["base", "radii", "moll"])?;
            let schedule = RadiiSchedule::new(spec.numbers("radii")?)?;
            build_tiled(&field_from(spec.sub("base")?, dim)?, &schedule, spec.number_or("moll", 1.0)?)?
        }
        "rescale" => {
            spec.check_args(&["field", "s"])?;
            rescale(&field_from(spec.sub("field")?, dim)?, spec.number("s")?)?
        }
        other => {
            return Err(spec.fail(format!("unknown field `{other}`; expected one of {}", FIELD_NAMES.join(", "))));
        }
    };
    if field.dim() != dim {
        return Err(spec.fail(format!("field has dimension {}, the experiment uses {dim}", field.dim())));
    }
    Ok(field)
}

/// Builds the coefficient field described by `src` in dimension `dim`.
pub fn build_field(src: &str, dim: usize) -> Result<MatrixField> {
    field_from(&parse(src)?, dim)
}

/// `unit` or `power{alpha=…}`.
pub fn build_weight(src: &str, dim: usize) -> Result<WeightField> {
    let spec = parse(src)?;
    match spec.name.as_str() {
        "unit" => {
            spec.check_args(&[])?;
            Ok(WeightField::unit(dim))
        }
        "power" => {
            spec.check_args(&["alpha"])?;
            WeightField::power(dim, spec.number("alpha")?)
        }
        other => Err(spec.fail(format!("unknown weight `{other}`; expected unit or power"))),
    }
}

/// Closed-form boundary data for Dirichlet problems.
pub type Boundary = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Boundary data: `affine{axis=k}` is `x_k`; `radial_power{beta=β}` is
/// `|x|^β x_1`; `cylinder_power{beta=β}` is `(x_1²+x_2²)^{β/2} x_2`.
pub fn build_boundary(src: &str, dim: usize) -> Result<Boundary> {
    let spec = parse(src)?;
    match spec.name.as_str() {
        "affine" => {
            spec.check_args(&["axis"])?;
            let axis = spec.number_or("axis", 0.0)?;
            if axis < 0.0 || axis.fract() != 0.0 || axis as usize >= dim {
                return Err(spec.fail(format!("axis {axis} outside 0..{dim}")));
            }
            let k = axis as usize;
            Ok(Box::new(move |x: &[f64]| x[k]))
        }
        "radial_power" => {
            spec.check_args(&["beta"])?;
            let beta = spec.number("beta")?;
            Ok(Box::new(move |x: &[f64]| {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r == 0.0 {
                    0.0
                } else {
                    r.powf(beta) * x[0]
                }
            }))
        }
        "cylinder_power" => {
            spec.check_args(&["beta"])?;
            if dim < 2 {
                return Err(spec.fail("cylinder_power needs two coordinates"));
            }
            let beta = spec.number("beta")?;
            Ok(Box::new(move |x: &[f64]| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                if r2 == 0.0 {
                    0.0
                } else {
                    r2.powf(0.5 * beta) * x[1]
                }
            }))
        }
        other => Err(spec.fail(format!("unknown boundary data `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_specs() {
        let s = parse("compact{a0=identity, pert=scalar{c=1.5}, R0=0.25}").unwrap();
        assert_eq!(s.name, "compact");
        assert_eq!(s.args.len(), 3);
        assert_eq!(s.to_string(), "compact{a0=identity,pert=scalar{c=1.5},R0=0.25}");
        let t = parse("tiled{base=meyer_conic{beta=-0.5},radii=[2,100],moll=1}").unwrap();
        assert_eq!(t.args[1].1, Value::List(vec![Value::Number(2.0), Value::Number(100.0)]));
    }

    #[test]
    fn rejects_malformed_specs() {
        for bad in ["", "scalar{c=}", "scalar{c=1", "scalar{c=1}x", "9lives", "scalar{c=1,c=2}", "scalar{c=1e999}"] {
            assert!(matches!(parse(bad), Err(Error::FieldSpec { .. })), "{bad}");
        }
        assert!(build_field("scalar{k=1}", 2).is_err());
        assert!(build_field("nonsense", 2).is_err());
        assert!(build_field("scalar{c=nan}", 2).is_err());
        assert!(build_field("meyer_conic{beta=-0.5}", 3).is_err());
        assert!(build_weight("power{alpha=2.5}", 2).is_err());
    }

    #[test]
    fn constructor_ids_round_trip() {
        for src in [
            "identity",
            "scalar{c=2}",
            "diag{a=[1,2]}",
            "meyer_conic{beta=-0.5}",
            "strip{a0=identity,pert=scalar{c=2}}",
            "compact{a0=identity,pert=scalar{c=1.5},R0=0.25}",
            "mollify{field=compact{a0=identity,pert=scalar{c=1.5},R0=0.25},scale=0.1}",
            "rescale{field=meyer_conic{beta=-0.5},s=100}",
        ] {
            let f = build_field(src, 2).unwrap();
            assert_eq!(f.id(), src);
            let g = build_field(f.id(), 2).unwrap();
            for x in [[0.3, -0.2], [0.05, 0.9], [-1.5, 0.1]] {
                assert_eq!(f.eval(&x), g.eval(&x));
            }
        }
        assert_eq!(build_field("partial_conic{beta=-0.5,N=3}", 3).unwrap().id(), "partial_conic{beta=-0.5,N=3}");
    }

    #[test]
    fn boundary_data() {
        let b = build_boundary("radial_power{beta=-0.5}", 2).unwrap();
        assert!((b(&[4.0, 0.0]) - 2.0).abs() < 1e-15);
        assert_eq!(b(&[0.0, 0.0]), 0.0);
        let c = build_boundary("cylinder_power{beta=-0.5}", 3).unwrap();
        assert!((c(&[0.0, 4.0, 7.0]) - 2.0).abs() < 1e-15);
        assert!(build_boundary("affine{axis=2}", 2).is_err());
    }
}
