//! Deterministic coefficient functions of time and space-time fields.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{self, Compiled};

type NativeT = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type NativeTx = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A deterministic function of time.
#[derive(Clone)]
pub enum TimeFn {
    Const(f64),
    Expr { source: String, code: Arc<Compiled> },
    Native(NativeT),
}

impl fmt::Debug for TimeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeFn::Const(v) => write!(f, "Const({v})"),
            TimeFn::Expr { source, .. } => write!(f, "Expr({source:?})"),
            TimeFn::Native(_) => f.write_str("Native"),
        }
    }
}

impl From<f64> for TimeFn {
    fn from(v: f64) -> Self {
        TimeFn::Const(v)
    }
}

impl TimeFn {
    /// Parses an expression in `t`.
    pub fn parse(source: &str) -> Result<Self> {
        let e = expr::parse(source).map_err(expr::ExprError::from)?;
        let code = e.compile(&["t"])?;
        if code.is_constant() {
            return Ok(TimeFn::Const(code.eval(&[0.0])?));
        }
        Ok(TimeFn::Expr {
            source: source.to_string(),
            code: Arc::new(code),
        })
    }

    pub fn native(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        TimeFn::Native(Arc::new(f))
    }

    pub fn try_eval(&self, t: f64) -> Result<f64> {
        let v = match self {
            TimeFn::Const(v) => *v,
            TimeFn::Expr { code, .. } => code.eval(&[t])?,
            TimeFn::Native(f) => f(t),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NumericDomain(format!("coefficient is {v} at t = {t}")))
        }
    }

    /// Evaluates, returning NaN where the expression is undefined.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Const(v) => *v,
            _ => self.try_eval(t).unwrap_or(f64::NAN),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            TimeFn::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    /// `∫_a^b f(s) ds`; exact for constants, composite Simpson otherwise.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if let Some(v) = self.as_const() {
            return v * (b - a);
        }
        if a == b {
            return 0.0;
        }
        const N: usize = 1024;
        let h = (b - a) / N as f64;
        let mut s = self.eval(a) + self.eval(b);
        for k in 1..N {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * self.eval(a + k as f64 * h);
        }
        s * h / 3.0
    }

    /// Display form used in reports.
    pub fn describe(&self) -> String {
        match self {
            TimeFn::Const(v) => format!("{v:?}"),
            TimeFn::Expr { source, .. } => source.clone(),
            TimeFn::Native(_) => "<native>".into(),
        }
    }
}

/// A scalar function of `(t, x)` with `x ∈ ℝ^d`.
#[derive(Clone)]
pub enum FieldFn {
    Const(f64),
    Expr { source: String, code: Arc<Compiled> },
    Native(NativeTx),
}

impl fmt::Debug for FieldFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldFn::Const(v) => write!(f, "Const({v})"),
            FieldFn::Expr { source, .. } => write!(f, "Expr({source:?})"),
            FieldFn::Native(_) => f.write_str("Native"),
        }
    }
}

impl From<f64> for FieldFn {
    fn from(v: f64) -> Self {
        FieldFn::Const(v)
    }
}

/// Slot names for space-time expressions: `t, x` when `dim == 1`, else
/// `t, x1, ..., xd`.
pub fn space_time_slots(dim: usize) -> Vec<String> {
    let mut v = vec!["t".to_string()];
    if dim == 1 {
        v.push("x".into());
    } else {
        v.extend((1..=dim).map(|i| format!("x{i}")));
    }
    v
}

impl FieldFn {
    pub fn parse(source: &str, dim: usize) -> Result<Self> {
        let e = expr::parse(source).map_err(expr::ExprError::from)?;
        let slots = space_time_slots(dim);
        let refs: Vec<&str> = slots.iter().map(String::as_str).collect();
        let code = e.compile(&refs)?;
        if code.is_constant() {
            return Ok(FieldFn::Const(code.eval(&vec![0.0; refs.len()])?));
        }
        Ok(FieldFn::Expr {
            source: source.to_string(),
            code: Arc::new(code),
        })
    }

    pub fn native(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        FieldFn::Native(Arc::new(f))
    }

    pub fn try_eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        let v = match self {
            FieldFn::Const(v) => *v,
            FieldFn::Expr { code, .. } => {
                let mut slots = [0.0; 9];
                if x.len() < 9 {
                    slots[0] = t;
                    slots[1..=x.len()].copy_from_slice(x);
                    code.eval(&slots[..=x.len()])?
                } else {
                    let mut s = vec![t];
                    s.extend_from_slice(x);
                    code.eval(&s)?
                }
            }
            FieldFn::Native(f) => f(t, x),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NumericDomain(format!("field is {v} at t = {t}, x = {x:?}")))
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            FieldFn::Const(v) => *v,
            _ => self.try_eval(t, x).unwrap_or(f64::NAN),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            FieldFn::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            FieldFn::Const(v) => format!("{v:?}"),
            FieldFn::Expr { source, .. } => source.clone(),
            FieldFn::Native(_) => "<native>".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_expressions_fold() {
        assert!(matches!(TimeFn::parse("2*0.05").unwrap(), TimeFn::Const(v) if (v - 0.1).abs() < 1e-15));
        assert!(matches!(FieldFn::parse("pi", 1).unwrap(), FieldFn::Const(_)));
    }

    #[test]
    fn simpson_integral_is_accurate() {
        let f = TimeFn::parse("exp(t)").unwrap();
        let v = f.integral(0.0, 1.0);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-12);
        assert_eq!(TimeFn::Const(0.3).integral(0.5, 1.5), 0.3);
    }

    #[test]
    fn field_slots_depend_on_dimension() {
        let f = FieldFn::parse("x1*x2 + t", 2).unwrap();
        assert_eq!(f.eval(1.0, &[2.0, 3.0]), 7.0);
        assert!(FieldFn::parse("x1", 1).is_err());
        let g = FieldFn::parse("log(x)", 1).unwrap();
        assert!(g.try_eval(0.0, &[-1.0]).is_err());
        assert!(g.eval(0.0, &[-1.0]).is_nan());
    }
}
