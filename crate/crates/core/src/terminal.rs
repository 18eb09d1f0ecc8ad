//! Terminal conditions `ξ = f(X_T)` as functions of the terminal state.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{self, Compiled, ExprError};
use crate::func::space_time_slots;

type NativeX = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Terminal function of the state. The catalog variants unlock closed-form
/// oracles; `Expr` and `Native` are evaluated pointwise only.
#[derive(Clone)]
pub enum Terminal {
    /// `ξ ≡ c`.
    Constant(f64),
    /// `ξ = scale · exp(slope · x)`.
    ExpAffine { scale: f64, slope: Vec<f64> },
    /// `ξ = Σ c_k x^k` (one-dimensional).
    Polynomial(Vec<f64>),
    /// `ξ = Σ c_k cos(kπx)` for `k = 0, 1, ...` (one-dimensional, on `[0, 1]`).
    Cosine(Vec<f64>),
    /// Expression in `x` (or `x1..xd`).
    Expr { source: String, code: Arc<Compiled>, dim: usize },
    Native(NativeX),
    /// `ξ = base + shift`, keeping the base for basis selection.
    Shifted { base: Box<Terminal>, shift: f64 },
}

impl fmt::Debug for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::Constant(c) => write!(f, "Constant({c})"),
            Terminal::ExpAffine { scale, slope } => write!(f, "ExpAffine({scale}, {slope:?})"),
            Terminal::Polynomial(c) => write!(f, "Polynomial({c:?})"),
            Terminal::Cosine(c) => write!(f, "Cosine({c:?})"),
            Terminal::Expr { source, .. } => write!(f, "Expr({source:?})"),
            Terminal::Native(_) => f.write_str("Native"),
            Terminal::Shifted { base, shift } => write!(f, "Shifted({base:?}, {shift})"),
        }
    }
}

/// Entry of the built-in terminal catalog.
#[derive(Debug, Clone, Copy)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub form: &'static str,
    pub oracles: &'static str,
}

pub const CATALOG: [CatalogEntry; 5] = [
    CatalogEntry {
        name: "constant",
        form: "xi = c",
        oracles: "transform-exact oracle; closed-form Z = 0; ODE reduction for SDU",
    },
    CatalogEntry {
        name: "exp-affine",
        form: "xi = scale * exp(slope . x)",
        oracles: "transform-exact oracle with closed-form Z; basis augmentation with exp(slope . x)",
    },
    CatalogEntry {
        name: "polynomial",
        form: "xi = c0 + c1 x + ... + ck x^k (must stay positive)",
        oracles: "transform-exact oracle by Gauss-Hermite quadrature (exact for Gaussian states)",
    },
    CatalogEntry {
        name: "cosine",
        form: "xi = a0 + a1 cos(pi x) + ... + ak cos(k pi x) on [0, 1]",
        oracles: "Neumann series oracle (when 2*delta + 1 is an integer)",
    },
    CatalogEntry {
        name: "expr",
        form: "any expression in x (or x1..xd)",
        oracles: "transform-exact by quadrature for Brownian states; Z by finite differences",
    },
];

impl Terminal {
    pub fn exp_affine(scale: f64, slope: f64) -> Self {
        Terminal::ExpAffine { scale, slope: vec![slope] }
    }

    /// Expression in `x` (dim 1) or `x1..xd`.
    pub fn parse(source: &str, dim: usize) -> Result<Self> {
        let e = expr::parse(source).map_err(ExprError::from)?;
        let slots = space_time_slots(dim);
        let refs: Vec<&str> = slots[1..].iter().map(String::as_str).collect();
        let code = e.compile(&refs)?;
        Ok(Terminal::Expr {
            source: source.to_string(),
            code: Arc::new(code),
            dim,
        })
    }

    pub fn native(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Terminal::Native(Arc::new(f))
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<f64> {
        let v = match self {
            Terminal::Constant(c) => *c,
            Terminal::ExpAffine { scale, slope } => {
                scale * slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>().exp()
            }
            Terminal::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * x[0] + ck),
            Terminal::Cosine(c) => c
                .iter()
                .enumerate()
                .map(|(k, ck)| ck * (k as f64 * std::f64::consts::PI * x[0]).cos())
                .sum(),
            Terminal::Expr { code, .. } => code.eval(x)?,
            Terminal::Native(f) => f(x),
            Terminal::Shifted { base, shift } => base.try_eval(x)? + shift,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NumericDomain(format!("terminal is {v} at x = {x:?}")))
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.try_eval(x).unwrap_or(f64::NAN)
    }

    /// `ξ + c`.
    pub fn plus(&self, c: f64) -> Terminal {
        match self {
            Terminal::Constant(v) => Terminal::Constant(v + c),
            Terminal::Polynomial(p) if !p.is_empty() => {
                let mut p = p.clone();
                p[0] += c;
                Terminal::Polynomial(p)
            }
            Terminal::Cosine(p) if !p.is_empty() => {
                let mut p = p.clone();
                p[0] += c;
                Terminal::Cosine(p)
            }
            Terminal::Shifted { base, shift } => Terminal::Shifted {
                base: base.clone(),
                shift: shift + c,
            },
            other => Terminal::Shifted {
                base: Box::new(other.clone()),
                shift: c,
            },
        }
    }

    /// Slope of the exponential part of an exp-affine terminal, shifted or not.
    pub fn exp_slope(&self) -> Option<&[f64]> {
        match self {
            Terminal::ExpAffine { slope, .. } => Some(slope),
            Terminal::Shifted { base, .. } => base.exp_slope(),
            _ => None,
        }
    }

    /// Catalog name, if any.
    pub fn catalog_name(&self) -> Option<&'static str> {
        match self {
            Terminal::Constant(_) => Some("constant"),
            Terminal::ExpAffine { .. } => Some("exp-affine"),
            Terminal::Polynomial(_) => Some("polynomial"),
            Terminal::Cosine(_) => Some("cosine"),
            Terminal::Expr { .. } => Some("expr"),
            Terminal::Native(_) | Terminal::Shifted { .. } => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Terminal::Constant(c) => format!("{c:?}"),
            Terminal::ExpAffine { scale, slope } => {
                let s: Vec<String> = slope.iter().map(|v| format!("{v:?}")).collect();
                format!("{scale:?}*exp([{}].x)", s.join(", "))
            }
            Terminal::Polynomial(c) => format!("polynomial{c:?}"),
            Terminal::Cosine(c) => format!("cosine{c:?}"),
            Terminal::Expr { source, .. } => source.clone(),
            Terminal::Native(_) => "<native>".into(),
            Terminal::Shifted { base, shift } => format!("{} + {shift:?}", base.describe()),
        }
    }

    /// Sign of the samples: `Ok(1.0)` when all positive, `Ok(-1.0)` when all
    /// negative, branch error when mixed or zero.
    pub fn sign_of(samples: &[f64]) -> Result<f64> {
        let pos = samples.iter().all(|v| *v > 0.0);
        let neg = samples.iter().all(|v| *v < 0.0);
        match (pos, neg) {
            (true, _) => Ok(1.0),
            (_, true) => Ok(-1.0),
            _ => {
                let bad = samples.iter().position(|v| !(*v > 0.0)).unwrap_or(0);
                Err(Error::Branch(format!(
                    "terminal samples are not of one strict sign (sample {bad} = {})",
                    samples.get(bad).copied().unwrap_or(f64::NAN)
                )))
            }
        }
    }
}
