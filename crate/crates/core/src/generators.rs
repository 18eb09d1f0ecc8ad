//! Generators `H(t, y, z)` dominated by `g = α + βy + γ·z + δ|z|²/y`.
//!
//! Besides evaluation this module provides the convex conjugate
//! `H*(t, b, a) = sup_{y>0, z} (by + a·z − H)`, the two Lipschitz
//! approximation ladders (sup over a bounded dual set, and
//! inf-convolution with `n‖·‖`) and a sampled report on the integrability
//! conditions needed for existence.
//!
//! For the g-class with `δ > 0` the conjugate is explicit: completing the
//! square in `z` gives `sup_z (a−γ)·z − δ|z|²/y = y|a−γ|²/(4δ)`, so
//! `H* = −α` when `b ≤ β − |a−γ|²/(4δ)` and `+∞` otherwise.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{self, Compiled, ExprError};
use crate::func::TimeFn;
use crate::optim::{golden_max, golden_min};
use crate::paths::PathBundle;
use crate::stats::{hill_tail_index, Estimate};
use crate::terminal::Terminal;

/// Which sign of solution is sought.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Positive,
    Negative,
}

type NativeH = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

/// User generator replacing `g` in the dynamics (g stays the dominating bound).
#[derive(Clone)]
pub enum CustomGenerator {
    /// Expression in `t, y, z` (or `z1..zd`).
    Expr { source: String, code: Arc<Compiled> },
    Native { name: String, f: NativeH },
}

impl fmt::Debug for CustomGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CustomGenerator::Expr { source, .. } => write!(f, "Expr({source:?})"),
            CustomGenerator::Native { name, .. } => write!(f, "Native({name})"),
        }
    }
}

impl CustomGenerator {
    fn eval(&self, t: f64, y: f64, z: &[f64]) -> f64 {
        match self {
            CustomGenerator::Expr { code, .. } => {
                let mut slots = Vec::with_capacity(2 + z.len());
                slots.push(t);
                slots.push(y);
                slots.extend_from_slice(z);
                code.eval(&slots).unwrap_or(f64::NAN)
            }
            CustomGenerator::Native { f, .. } => f(t, y, z),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            CustomGenerator::Expr { source, .. } => source.clone(),
            CustomGenerator::Native { name, .. } => name.clone(),
        }
    }
}

/// A generator evaluated by the backward solvers.
pub trait Driver: Send + Sync {
    /// Dimension of `z`.
    fn dim(&self) -> usize;

    /// `H(t, ·, ·)` with time-dependent coefficients frozen at `t`.
    fn at_time(&self, t: f64) -> Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync + '_>;

    fn eval(&self, t: f64, y: f64, z: &[f64]) -> f64 {
        (self.at_time(t))(y, z)
    }
}

/// Coefficients of the g-class at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Coeffs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub delta: f64,
    pub alpha: TimeFn,
    pub beta: TimeFn,
    pub gamma: Vec<TimeFn>,
    pub custom: Option<CustomGenerator>,
    pub branch: Branch,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

impl GeneratorSpec {
    /// `H = δ|z|²/y` in dimension 1.
    pub fn canonical(delta: f64) -> Self {
        Self::gclass(delta, 0.0.into(), 0.0.into(), vec![0.0.into()])
    }

    pub fn gclass(delta: f64, alpha: TimeFn, beta: TimeFn, gamma: Vec<TimeFn>) -> Self {
        GeneratorSpec {
            delta,
            alpha,
            beta,
            gamma,
            custom: None,
            branch: Branch::Positive,
        }
    }

    /// Attaches a custom generator given as an expression in `t, y, z`.
    pub fn with_custom_expr(mut self, source: &str) -> Result<Self> {
        let e = expr::parse(source).map_err(ExprError::from)?;
        let mut slots = vec!["t".to_string(), "y".to_string()];
        if self.dim() == 1 {
            slots.push("z".into());
        } else {
            slots.extend((1..=self.dim()).map(|i| format!("z{i}")));
        }
        let refs: Vec<&str> = slots.iter().map(String::as_str).collect();
        let code = e.compile(&refs)?;
        self.custom = Some(CustomGenerator::Expr {
            source: source.to_string(),
            code: Arc::new(code),
        });
        Ok(self)
    }

    pub fn with_custom_native(
        mut self,
        name: &str,
        f: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.custom = Some(CustomGenerator::Native {
            name: name.to_string(),
            f: Arc::new(f),
        });
        self
    }

    pub fn with_branch(mut self, branch: Branch) -> Self {
        self.branch = branch;
        self
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn m(&self) -> f64 {
        2.0 * self.delta + 1.0
    }

    pub fn coeffs(&self, t: f64) -> Coeffs {
        Coeffs {
            alpha: self.alpha.eval(t),
            beta: self.beta.eval(t),
            gamma: self.gamma.iter().map(|g| g.eval(t)).collect(),
        }
    }

    pub fn gamma_is_zero(&self) -> bool {
        self.gamma.iter().all(TimeFn::is_zero)
    }

    /// `δ|z|²/y` with no affine part and no custom generator.
    pub fn is_canonical(&self) -> bool {
        self.custom.is_none() && self.alpha.is_zero() && self.beta.is_zero() && self.gamma_is_zero()
    }

    /// g-class without a custom generator.
    pub fn is_gclass(&self) -> bool {
        self.custom.is_none()
    }

    /// Checks the structural invariants on the nodes `times`.
    pub fn validate(&self, times: &[f64]) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be a nonnegative number, got {}", self.delta)));
        }
        if self.gamma.is_empty() {
            return Err(Error::invalid("gamma must have at least one component"));
        }
        for &t in times {
            let a = self.alpha.try_eval(t)?;
            if a < 0.0 {
                return Err(Error::invalid(format!(
                    "alpha must be nonnegative on the time grid (domination requires alpha >= 0), got alpha({t}) = {a}"
                )));
            }
            let b = self.beta.try_eval(t)?;
            if b < 0.0 {
                return Err(Error::invalid(format!(
                    "beta must be nonnegative on the time grid, got beta({t}) = {b}"
                )));
            }
            for g in &self.gamma {
                g.try_eval(t)?;
            }
        }
        if self.branch == Branch::Negative {
            let m = self.m();
            if (m - m.round()).abs() > 1e-12 || (m.round() as i64) % 2 == 0 {
                return Err(Error::invalid(format!(
                    "the negative branch needs 2*delta + 1 to be an odd integer, got {m}"
                )));
            }
        }
        if self.custom.is_some() {
            self.check_domination(times)?;
        }
        Ok(())
    }

    /// Sampled `0 ≤ H ≤ g` on the lattice `y ∈ [0.1, 10]`, `|z| ≤ 10`
    /// (positive-branch coordinates).
    pub fn check_domination(&self, times: &[f64]) -> Result<()> {
        for &t in times {
            for (y, z) in lattice(self.dim()) {
                let h = self.eval_positive(t, y, &z);
                let g = self.g_positive(t, y, &z);
                let tol = 1e-9 * (1.0 + g.abs());
                if !(h >= -tol && h <= g + tol) {
                    return Err(Error::invalid(format!(
                        "custom generator violates 0 <= H <= g at t = {t}, y = {y}, z = {z:?}: H = {h}, g = {g}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn g_positive(&self, t: f64, y: f64, z: &[f64]) -> f64 {
        let c = self.coeffs(t);
        c.alpha + c.beta * y + dot(&c.gamma, z) + self.delta * norm2(z) / y
    }

    /// Generator in positive-branch coordinates: `H` itself on the positive
    /// branch, the mirror `−H(t, −y, −z)` on the negative branch.
    fn eval_positive(&self, t: f64, y: f64, z: &[f64]) -> f64 {
        match (&self.custom, self.branch) {
            (None, _) => self.g_positive(t, y, z),
            (Some(c), Branch::Positive) => c.eval(t, y, z),
            (Some(c), Branch::Negative) => {
                let nz: Vec<f64> = z.iter().map(|v| -v).collect();
                -c.eval(t, -y, &nz)
            }
        }
    }

    fn check_sign(&self, y: f64) -> Result<()> {
        match self.branch {
            _ if y == 0.0 => Err(Error::Singularity),
            Branch::Positive if y < 0.0 => Err(Error::Branch(format!("y = {y} on the positive branch"))),
            Branch::Negative if y > 0.0 => Err(Error::Branch(format!("y = {y} on the negative branch"))),
            _ => Ok(()),
        }
    }

    /// `g(t, y, z)`; on the negative branch the mirror `−g(t, −y, −z)`.
    pub fn eval_g(&self, t: f64, y: f64, z: &[f64]) -> Result<f64> {
        self.check_sign(y)?;
        Ok(match self.branch {
            Branch::Positive => self.g_positive(t, y, z),
            Branch::Negative => {
                let nz: Vec<f64> = z.iter().map(|v| -v).collect();
                -self.g_positive(t, -y, &nz)
            }
        })
    }

    /// The generator driving the dynamics (custom when present, else g).
    pub fn eval_h(&self, t: f64, y: f64, z: &[f64]) -> Result<f64> {
        self.check_sign(y)?;
        match &self.custom {
            Some(c) => Ok(c.eval(t, y, z)),
            None => self.eval_g(t, y, z),
        }
    }

    /// Positive-branch driver: `H` or its mirror, depending on the branch.
    pub fn positive_driver(&self) -> PositiveDriver<'_> {
        PositiveDriver { spec: self }
    }

    /// `H*(t, b, a)`.
    pub fn conjugate(&self, t: f64, b: f64, a: &[f64]) -> ConjugateValue {
        let c = self.coeffs(t);
        if self.custom.is_none() {
            let da: Vec<f64> = a.iter().zip(&c.gamma).map(|(x, g)| x - g).collect();
            let gap = norm2(&da);
            let margin = if self.delta > 0.0 {
                c.beta - b - gap / (4.0 * self.delta)
            } else if gap.sqrt() <= 1e-12 {
                c.beta - b
            } else {
                f64::NEG_INFINITY
            };
            let scale = 1.0 + b.abs() + c.beta.abs() + if self.delta > 0.0 { gap / (4.0 * self.delta) } else { 0.0 };
            let feasible = margin >= -1e-12 * scale;
            return ConjugateValue {
                value: if feasible { -c.alpha } else { f64::INFINITY },
                feasible,
                margin: Some(margin),
            };
        }
        let value = self.lattice_conjugate(t, b, a, &c.gamma);
        ConjugateValue {
            value,
            feasible: value.is_finite(),
            margin: None,
        }
    }

    /// Supremum of `by + a·z − H` over the lattice `y ∈ [1e-4, R]`
    /// (geometric, 161 points), `z = s·u` with `u` the direction of `a − γ`
    /// and `s ∈ [−R, R]` (401 points, cubic spacing). Declared `+∞` when the
    /// supremum over `R = 1e3` exceeds the one over `R = 1e2` by more than
    /// `1e-6·(1 + |sup|)`.
    fn lattice_conjugate(&self, t: f64, b: f64, a: &[f64], gamma: &[f64]) -> f64 {
        let d = a.len();
        let da: Vec<f64> = a.iter().zip(gamma).map(|(x, g)| x - g).collect();
        let nd = norm2(&da).sqrt();
        let u: Vec<f64> = if nd > 0.0 {
            da.iter().map(|v| v / nd).collect()
        } else {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            e
        };
        let sup = |r: f64| {
            let mut best = f64::NEG_INFINITY;
            let mut z = vec![0.0; d];
            for i in 0..161 {
                let y = 1e-4 * (r / 1e-4).powf(i as f64 / 160.0);
                for j in 0..=400 {
                    let q = (j as f64 - 200.0) / 200.0;
                    let s = r * q * q * q;
                    for k in 0..d {
                        z[k] = s * u[k];
                    }
                    let v = b * y + dot(a, &z) - self.eval_positive(t, y, &z);
                    if v > best {
                        best = v;
                    }
                }
            }
            best
        };
        let s1 = sup(1e2);
        let s2 = sup(1e3);
        if s2 > s1 + 1e-6 * (1.0 + s1.abs()) {
            f64::INFINITY
        } else {
            -(-s2).max(f64::MIN)
        }
    }

    /// Sup-truncation `H^n = sup_{|a|≤n, |b|≤n} (by + a·z − H*(b, a))`
    /// (g-class only).
    pub fn truncate_sup(&self, n: f64) -> Result<SupTruncation> {
        if self.custom.is_some() {
            return Err(Error::Unsupported("sup-truncation needs the closed-form conjugate of the g-class".into()));
        }
        if !(n >= 1.0) {
            return Err(Error::invalid(format!("truncation level must be >= 1, got {n}")));
        }
        if self.delta <= 0.0 {
            return Err(Error::Unsupported("sup-truncation needs delta > 0".into()));
        }
        Ok(SupTruncation { spec: self.clone(), n })
    }

    /// Inf-convolution `H^n(y, z) = inf_{y'>0, z'} H(y', z') + n‖(y, z) − (y', z')‖`.
    pub fn truncate_infconv(&self, n: f64) -> Result<InfConvolution> {
        if !(n > 0.0) {
            return Err(Error::invalid(format!("truncation level must be positive, got {n}")));
        }
        if self.custom.is_none() && !self.gamma_is_zero() {
            return Err(Error::Unsupported(
                "inf-convolution needs a generator that is nonnegative everywhere (gamma = 0)".into(),
            ));
        }
        Ok(InfConvolution { spec: self.clone(), n })
    }
}

/// Lattice used for domination and ladder checks: `y` geometric in
/// `[0.1, 10]` (25 points) and `z` along the first axis in `[−10, 10]`
/// (41 points); in `d > 1` the `z` points are also rotated onto the diagonal.
pub fn lattice(dim: usize) -> Vec<(f64, Vec<f64>)> {
    let mut out = Vec::new();
    for i in 0..25 {
        let y = 0.1 * 100f64.powf(i as f64 / 24.0);
        for j in 0..41 {
            let s = -10.0 + 0.5 * j as f64;
            let mut z = vec![0.0; dim];
            z[0] = s;
            out.push((y, z));
            if dim > 1 {
                let c = s / (dim as f64).sqrt();
                out.push((y, vec![c; dim]));
            }
        }
    }
    out
}

/// View of a spec as a positive-branch driver.
pub struct PositiveDriver<'a> {
    spec: &'a GeneratorSpec,
}

impl Driver for PositiveDriver<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn at_time(&self, t: f64) -> Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync + '_> {
        positive_at_time(self.spec, t)
    }
}

fn positive_at_time(spec: &GeneratorSpec, t: f64) -> Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync + '_> {
    {
        if spec.custom.is_none() {
            let c = spec.coeffs(t);
            let delta = spec.delta;
            if c.gamma.len() == 1 {
                let g = c.gamma[0];
                return Box::new(move |y, z| c.alpha + c.beta * y + g * z[0] + delta * z[0] * z[0] / y);
            }
            return Box::new(move |y, z| c.alpha + c.beta * y + dot(&c.gamma, z) + delta * norm2(z) / y);
        }
        Box::new(move |y, z| spec.eval_positive(t, y, z))
    }
}

impl Driver for GeneratorSpec {
    fn dim(&self) -> usize {
        GeneratorSpec::dim(self)
    }

    fn at_time(&self, t: f64) -> Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync + '_> {
        positive_at_time(self, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateValue {
    /// `H*(t, b, a)`, `+∞` when infeasible.
    pub value: f64,
    pub feasible: bool,
    /// `β − b − |a−γ|²/(4δ)` for the g-class.
    pub margin: Option<f64>,
}

/// Sup-truncated g-class generator.
#[derive(Debug, Clone)]
pub struct SupTruncation {
    spec: GeneratorSpec,
    n: f64,
}

impl SupTruncation {
    pub fn level(&self) -> f64 {
        self.n
    }

    fn eval_coeffs(&self, c: &Coeffs, y: f64, z: &[f64]) -> f64 {
        let delta = self.spec.delta;
        let n = self.n;
        let radius = (4.0 * delta * (c.beta + n)).sqrt();
        if c.gamma.len() == 1 {
            return c.alpha + sup_1d(delta, c.beta, c.gamma[0], n, radius, y, z[0]);
        }
        c.alpha + sup_nd(delta, c.beta, &c.gamma, n, radius, y, z)
    }
}

/// Best `b` for a given `a`: `y·b` maximized over `b ∈ [−n, min(n, β − |a−γ|²/(4δ))]`.
fn best_b(delta: f64, beta: f64, n: f64, gap2: f64, y: f64) -> f64 {
    if y > 0.0 {
        y * n.min(beta - gap2 / (4.0 * delta))
    } else {
        -n * y
    }
}

fn sup_1d(delta: f64, beta: f64, gamma: f64, n: f64, radius: f64, y: f64, z: f64) -> f64 {
    let lo = (-n).max(gamma - radius);
    let hi = n.min(gamma + radius);
    if lo > hi {
        return f64::NEG_INFINITY;
    }
    let f = |a: f64| a * z + best_b(delta, beta, n, (a - gamma) * (a - gamma), y);
    let mut cands = vec![lo, hi];
    if y > 0.0 {
        cands.push((gamma + 2.0 * delta * z / y).clamp(lo, hi));
        let kink = (4.0 * delta * (beta - n).max(0.0)).sqrt();
        cands.push((gamma - kink).clamp(lo, hi));
        cands.push((gamma + kink).clamp(lo, hi));
    }
    cands.into_iter().map(f).fold(f64::NEG_INFINITY, f64::max)
}

/// `d > 1`: the maximizer lies in `span{z, γ}`; nested golden-section search
/// over the intersection of the disks `|a| ≤ n` and `|a − γ| ≤ radius` in
/// that plane (the objective is concave).
fn sup_nd(delta: f64, beta: f64, gamma: &[f64], n: f64, radius: f64, y: f64, z: &[f64]) -> f64 {
    let nz = norm2(z).sqrt();
    let ng = norm2(gamma).sqrt();
    let e1: Vec<f64> = if nz > 0.0 {
        z.iter().map(|v| v / nz).collect()
    } else if ng > 0.0 {
        gamma.iter().map(|v| v / ng).collect()
    } else {
        let mut e = vec![0.0; z.len()];
        e[0] = 1.0;
        e
    };
    let g1 = dot(gamma, &e1);
    let perp: Vec<f64> = gamma.iter().zip(&e1).map(|(g, e)| g - g1 * e).collect();
    let g2 = norm2(&perp).sqrt();
    // coordinates: a = a1 e1 + a2 e2, z = (nz, 0), gamma = (g1, g2)
    let a1_lo = (-n).max(g1 - radius);
    let a1_hi = n.min(g1 + radius);
    if a1_lo > a1_hi {
        return f64::NEG_INFINITY;
    }
    let chord = |a1: f64| -> Option<(f64, f64)> {
        let r1 = n * n - a1 * a1;
        let r2 = radius * radius - (a1 - g1) * (a1 - g1);
        if r1 < 0.0 || r2 < 0.0 {
            return None;
        }
        let (s1, s2) = (r1.sqrt(), r2.sqrt());
        let lo = (-s1).max(g2 - s2);
        let hi = s1.min(g2 + s2);
        (lo <= hi).then_some((lo, hi))
    };
    let inner = |a1: f64| -> f64 {
        match chord(a1) {
            None => f64::NEG_INFINITY,
            Some((lo, hi)) => {
                let f = |a2: f64| {
                    let gap2 = (a1 - g1).powi(2) + (a2 - g2).powi(2);
                    a1 * nz + best_b(delta, beta, n, gap2, y)
                };
                golden_max(f, lo, hi, 1e-13).1
            }
        }
    };
    golden_max(inner, a1_lo, a1_hi, 1e-13).1
}

impl Driver for SupTruncation {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn at_time(&self, t: f64) -> Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync + '_> {
        let c = self.spec.coeffs(t);
        Box::new(move |y, z| self.eval_coeffs(&c, y, z))
    }
}

/// Inf-convolution approximation of a nonnegative generator.
#[derive(Debug, Clone)]
pub struct InfConvolution {
    spec: GeneratorSpec,
    n: f64,
}

impl InfConvolution {
    pub fn level(&self) -> f64 {
        self.n
    }

    /// Closed form for `δ|z|²/y`: with `s = |z|` and `k_n² = −2 + √(4 + (n/δ)²)`
    /// the value is `H` when `s ≤ k_n y`; otherwise the nearest point on the
    /// ray `s' = k_n y'` gives `δk_n²y' + n r`.
    fn canonical(&self, y: f64, s: f64) -> f64 {
        let delta = self.spec.delta;
        let n = self.n;
        if delta == 0.0 {
            return 0.0;
        }
        let k2 = -2.0 + (4.0 + (n / delta).powi(2)).sqrt();
        let k = k2.sqrt();
        if y > 0.0 && s <= k * y {
            return delta * s * s / y;
        }
        let c = (k2 + 4.0).sqrt();
        let r = (s - k * y) * c / (k2 + 2.0);
        let yp = y + r * k / c;
        if yp > 0.0 {
            delta * k2 * yp + n * r
        } else {
            n * (y * y + s * s).sqrt()
        }
    }

    /// Nested golden-section minimization with `z'` parallel to `z`.
    fn numeric(&self, t: f64, y: f64, z: &[f64]) -> f64 {
        let n = self.n;
        let s = norm2(z).sqrt();
        let u: Vec<f64> = if s > 0.0 {
            z.iter().map(|v| v / s).collect()
        } else {
            let mut e = vec![0.0; z.len()];
            e[0] = 1.0;
            e
        };
        let h = |yp: f64, sp: f64| {
            let zp: Vec<f64> = u.iter().map(|v| v * sp).collect();
            self.spec.eval_positive(t, yp, &zp)
        };
        let inner = |yp: f64| {
            golden_min(|sp| h(yp, sp) + n * ((y - yp).powi(2) + (s - sp).powi(2)).sqrt(), 0.0, s, 1e-12).1
        };
        let scale = if y > 0.0 { y + h(y, s) / n + 1.0 } else { s + y.abs() + 1.0 };
        let lo = 1e-12 * scale;
        let (_, v) = golden_min(inner, lo, y.max(0.0) + scale, 1e-12);
        v
    }
}

impl Driver for InfConvolution {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn at_time(&self, t: f64) -> Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync + '_> {
        if self.spec.is_canonical() {
            return Box::new(move |y, z| self.canonical(y, norm2(z).sqrt()));
        }
        Box::new(move |y, z| self.numeric(t, y, z))
    }
}

/// One sampled integrability condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    /// `"analytic"` or `"monte-carlo"`.
    pub method: &'static str,
    pub tail_index: Option<f64>,
    pub pass: bool,
}

/// Advisory report on the integrability conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    /// `(t_i, λ_{t_i})` with `λ = (2δ+1)(α+β) + |γ|²/(2r)`.
    pub lambda: Vec<(f64, f64)>,
    pub conditions: Vec<ConditionCheck>,
    /// Set when `δ = 1/2`, where the a-priori estimate behind uniqueness
    /// is not available.
    pub delta_half_caveat: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }
}

/// Minimum tail index for a Monte Carlo moment to count as finite.
pub const TAIL_INDEX_MIN: f64 = 1.0;

/// `E[ξ^k]` in closed form for catalog terminals of a Gaussian state
/// `N(0, var)`; `None` otherwise.
fn gaussian_power_moment(terminal: &Terminal, k: f64, var: f64) -> Option<f64> {
    match terminal {
        Terminal::Constant(c) if *c > 0.0 => Some(c.powf(k)),
        Terminal::ExpAffine { scale, slope } if *scale > 0.0 => {
            Some(scale.powf(k) * (0.5 * k * k * norm2(slope) * var).exp())
        }
        Terminal::Polynomial(_) => {
            let rule = crate::quadrature::QuadratureRule::gauss_hermite(80).ok()?;
            crate::quadrature::gauss_expect(|x| terminal.eval(&[x]).abs().powf(k), var, &rule).ok()
        }
        _ => None,
    }
}

/// Samples the integrability conditions for `ξ = terminal(W_T)`.
pub fn check_assumptions(
    spec: &GeneratorSpec,
    terminal: &Terminal,
    p: f64,
    r: f64,
    paths: &PathBundle,
) -> Result<AssumptionReport> {
    if !(p > 1.0) {
        return Err(Error::invalid(format!("p must exceed 1, got {p}")));
    }
    let r_max = 0.5 * 1f64.min(p - 1.0);
    if !(r > 0.0 && r < r_max) {
        return Err(Error::invalid(format!("r must lie in (0, {r_max}), got {r}")));
    }
    if paths.drift_shift().is_some() {
        return Err(Error::invalid("assumption checks need paths under the original measure"));
    }
    let q = p / (p - 1.0);
    let grid = *paths.grid();
    let m = spec.m();
    let lam_fn = {
        let s = spec.clone();
        move |t: f64| {
            let c = s.coeffs(t);
            m * (c.alpha + c.beta) + norm2(&c.gamma) / (2.0 * r)
        }
    };
    let lambda: Vec<(f64, f64)> = grid.nodes().into_iter().map(|t| (t, lam_fn(t))).collect();
    let (t0, tn) = (grid.t0(), grid.horizon());
    let lam = TimeFn::native(lam_fn.clone());
    let ab = {
        let s = spec.clone();
        TimeFn::native(move |t| {
            let c = s.coeffs(t);
            c.alpha + c.beta
        })
    };
    let int_lam = lam.integral(t0, tn);
    let int_ab = ab.integral(t0, tn);
    let var = tn - t0;
    let w = paths.brownian(&vec![0.0; paths.dim()]);
    let n_last = grid.n_steps();
    let xi: Vec<f64> = (0..paths.n_paths()).map(|i| terminal.eval(w.get(n_last, i))).collect();
    let sign = Terminal::sign_of(&xi);

    let moment_check = |name: &str, k: f64, factor: f64| -> ConditionCheck {
        if sign.is_err() {
            return ConditionCheck {
                name: name.into(),
                estimate: f64::NAN,
                se: f64::NAN,
                method: "monte-carlo",
                tail_index: None,
                pass: false,
            };
        }
        if let Some(v) = gaussian_power_moment(terminal, k, var) {
            let est = v * factor;
            return ConditionCheck {
                name: name.into(),
                estimate: est,
                se: 0.0,
                method: "analytic",
                tail_index: None,
                pass: est.is_finite(),
            };
        }
        let samples: Vec<f64> = xi.iter().map(|x| x.abs().powf(k) * factor).collect();
        let e = Estimate::from_samples(&samples);
        let kk = (samples.len() / 100).max(20);
        let tail = hill_tail_index(&samples, kk);
        ConditionCheck {
            name: name.into(),
            estimate: e.value,
            se: e.se,
            method: "monte-carlo",
            pass: e.value.is_finite() && tail.map_or(true, |a| a > TAIL_INDEX_MIN),
            tail_index: tail,
        }
    };
    let deterministic = |name: &str, v: f64| ConditionCheck {
        name: name.into(),
        estimate: v,
        se: 0.0,
        method: "analytic",
        tail_index: None,
        pass: v.is_finite(),
    };
    // ∫_0^T e^{c ∫_0^s ρ} α_s ds by Simpson on a fine grid
    let weighted_alpha = |rate: &TimeFn, c: f64| {
        let s = spec.clone();
        let rate = rate.clone();
        TimeFn::native(move |u| (c * rate.integral(t0, u)).exp() * s.alpha.eval(u)).integral(t0, tn)
    };
    let int_g2 = {
        let s = spec.clone();
        TimeFn::native(move |t| norm2(&s.coeffs(t).gamma)).integral(t0, tn)
    };
    let conditions = vec![
        moment_check("E[xi^((2delta+1)p) exp(p int lambda)]", m * p, (p * int_lam).exp()),
        deterministic(
            "E[(int exp(int lambda / 2) alpha)^p]",
            weighted_alpha(&lam, 0.5).powf(p),
        ),
        deterministic("E[exp(q int gamma dW)]", (0.5 * q * q * int_g2).exp()),
        moment_check(
            "E[(exp(int (alpha+beta)) xi)^((2delta+1)p)]",
            m * p,
            (m * p * int_ab).exp(),
        ),
        deterministic("E[(int exp(int (alpha+beta)) alpha)^p]", weighted_alpha(&ab, 1.0).powf(p)),
    ];
    Ok(AssumptionReport {
        p,
        q,
        r,
        lambda,
        conditions,
        delta_half_caveat: (spec.delta - 0.5).abs() < 1e-12,
    })
}
