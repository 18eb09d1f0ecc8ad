//! Semilinear parabolic problems
//! `∂_t v + μ·∇v + ½ tr(σσ′∇²v) + H(t, v, σ′∇v) = 0`, `v(T, ·) = h`,
//! optionally with `∂v/∂n = 0` on the boundary of a convex domain.
//!
//! Evaluators: the probabilistic representation `v(t, x) = Y_t^{t,x}`
//! (least squares or transform Monte Carlo), the transform formula
//! `v = u⁻¹(E[u(h(X_T^{t,x}))])` for the canonical generator, a cosine
//! series for the Neumann problem on `[0, 1]`, and explicit finite
//! differences in one dimension.

use std::fmt::Write as _;

use crate::bsde::{solve_lsmc, Forward, LsmcOptions};
use crate::error::{Error, Result};
use crate::func::FieldFn;
use crate::generators::{Driver, GeneratorSpec};
use crate::grid::TimeGrid;
use crate::paths::{make_paths, PathBundle};
use crate::quadrature::{gauss_expect, gauss_expect_nd, QuadratureRule};
use crate::sde::{euler, euler_reflected, simulate_from, ConvexDomain, DiffusionSpec};
use crate::stats::Estimate;
use crate::terminal::Terminal;
use crate::transforms::PowerTransform;

#[derive(Debug, Clone)]
pub struct PDEProblem {
    pub diffusion: DiffusionSpec,
    pub generator: GeneratorSpec,
    pub terminal: Terminal,
    pub horizon: f64,
    /// Homogeneous Neumann condition on the diffusion's domain.
    pub neumann: bool,
}

impl PDEProblem {
    pub fn new(diffusion: DiffusionSpec, generator: GeneratorSpec, terminal: Terminal, horizon: f64) -> Result<Self> {
        let p = PDEProblem {
            diffusion,
            generator,
            terminal,
            horizon,
            neumann: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// Same problem with `∂v/∂n = 0` on the diffusion's domain.
    pub fn with_neumann(mut self) -> Result<Self> {
        if self.diffusion.domain.is_none() {
            return Err(Error::invalid("a Neumann boundary needs a domain on the diffusion"));
        }
        self.neumann = true;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.diffusion.dim
    }

    /// Points where `h` is checked for positivity: a lattice in the domain
    /// or in `[−5, 5]^d` (axes only for `d > 1`).
    pub fn sample_lattice(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        // Offsets along each axis around a center.
        let (lo, hi, center) = match &self.diffusion.domain {
            Some(ConvexDomain::Interval { lo, hi }) => (lo - 0.5 * (lo + hi), hi - 0.5 * (lo + hi), vec![0.5 * (lo + hi)]),
            Some(ConvexDomain::Ball { center, radius }) => (-radius, *radius, center.clone()),
            None => (-5.0, 5.0, vec![0.0; d]),
        };
        let mut out = Vec::new();
        for j in 0..=100 {
            let s = lo + (hi - lo) * j as f64 / 100.0;
            for k in 0..d {
                let mut x = center.clone();
                x[k] += s;
                out.push(x);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.generator.dim() != self.dim() {
            return Err(Error::invalid("generator z-dimension differs from the diffusion dimension"));
        }
        if self.neumann && self.diffusion.domain.is_none() {
            return Err(Error::invalid("a Neumann boundary needs a domain on the diffusion"));
        }
        let times: Vec<f64> = (0..=4).map(|k| self.horizon * k as f64 / 4.0).collect();
        self.generator.validate(&times)?;
        self.diffusion.validate(&times)?;
        let samples: Vec<f64> = self
            .sample_lattice()
            .iter()
            .map(|x| self.terminal.try_eval(x))
            .collect::<Result<_>>()?;
        Terminal::sign_of(&samples)?;
        Ok(())
    }

    fn is_standard_brownian(&self) -> bool {
        if self.diffusion.domain.is_some() {
            return false;
        }
        match self.diffusion.constant_coefficients() {
            Some((mu, sig)) => {
                let d = self.dim();
                mu.iter().all(|m| *m == 0.0)
                    && (0..d).all(|i| (0..d).all(|j| sig[i * d + j] == if i == j { 1.0 } else { 0.0 }))
            }
            None => false,
        }
    }
}

/// One evaluated point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub dim: usize,
    pub points: Vec<FieldPoint>,
    pub method: &'static str,
    /// Fraction of FD node updates where the positivity floor was active.
    pub clamp_rate: Option<f64>,
}

impl SolutionField {
    /// The point closest to `(t, x)` (by `|Δt| + |Δx|`).
    pub fn nearest(&self, t: f64, x: &[f64]) -> Option<&FieldPoint> {
        let dist = |p: &FieldPoint| (p.t - t).abs() + p.x.iter().zip(x).map(|(a, b)| (a - b).abs()).sum::<f64>();
        self.points.iter().min_by(|a, b| dist(a).total_cmp(&dist(b)))
    }

    /// Value at an exact point of the field.
    pub fn value(&self, t: f64, x: &[f64]) -> Option<f64> {
        self.nearest(t, x)
            .filter(|p| (p.t - t).abs() < 1e-9 && p.x.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-9))
            .map(|p| p.v)
    }

    pub fn min_value(&self) -> f64 {
        self.points.iter().map(|p| p.v).fold(f64::INFINITY, f64::min)
    }

    /// CSV with columns `t, x (or x1..xd), v, se, method`; 17 significant
    /// digits, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,");
        if self.dim == 1 {
            s.push_str("x,");
        } else {
            for k in 1..=self.dim {
                let _ = write!(s, "x{k},");
            }
        }
        s.push_str("v,se,method\n");
        for p in &self.points {
            let _ = write!(s, "{:.16e},", p.t);
            for x in &p.x {
                let _ = write!(s, "{x:.16e},");
            }
            let _ = writeln!(s, "{:.16e},{:.16e},{}", p.v, p.se, self.method);
        }
        s
    }
}

/// Product grid of evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl EvalGrid {
    pub fn new(times: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || points.is_empty() {
            return Err(Error::invalid("evaluation grid needs at least one time and one point"));
        }
        Ok(EvalGrid { times, points })
    }

    /// One-dimensional grid `x_j = a + j (b − a)/n`.
    pub fn line(times: Vec<f64>, a: f64, b: f64, n: usize) -> Result<Self> {
        if n == 0 || !(b > a) {
            return Err(Error::invalid("line grid needs a < b and n >= 1"));
        }
        Self::new(times, (0..=n).map(|j| vec![a + (b - a) * j as f64 / n as f64]).collect())
    }

    fn check(&self, prob: &PDEProblem) -> Result<()> {
        for &t in &self.times {
            if !(t >= 0.0 && t <= prob.horizon) {
                return Err(Error::invalid(format!("evaluation time {t} outside [0, {}]", prob.horizon)));
            }
        }
        for x in &self.points {
            if x.len() != prob.dim() {
                return Err(Error::invalid("evaluation point has the wrong dimension"));
            }
            if let Some(d) = &prob.diffusion.domain {
                if !d.contains(x) {
                    return Err(Error::invalid(format!("evaluation point {x:?} lies outside the domain")));
                }
            }
        }
        Ok(())
    }
}

/// Backward solver used at each point by [`eval_probabilistic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbMethod {
    /// Transform Monte Carlo for the canonical generator, least squares
    /// otherwise.
    Auto,
    Lsmc,
    TransformMc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOptions {
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub method: ProbMethod,
    pub lsmc: LsmcOptions,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            n_steps: 50,
            n_paths: 20_000,
            seed: 1,
            method: ProbMethod::Auto,
            lsmc: LsmcOptions::default(),
        }
    }
}

fn at_point(t: f64, x: &[f64], e: Error) -> Error {
    match e {
        Error::AtPoint { .. } => e,
        other => Error::AtPoint {
            t,
            x: x.to_vec(),
            source: Box::new(other),
        },
    }
}

fn canonical_transform(prob: &PDEProblem) -> Option<PowerTransform> {
    if prob.generator.is_canonical() && prob.generator.branch == crate::generators::Branch::Positive {
        PowerTransform::new(prob.generator.delta).ok()
    } else {
        None
    }
}

/// `u⁻¹(mean u(h(X_T)))` with a delta-method standard error.
fn transform_mc(pt: PowerTransform, terminal: &Terminal, xt: &[f64], dim: usize) -> Result<Estimate> {
    let u: Vec<f64> = xt
        .chunks(dim)
        .map(|x| pt.forward(terminal.try_eval(x)?))
        .collect::<Result<_>>()?;
    let e = Estimate::from_samples(&u);
    let v = pt.inverse(e.value)?;
    Ok(Estimate {
        value: v,
        se: pt.inverse_derivative(e.value).abs() * e.se,
    })
}

/// `v(t, x) = Y_t^{t,x}` at every point of the grid. All points share the
/// seed, so neighbouring points use common random numbers.
pub fn eval_probabilistic(prob: &PDEProblem, grid: &EvalGrid, mc: &McOptions) -> Result<SolutionField> {
    grid.check(prob)?;
    let d = prob.dim();
    let transform = canonical_transform(prob);
    let method = match mc.method {
        ProbMethod::Auto if transform.is_some() => ProbMethod::TransformMc,
        ProbMethod::Auto => ProbMethod::Lsmc,
        ProbMethod::TransformMc if transform.is_none() => {
            return Err(Error::Unsupported("transform Monte Carlo needs the canonical generator".into()))
        }
        m => m,
    };
    let mut points = Vec::with_capacity(grid.times.len() * grid.points.len());
    for &t in &grid.times {
        let tg = if t < prob.horizon {
            Some(TimeGrid::new(t, prob.horizon, mc.n_steps)?)
        } else {
            None
        };
        let paths = match tg {
            Some(g) => Some(make_paths(g, d, mc.n_paths, mc.seed)?),
            None => None,
        };
        for x in &grid.points {
            let Some(paths) = &paths else {
                points.push(FieldPoint {
                    t,
                    x: x.clone(),
                    v: prob.terminal.try_eval(x).map_err(|e| at_point(t, x, e))?,
                    se: 0.0,
                });
                continue;
            };
            let est = eval_point(prob, method, transform, t, x, paths, mc).map_err(|e| at_point(t, x, e))?;
            points.push(FieldPoint {
                t,
                x: x.clone(),
                v: est.value,
                se: est.se,
            });
        }
    }
    Ok(SolutionField {
        dim: d,
        points,
        method: "probabilistic",
        clamp_rate: None,
    })
}

fn eval_point(
    prob: &PDEProblem,
    method: ProbMethod,
    transform: Option<PowerTransform>,
    t: f64,
    x: &[f64],
    paths: &PathBundle,
    mc: &McOptions,
) -> Result<Estimate> {
    let d = prob.dim();
    let n = paths.grid().n_steps();
    let states = if prob.is_standard_brownian() {
        None
    } else if prob.diffusion.domain.is_some() {
        Some(euler_reflected(&prob.diffusion, t, x, paths)?.states)
    } else {
        Some(euler(&prob.diffusion, t, x, paths)?)
    };
    match method {
        ProbMethod::TransformMc => {
            let pt = transform.expect("checked by caller");
            let xt = match &states {
                Some(s) => s.node(n).to_vec(),
                None => paths.brownian(x).node(n).to_vec(),
            };
            transform_mc(pt, &prob.terminal, &xt, d)
        }
        _ => {
            let fwd = match &states {
                Some(s) => Forward::States(s),
                None => Forward::Brownian(x),
            };
            Ok(solve_lsmc(&prob.generator, &prob.terminal, fwd, paths, &mc.lsmc)?.y0_estimate())
        }
    }
}

/// `v(t, x) = u⁻¹(E[u(h(X_T^{t,x}))])` for the canonical generator, by
/// quadrature when `X` is Gaussian with isotropic covariance and by Monte
/// Carlo over Euler paths otherwise.
pub fn eval_transform_exact(
    prob: &PDEProblem,
    grid: &EvalGrid,
    rule: &QuadratureRule,
    mc: &McOptions,
) -> Result<SolutionField> {
    grid.check(prob)?;
    let Some(pt) = canonical_transform(prob) else {
        return Err(Error::Unsupported("the transform formula needs the canonical generator d|z|^2/y".into()));
    };
    let d = prob.dim();
    let gaussian = if prob.diffusion.domain.is_none() {
        prob.diffusion.constant_coefficients().and_then(|(mu, sig)| {
            // Covariance σσ′ must be a multiple of the identity.
            let mut cov = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] = (0..d).map(|k| sig[i * d + k] * sig[j * d + k]).sum();
                }
            }
            let s2 = cov[0];
            let iso = (0..d).all(|i| (0..d).all(|j| (cov[i * d + j] - if i == j { s2 } else { 0.0 }).abs() < 1e-14));
            iso.then_some((mu, s2))
        })
    } else {
        None
    };
    let term = &prob.terminal;
    let ubar = |x: &[f64]| pt.forward(term.eval(x)).unwrap_or(f64::NAN);
    let mut points = Vec::new();
    for &t in &grid.times {
        let tau = prob.horizon - t;
        let paths = match (&gaussian, tau > 0.0) {
            (None, true) => Some(make_paths(TimeGrid::new(t, prob.horizon, mc.n_steps)?, d, mc.n_paths, mc.seed)?),
            _ => None,
        };
        for x in &grid.points {
            let est = if tau <= 0.0 {
                Ok(Estimate::exact(term.try_eval(x).map_err(|e| at_point(t, x, e))?))
            } else if let Some((mu, s2)) = &gaussian {
                let mean: Vec<f64> = x.iter().zip(mu).map(|(a, m)| a + m * tau).collect();
                let w = if d == 1 {
                    gauss_expect(|y| ubar(&[mean[0] + y]), s2 * tau, rule)
                } else {
                    gauss_expect_nd(ubar, &mean, s2 * tau, rule)
                };
                w.and_then(|w| pt.inverse(w)).map(Estimate::exact)
            } else {
                let paths = paths.as_ref().expect("built above");
                let states = if prob.diffusion.domain.is_some() {
                    euler_reflected(&prob.diffusion, t, x, paths).map(|r| r.states)
                } else {
                    euler(&prob.diffusion, t, x, paths)
                };
                states.and_then(|s| transform_mc(pt, term, s.node(paths.grid().n_steps()), d))
            };
            let est = est.map_err(|e| at_point(t, x, e))?;
            points.push(FieldPoint {
                t,
                x: x.clone(),
                v: est.value,
                se: est.se,
            });
        }
    }
    Ok(SolutionField {
        dim: d,
        points,
        method: "transform-exact",
        clamp_rate: None,
    })
}

/// Product of two cosine series `Σ a_j cos(jπx) · Σ b_k cos(kπx)`.
fn cosine_product(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (j, aj) in a.iter().enumerate() {
        for (k, bk) in b.iter().enumerate() {
            let c = 0.5 * aj * bk;
            out[j + k] += c;
            out[j.abs_diff(k)] += c;
        }
    }
    out
}

/// Cosine coefficients of `u∘h` for `h = Σ c_k cos(kπx)` and integer
/// `m = 2δ + 1`.
pub fn transformed_cosine_coefficients(delta: f64, c: &[f64]) -> Result<Vec<f64>> {
    let m = 2.0 * delta + 1.0;
    if (m - m.round()).abs() > 1e-12 || m < 1.0 {
        return Err(Error::Unsupported(format!(
            "the cosine series needs an integer exponent 2*delta + 1, got {m}"
        )));
    }
    let mut acc = vec![1.0];
    for _ in 0..m.round() as usize {
        acc = cosine_product(&acc, c);
    }
    Ok(acc.into_iter().map(|v| v / m).collect())
}

/// Neumann problem on `[0, 1]` with constant `σ`, zero drift, canonical
/// generator and a cosine-series terminal: `u(v)` solves the heat
/// equation, whose Neumann modes decay like `e^{−σ²k²π²(T−t)/2}`.
pub fn eval_neumann_series(prob: &PDEProblem, grid: &EvalGrid) -> Result<SolutionField> {
    grid.check(prob)?;
    let on_unit = matches!(prob.diffusion.domain, Some(ConvexDomain::Interval { lo, hi }) if lo == 0.0 && hi == 1.0);
    if prob.dim() != 1 || !prob.neumann || !on_unit {
        return Err(Error::Unsupported("the cosine series covers the Neumann problem on [0, 1] only".into()));
    }
    let Some(pt) = canonical_transform(prob) else {
        return Err(Error::Unsupported("the cosine series needs the canonical generator".into()));
    };
    let sigma = match prob.diffusion.constant_coefficients() {
        Some((mu, sig)) if mu[0] == 0.0 => sig[0],
        _ => return Err(Error::Unsupported("the cosine series needs zero drift and constant volatility".into())),
    };
    let c = match &prob.terminal {
        Terminal::Cosine(c) => c.clone(),
        Terminal::Constant(v) => vec![*v],
        _ => return Err(Error::Unsupported("the cosine series needs a cosine or constant terminal".into())),
    };
    let a = transformed_cosine_coefficients(prob.generator.delta, &c)?;
    let mut points = Vec::new();
    for &t in &grid.times {
        let tau = prob.horizon - t;
        for x in &grid.points {
            let w: f64 = a
                .iter()
                .enumerate()
                .map(|(k, ak)| {
                    let kp = k as f64 * std::f64::consts::PI;
                    ak * (-0.5 * sigma * sigma * kp * kp * tau).exp() * (kp * x[0]).cos()
                })
                .sum();
            let v = if tau == 0.0 {
                prob.terminal.try_eval(x)?
            } else {
                pt.inverse(w).map_err(|e| at_point(t, x, e))?
            };
            points.push(FieldPoint { t, x: x.clone(), v, se: 0.0 });
        }
    }
    Ok(SolutionField {
        dim: 1,
        points,
        method: "series",
        clamp_rate: None,
    })
}

/// Settings of the explicit finite-difference solver.
#[derive(Debug, Clone)]
pub struct FdOptions {
    /// Spatial range for whole-space problems (ignored with a Neumann
    /// boundary, where the domain is used).
    pub x_range: (f64, f64),
    pub dx: f64,
    /// Time step; `None` picks the largest stable one.
    pub dt: Option<f64>,
    /// Start of the backward sweep.
    pub t0: f64,
    /// Times at which the field is recorded (snapped to time levels).
    pub output_times: Vec<f64>,
    /// Dirichlet values on the artificial boundary (whole-space problems).
    pub padding: Option<FieldFn>,
    /// Positivity floor.
    pub clamp_eps: f64,
}

impl FdOptions {
    pub fn new(x_range: (f64, f64), dx: f64, output_times: Vec<f64>) -> Self {
        FdOptions {
            x_range,
            dx,
            dt: None,
            t0: 0.0,
            output_times,
            padding: None,
            clamp_eps: 1e-12,
        }
    }
}

/// Explicit backward finite differences for the one-dimensional equation
/// with centered gradients.
pub fn solve_fd(prob: &PDEProblem, opts: &FdOptions) -> Result<SolutionField> {
    fd_core(prob, opts, &prob.generator, &|x| prob.terminal.try_eval(&[x]), &Ok)
}

/// Finite differences on the linear equation for `w = u(v)` (generator
/// `δ = 0`, terminal `u(h)`, padding `u(pad)`), mapped back with `u⁻¹`.
pub fn solve_fd_transformed(prob: &PDEProblem, opts: &FdOptions) -> Result<SolutionField> {
    let Some(pt) = canonical_transform(prob) else {
        return Err(Error::Unsupported("the transformed equation needs the canonical generator".into()));
    };
    let linear = GeneratorSpec::canonical(0.0);
    let mut o = opts.clone();
    if let Some(pad) = &opts.padding {
        let pad = pad.clone();
        o.padding = Some(FieldFn::native(move |t, x| pt.forward(pad.eval(t, x)).unwrap_or(f64::NAN)));
    }
    o.clamp_eps = f64::NEG_INFINITY;
    let mut f = fd_core(
        prob,
        &o,
        &linear,
        &|x| pt.forward(prob.terminal.try_eval(&[x])?),
        &|w| pt.inverse(w),
    )?;
    f.clamp_rate = None;
    Ok(f)
}

fn fd_core(
    prob: &PDEProblem,
    opts: &FdOptions,
    driver: &dyn Driver,
    terminal: &dyn Fn(f64) -> Result<f64>,
    output: &dyn Fn(f64) -> Result<f64>,
) -> Result<SolutionField> {
    if prob.dim() != 1 {
        return Err(Error::Unsupported("finite differences are one-dimensional".into()));
    }
    let (a, b) = if prob.neumann {
        match prob.diffusion.domain {
            Some(ConvexDomain::Interval { lo, hi }) => (lo, hi),
            _ => return Err(Error::Unsupported("finite differences need an interval domain".into())),
        }
    } else {
        opts.x_range
    };
    if !prob.neumann && opts.padding.is_none() {
        return Err(Error::invalid("whole-space finite differences need Dirichlet padding values"));
    }
    if !(opts.dx > 0.0) || !(b > a) {
        return Err(Error::invalid("finite differences need dx > 0 and a nonempty range"));
    }
    let nx = ((b - a) / opts.dx).round() as usize;
    if nx < 2 || ((b - a) / nx as f64 - opts.dx).abs() > 1e-9 * opts.dx {
        return Err(Error::invalid(format!("dx = {} does not divide [{a}, {b}]", opts.dx)));
    }
    let dx = opts.dx;
    let xs: Vec<f64> = (0..=nx).map(|j| a + dx * j as f64).collect();
    let tn = prob.horizon;
    let t0 = opts.t0;
    if !(t0 < tn) || t0 < 0.0 {
        return Err(Error::invalid(format!("start time {t0} must lie in [0, {tn})")));
    }
    let mu = &prob.diffusion.drift[0];
    let sig = &prob.diffusion.vol[0];
    let probe: Vec<f64> = (0..=8).map(|k| t0 + (tn - t0) * k as f64 / 8.0).collect();
    let max_s2 = probe
        .iter()
        .flat_map(|&t| xs.iter().map(move |&x| (t, x)))
        .map(|(t, x)| sig.eval(t, &[x]).powi(2))
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let dt_max = 0.25 * dx * dx / max_s2;
    let dt_req = opts.dt.unwrap_or(dt_max);
    if dt_req > dt_max * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "explicit scheme unstable: dt = {dt_req} exceeds the admissible {dt_max}"
        )));
    }
    let nt = ((tn - t0) / dt_req).ceil() as usize;
    let dt = (tn - t0) / nt as f64;
    let mut levels = Vec::with_capacity(opts.output_times.len());
    for &t in &opts.output_times {
        if !(t >= t0 && t <= tn) {
            return Err(Error::invalid(format!("output time {t} outside [{t0}, {tn}]")));
        }
        levels.push(((t - t0) / dt).round() as usize);
    }

    let mut v: Vec<f64> = xs.iter().map(|&x| terminal(x)).collect::<Result<_>>()?;
    let mut next = v.clone();
    let mut points = Vec::new();
    let mut clamps = 0usize;
    let record = |level: usize, v: &[f64], points: &mut Vec<FieldPoint>| -> Result<()> {
        let t = t0 + dt * level as f64;
        for (j, &x) in xs.iter().enumerate() {
            points.push(FieldPoint {
                t,
                x: vec![x],
                v: output(v[j]).map_err(|e| at_point(t, &[x], e))?,
                se: 0.0,
            });
        }
        Ok(())
    };
    if levels.contains(&nt) {
        record(nt, &v, &mut points)?;
    }
    let eps = opts.clamp_eps;
    for level in (0..nt).rev() {
        let t = t0 + dt * (level + 1) as f64;
        let h = driver.at_time(t);
        for j in 0..=nx {
            let x = xs[j];
            let (vl, vr) = if j == 0 {
                if prob.neumann {
                    (v[1], v[1])
                } else {
                    (f64::NAN, v[1])
                }
            } else if j == nx {
                if prob.neumann {
                    (v[nx - 1], v[nx - 1])
                } else {
                    (v[nx - 1], f64::NAN)
                }
            } else {
                (v[j - 1], v[j + 1])
            };
            if !prob.neumann && (j == 0 || j == nx) {
                let pad = opts.padding.as_ref().expect("checked above");
                next[j] = pad.eval(t - dt, &[x]);
                continue;
            }
            let d1 = (vr - vl) / (2.0 * dx);
            let d2 = (vr - 2.0 * v[j] + vl) / (dx * dx);
            let s = sig.eval(t, &[x]);
            let yv = if v[j] < eps {
                clamps += 1;
                eps
            } else {
                v[j]
            };
            let gen = h(yv, &[s * d1]);
            let mut nv = v[j] + dt * (mu.eval(t, &[x]) * d1 + 0.5 * s * s * d2 + gen);
            if nv < eps {
                clamps += 1;
                nv = eps;
            }
            if !nv.is_finite() {
                return Err(at_point(t - dt, &[x], Error::NumericDomain("finite-difference value is not finite".into())));
            }
            next[j] = nv;
        }
        std::mem::swap(&mut v, &mut next);
        if levels.contains(&level) {
            record(level, &v, &mut points)?;
        }
    }
    Ok(SolutionField {
        dim: 1,
        points,
        method: "finite-difference",
        clamp_rate: Some(clamps as f64 / ((nx + 1) * nt) as f64),
    })
}

/// `v` at `(t, x)` and along a sequence `(tⁿ, xⁿ)`, all driven by one set of
/// increments on `[t, T]` (common random numbers), for the canonical
/// generator. Flows started later are frozen at `xⁿ` before `tⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGap {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Estimate,
    pub gap: f64,
}

pub fn flow_continuity(
    prob: &PDEProblem,
    base: (f64, &[f64]),
    sequence: &[(f64, Vec<f64>)],
    mc: &McOptions,
) -> Result<(Estimate, Vec<FlowGap>)> {
    let Some(pt) = canonical_transform(prob) else {
        return Err(Error::Unsupported("flow continuity uses the canonical transform".into()));
    };
    let d = prob.dim();
    let paths = make_paths(TimeGrid::new(base.0, prob.horizon, mc.n_steps)?, d, mc.n_paths, mc.seed)?;
    let n = paths.grid().n_steps();
    let value = |t: f64, x: &[f64]| -> Result<Estimate> {
        let r = simulate_from(&prob.diffusion, t, x, &paths).map_err(|e| at_point(t, x, e))?;
        transform_mc(pt, &prob.terminal, r.states.node(n), d).map_err(|e| at_point(t, x, e))
    };
    let v0 = value(base.0, base.1)?;
    let mut out = Vec::with_capacity(sequence.len());
    for (t, x) in sequence {
        let v = value(*t, x)?;
        out.push(FlowGap {
            t: *t,
            x: x.clone(),
            v,
            gap: (v.value - v0.value).abs(),
        });
    }
    Ok((v0, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat(delta: f64, h: Terminal) -> PDEProblem {
        PDEProblem::new(DiffusionSpec::brownian(1), GeneratorSpec::canonical(delta), h, 1.0).unwrap()
    }

    fn neumann(h: Terminal, horizon: f64) -> PDEProblem {
        let diff = DiffusionSpec::brownian(1).with_domain(ConvexDomain::interval(0.0, 1.0).unwrap()).unwrap();
        PDEProblem::new(diff, GeneratorSpec::canonical(1.0), h, horizon).unwrap().with_neumann().unwrap()
    }

    #[test]
    fn transform_exact_lognormal_and_polynomial() {
        let rule = QuadratureRule::gauss_hermite(40).unwrap();
        let g = EvalGrid::new(vec![0.0, 0.5, 1.0], vec![vec![0.0], vec![1.0]]).unwrap();
        let f = eval_transform_exact(&heat(1.0, Terminal::exp_affine(1.0, 1.0)), &g, &rule, &McOptions::default()).unwrap();
        for p in &f.points {
            let exact = (p.x[0] + 1.5 * (1.0 - p.t)).exp();
            assert!((p.v / exact - 1.0).abs() < 1e-10, "{p:?}");
        }
        let g0 = EvalGrid::new(vec![0.0], vec![vec![0.0]]).unwrap();
        let f = eval_transform_exact(&heat(1.0, Terminal::Polynomial(vec![1.0, 0.0, 1.0])), &g0, &rule, &McOptions::default()).unwrap();
        assert!((f.points[0].v - 28f64.cbrt()).abs() < 1e-10);
        let lin = eval_transform_exact(&heat(0.0, Terminal::Polynomial(vec![1.0, 0.0, 1.0])), &g0, &rule, &McOptions::default()).unwrap();
        assert!((lin.points[0].v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn series_value_and_limit() {
        let p = neumann(Terminal::Cosine(vec![2.0, 1.0]), 0.2);
        let g = EvalGrid::new(vec![0.0, 0.2], vec![vec![0.0], vec![0.5]]).unwrap();
        let f = eval_neumann_series(&p, &g).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        let w = (11.0 + 12.75 * (-0.1 * pi2).exp() + 3.0 * (-0.4 * pi2).exp() + 0.25 * (-0.9 * pi2).exp()) / 3.0;
        assert!((f.value(0.0, &[0.0]).unwrap() - (3.0 * w).cbrt()).abs() < 1e-12);
        assert!((f.value(0.2, &[0.5]).unwrap() - 2.0).abs() < 1e-15);
        let long = neumann(Terminal::Cosine(vec![2.0, 1.0]), 50.0);
        let f = eval_neumann_series(&long, &EvalGrid::new(vec![0.0], vec![vec![0.3]]).unwrap()).unwrap();
        assert!((f.points[0].v - 11f64.cbrt()).abs() < 1e-12);
        assert_eq!(transformed_cosine_coefficients(1.0, &[2.0, 1.0]).unwrap(), vec![11.0 / 3.0, 4.25, 1.0, 0.25 / 3.0]);
        assert!(eval_neumann_series(&heat(1.0, Terminal::Constant(1.0)), &g).is_err());
    }

    #[test]
    fn fd_matches_exact_on_whole_space() {
        let p = heat(1.0, Terminal::exp_affine(1.0, 1.0));
        let mut o = FdOptions::new((-2.0, 2.0), 0.05, vec![0.0, 0.5]);
        o.padding = Some(FieldFn::parse("exp(x + 1.5*(1 - t))", 1).unwrap());
        let f = solve_fd(&p, &o).unwrap();
        let g = solve_fd_transformed(&p, &o).unwrap();
        for (a, b) in f.points.iter().zip(&g.points) {
            let exact = (a.x[0] + 1.5 * (1.0 - a.t)).exp();
            assert!((a.v - exact).abs() < 2e-2, "{a:?} {exact}");
            assert!((a.v - b.v).abs() < 2e-2);
        }
        assert_eq!(f.clamp_rate, Some(0.0));
        o.dt = Some(1.0);
        assert!(matches!(solve_fd(&p, &o), Err(Error::InvalidArgument(m)) if m.contains("admissible")));
    }

    #[test]
    fn fd_neumann_matches_series() {
        let p = neumann(Terminal::Cosine(vec![2.0, 1.0]), 0.2);
        let f = solve_fd(&p, &FdOptions::new((0.0, 1.0), 0.02, vec![0.0])).unwrap();
        let s = eval_neumann_series(&p, &EvalGrid::line(vec![0.0], 0.0, 1.0, 50).unwrap()).unwrap();
        for (a, b) in f.points.iter().zip(&s.points) {
            assert!((a.v - b.v).abs() < 1e-2, "{a:?} {b:?}");
        }
    }

    #[test]
    fn probabilistic_constant_and_terminal_slice() {
        let p = heat(1.0, Terminal::Constant(2.0));
        let g = EvalGrid::new(vec![0.0, 1.0], vec![vec![-1.0], vec![1.0]]).unwrap();
        let f = eval_probabilistic(&p, &g, &McOptions { n_paths: 500, n_steps: 5, ..Default::default() }).unwrap();
        assert!(f.points.iter().all(|q| (q.v - 2.0).abs() < 1e-12));
        let h = heat(1.0, Terminal::exp_affine(1.0, 1.0));
        let f = eval_probabilistic(&h, &EvalGrid::new(vec![1.0], vec![vec![0.3]]).unwrap(), &McOptions::default()).unwrap();
        assert_eq!(f.points[0].v, 0.3f64.exp());
        let csv = f.to_csv();
        assert!(csv.starts_with("t,x,v,se,method\n"));
        assert!(csv.contains("1.3498588075760032e0"));
    }

    #[test]
    fn probabilistic_lsmc_matches_exact() {
        let h = heat(1.0, Terminal::exp_affine(1.0, 1.0));
        let mc = McOptions { method: ProbMethod::Lsmc, n_paths: 40_000, ..Default::default() };
        let f = eval_probabilistic(&h, &EvalGrid::new(vec![0.5], vec![vec![0.5]]).unwrap(), &mc).unwrap();
        assert!((f.points[0].v / (0.5f64 + 0.75).exp() - 1.0).abs() < 0.02, "{:?}", f.points);
    }

    #[test]
    fn reflected_transform_mc_matches_series() {
        let p = neumann(Terminal::Cosine(vec![2.0, 1.0]), 0.2);
        let g = EvalGrid::new(vec![0.0], vec![vec![0.0]]).unwrap();
        let mc = McOptions { n_steps: 200, n_paths: 40_000, ..Default::default() };
        let a = eval_probabilistic(&p, &g, &mc).unwrap().points[0].v;
        let b = eval_neumann_series(&p, &g).unwrap().points[0].v;
        assert!((a / b - 1.0).abs() < 0.02, "{a} {b}");
    }

    #[test]
    fn mixed_sign_terminal_rejected() {
        let r = PDEProblem::new(DiffusionSpec::brownian(1), GeneratorSpec::canonical(1.0), Terminal::Polynomial(vec![0.0, 1.0]), 1.0);
        assert!(matches!(r, Err(Error::Branch(_))));
    }
}
