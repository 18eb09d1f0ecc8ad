//! Utility maximization with a multiplicative terminal endowment and
//! recursive (Kreps–Porteus) utility.
//!
//! Sign convention: every backward equation here is `dY = −H dt + Z dW`.
//! The value process of an investor is written `R^p = U(X^p Y)` with
//! wealth `dX/X = p·(θ dt + dW)`, where `p = σ′π` is the position expressed
//! in Brownian units.

use nalgebra::{DMatrix, DVector};

use crate::bsde::{self, Forward, LsmcOptions};
use crate::error::{Error, Result};
use crate::func::TimeFn;
use crate::generators::{Driver, GeneratorSpec};
use crate::optim::golden_max;
use crate::paths::PathBundle;
use crate::solution::BSDESolution;
use crate::stats::{self, Estimate};
use crate::terminal::Terminal;

/// Stocks `dS/S = b dt + σ dW` with `m` assets driven by `d` Brownian motions.
#[derive(Debug, Clone)]
pub struct MarketModel {
    pub drift: Vec<TimeFn>,
    /// `m × d`, row-major.
    pub vol: Vec<TimeFn>,
    pub n_assets: usize,
    pub dim: usize,
}

impl MarketModel {
    pub fn new(drift: Vec<TimeFn>, vol: Vec<TimeFn>, dim: usize) -> Result<Self> {
        let m = drift.len();
        if m == 0 || dim == 0 {
            return Err(Error::invalid("market needs at least one asset and one Brownian motion"));
        }
        if vol.len() != m * dim {
            return Err(Error::invalid(format!(
                "volatility has {} entries, expected {m}×{dim}",
                vol.len()
            )));
        }
        if m > dim {
            return Err(Error::invalid("more assets than Brownian motions: σ cannot have full row rank"));
        }
        Ok(MarketModel { drift, vol, n_assets: m, dim })
    }

    /// One asset, one Brownian motion, constant coefficients.
    pub fn black_scholes(b: f64, sigma: f64) -> Result<Self> {
        Self::new(vec![b.into()], vec![sigma.into()], 1)
    }

    /// Market whose price of risk is the given constant vector (σ = I).
    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        let d = theta.len();
        let vol = (0..d * d)
            .map(|k| if k / d == k % d { 1.0.into() } else { 0.0.into() })
            .collect();
        Self::new(theta.iter().map(|&v| v.into()).collect(), vol, d)
    }

    /// `θ(t) = σ′(σσ′)⁻¹b`.
    pub fn theta(&self, t: f64) -> Result<Vec<f64>> {
        let (m, d) = (self.n_assets, self.dim);
        let mut sig = DMatrix::zeros(m, d);
        for i in 0..m {
            for j in 0..d {
                sig[(i, j)] = self.vol[i * d + j].try_eval(t)?;
            }
        }
        let b = DVector::from_iterator(m, self.drift.iter().map(|f| f.try_eval(t)).collect::<Result<Vec<_>>>()?);
        if sig.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!("market coefficients are not finite at t = {t}")));
        }
        let s = &sig * sig.transpose();
        let scale = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let chol = (scale > 0.0)
            .then(|| s.clone().cholesky())
            .flatten()
            .ok_or_else(|| Error::invalid(format!("σσ′ is singular at t = {t}")))?;
        let ev = s.symmetric_eigenvalues();
        let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        if lo <= 1e-12 * hi {
            return Err(Error::invalid(format!("σσ′ is singular at t = {t}")));
        }
        let theta = sig.transpose() * chol.solve(&b);
        let resid = (&sig * &theta - &b).norm();
        if resid > 1e-10 * (1.0 + b.norm()) {
            return Err(Error::NumericDomain(format!(
                "σθ differs from b by {resid:.3e} at t = {t}"
            )));
        }
        Ok(theta.iter().copied().collect())
    }

    /// Checks σσ′ invertibility and `σθ = b` at every node; returns θ per node.
    pub fn validate(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        times.iter().map(|&t| self.theta(t)).collect()
    }

    /// θ if it is the same at every node.
    pub fn constant_theta(&self, times: &[f64]) -> Result<Option<Vec<f64>>> {
        let all = self.validate(times)?;
        let first = all[0].clone();
        let same = all
            .iter()
            .all(|th| th.iter().zip(&first).all(|(a, b)| (a - b).abs() <= 1e-14 * (1.0 + b.abs())));
        Ok(same.then_some(first))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Utility {
    /// `U(x) = x^δ/δ`.
    Power(f64),
    Log,
}

impl Utility {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Utility::Power(d) => x.powf(d) / d,
            Utility::Log => x.ln(),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            Utility::Power(d) => x.powf(d - 1.0),
            Utility::Log => 1.0 / x,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Utility::Power(d) => format!("power(δ = {d})"),
            Utility::Log => "log".into(),
        }
    }

    /// `inf_p f(p)` for the martingale-optimality functional at one `(y, z)`,
    /// minimized numerically. Returns the infimum and the minimizer.
    pub fn infimum(&self, theta: &[f64], y: f64, z: &[f64]) -> (f64, Vec<f64>) {
        // The functional is separable across components, each a convex quadratic in p_k.
        let k = match *self {
            Utility::Power(d) => 1.0 - d,
            Utility::Log => 1.0,
        };
        let mut total = 0.0;
        let mut arg = Vec::with_capacity(z.len());
        for (&th, &zk) in theta.iter().zip(z) {
            let f = |p: f64| 0.5 * k * (zk + p * y).powi(2) / y - y * p * th - p * zk;
            let centre = (th + (1.0 - k) * zk / y) / k;
            let r = 10.0 * (1.0 + centre.abs());
            let (p, v) = golden_max(|p| -f(p), centre - r, centre + r, 1e-12);
            total -= v;
            arg.push(p);
        }
        (total, arg)
    }
}

#[derive(Debug, Clone)]
pub struct UtilityProblem {
    pub utility: Utility,
    pub endowment: Terminal,
    pub wealth: f64,
}

impl UtilityProblem {
    pub fn new(utility: Utility, endowment: Terminal, wealth: f64) -> Result<Self> {
        if let Utility::Power(d) = utility {
            if !(d > 0.5 && d <= 0.75) {
                return Err(Error::invalid(format!("power utility needs δ in (1/2, 3/4], got {d}")));
            }
        }
        if !(wealth > 0.0 && wealth.is_finite()) {
            return Err(Error::invalid(format!("initial wealth must be positive, got {wealth}")));
        }
        Ok(UtilityProblem { utility, endowment, wealth })
    }

    /// Samples ξ on the terminal Brownian values and rejects non-positive ones.
    pub fn check_endowment(&self, paths: &PathBundle) -> Result<()> {
        let w = paths.brownian(&vec![0.0; paths.dim()]);
        let last = paths.grid().n_steps();
        let n = paths.n_paths().min(4096);
        let samples = (0..n)
            .map(|j| self.endowment.try_eval(w.get(last, j)))
            .collect::<Result<Vec<_>>>()?;
        if samples.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Branch("endowment has zero or negative samples".into()));
        }
        Ok(())
    }
}

/// Which sign of the infimum makes the Merton value come out right.
///
/// The infimum functional `g` is turned into a backward equation either as
/// `H = −g` or `H = g`. On a constant instance with `ξ ≡ 1, Z ≡ 0` the
/// equation is an ODE in `Y`; the sign whose `U(x·Y_0)` matches the grid
/// oracle is returned.
pub fn sign_consistency(utility: Utility, theta: &[f64], horizon: f64) -> Result<f64> {
    let z0 = vec![0.0; theta.len()];
    // H is linear in y when z = 0, so Y_0 = exp(±H(1, 0)·T).
    let (g1, _) = utility.infimum(theta, 1.0, &z0);
    let n = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let grid: Vec<f64> = (0..=400).map(|k| -4.0 + 0.02 * k as f64).collect();
    let oracle = merton_grid_oracle(utility, n, horizon, 1.0, 1.0, &grid);
    for s in [1.0, -1.0] {
        let y0 = (-s * g1 * horizon).exp();
        let v = utility.eval(y0);
        if (v - oracle.value).abs() <= 1e-6 * (1.0 + oracle.value.abs()) {
            return Ok(s);
        }
    }
    Err(Error::NumericDomain("neither sign of the infimum reproduces the Merton value".into()))
}

/// Closed-form coefficients `(δ_g, β, γ)` of `H = β y + γ·z + δ_g |z|²/y`
/// for power utility.
pub fn power_coefficients(delta: f64, theta: &[f64]) -> (f64, f64, Vec<f64>) {
    let k = 1.0 - delta;
    let t2: f64 = theta.iter().map(|v| v * v).sum();
    (
        (2.0 * delta - 1.0) / (2.0 * k),
        t2 / (2.0 * k),
        theta.iter().map(|v| delta * v / k).collect(),
    )
}

struct LogDriver {
    market: MarketModel,
}

impl Driver for LogDriver {
    fn dim(&self) -> usize {
        self.market.dim
    }

    fn at_time(&self, t: f64) -> Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync + '_> {
        let theta = self.market.theta(t).unwrap_or_else(|_| vec![f64::NAN; self.market.dim]);
        let t2: f64 = theta.iter().map(|v| v * v).sum();
        Box::new(move |y, z| 0.5 * t2 * y - 0.5 * z.iter().map(|v| v * v).sum::<f64>() / y)
    }
}

#[derive(Debug, Clone)]
pub struct UtilityResult {
    /// `U(x·Y_0)`.
    pub value: Estimate,
    pub y0: Estimate,
    /// `p*` on the regression nodes `0..n_steps`, `n_steps × n_paths × d`.
    pub strategy: Vec<f64>,
    /// Per node, per component median of `p*` over paths.
    pub strategy_median: Vec<Vec<f64>>,
    pub solution: BSDESolution,
    pub generator: String,
}

impl UtilityResult {
    pub fn p(&self, node: usize, path: usize) -> &[f64] {
        let d = self.solution.dim;
        let o = (node * self.solution.n_paths + path) * d;
        &self.strategy[o..o + d]
    }

    /// Median over nodes of the per-node medians, per component.
    pub fn median_strategy(&self) -> Vec<f64> {
        let d = self.solution.dim;
        (0..d)
            .map(|k| stats::median(&self.strategy_median.iter().map(|m| m[k]).collect::<Vec<_>>()))
            .collect()
    }
}

/// Optimal investment for `sup_p E U(X^p_T ξ)`.
///
/// Power utility goes through the g-class solver; log utility, whose
/// generator is concave in `z`, through a dedicated driver.
pub fn solve_utility(
    market: &MarketModel,
    prob: &UtilityProblem,
    paths: &PathBundle,
    opts: &LsmcOptions,
) -> Result<UtilityResult> {
    if paths.dim() != market.dim {
        return Err(Error::invalid("path dimension differs from the market's Brownian dimension"));
    }
    let times = paths.grid().nodes();
    let thetas = market.validate(&times)?;
    prob.check_endowment(paths)?;
    let s = sign_consistency(prob.utility, &thetas[0], paths.grid().horizon() - paths.grid().t0())?;
    if s != 1.0 {
        return Err(Error::Unsupported("infimum sign inconsistent with the standard convention".into()));
    }
    let d = market.dim;
    let x0 = vec![0.0; d];
    let (sol, generator) = match prob.utility {
        Utility::Power(delta) => {
            let (dg, _, _) = power_coefficients(delta, &thetas[0]);
            let mk = market.clone();
            let beta = TimeFn::native(move |t| {
                let th = mk.theta(t).unwrap_or_default();
                power_coefficients(delta, &th).1
            });
            let gamma = (0..d)
                .map(|k| {
                    let mk = market.clone();
                    TimeFn::native(move |t| {
                        let th = mk.theta(t).unwrap_or_default();
                        th.get(k).map_or(f64::NAN, |v| delta * v / (1.0 - delta))
                    })
                })
                .collect();
            let spec = GeneratorSpec::gclass(dg, 0.0.into(), beta, gamma);
            let sol = bsde::solve_lsmc(&spec, &prob.endowment, Forward::Brownian(&x0), paths, opts)?;
            (sol, format!("{dg}|z|²/y + δθ·z/(1−δ) + |θ|²y/(2(1−δ)), δ = {delta}"))
        }
        Utility::Log => {
            let drv = LogDriver { market: market.clone() };
            let sol = bsde::solve_lsmc_driver(&drv, &prob.endowment, Forward::Brownian(&x0), paths, opts)?;
            (sol, "|θ|²y/2 − |z|²/(2y)".to_string())
        }
    };

    let n = paths.n_paths();
    let steps = paths.grid().n_steps();
    let mut strategy = vec![0.0; steps * n * d];
    let mut strategy_median = Vec::with_capacity(steps);
    for i in 0..steps {
        let th = &thetas[i];
        for j in 0..n {
            let o = (i * n + j) * d;
            match prob.utility {
                Utility::Power(delta) => {
                    let y = sol.y(i, j).max(sol.clamp_eps.max(f64::MIN_POSITIVE));
                    let z = sol.z(i, j);
                    for k in 0..d {
                        strategy[o + k] = (th[k] + delta * z[k] / y) / (1.0 - delta);
                    }
                }
                Utility::Log => strategy[o..o + d].copy_from_slice(th),
            }
        }
        strategy_median.push(
            (0..d)
                .map(|k| {
                    let col: Vec<f64> = (0..n).map(|j| strategy[(i * n + j) * d + k]).collect();
                    stats::median(&col)
                })
                .collect(),
        );
    }

    let y0 = sol.y0_estimate();
    let x = prob.wealth;
    let u = prob.utility;
    let value = y0.map(|y| u.eval(x * y), |y| x * u.deriv(x * y));
    Ok(UtilityResult { value, y0, strategy, strategy_median, solution: sol, generator })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonOracle {
    pub value: f64,
    pub p: f64,
}

/// `E U(X^p_T ξ)` for a constant position `p` along θ, `|θ| = theta`.
pub fn merton_value(utility: Utility, theta: f64, horizon: f64, wealth: f64, xi: f64, p: f64) -> f64 {
    let q = wealth * xi;
    match utility {
        Utility::Log => q.ln() + (p * theta - 0.5 * p * p) * horizon,
        Utility::Power(d) => q.powf(d) / d * (d * horizon * (p * theta - 0.5 * p * p * (1.0 - d))).exp(),
    }
}

/// Brute-force maximization of the closed-form constant-strategy value over
/// `p_grid`, refined by golden section between the best point's neighbours.
pub fn merton_grid_oracle(
    utility: Utility,
    theta: f64,
    horizon: f64,
    wealth: f64,
    xi: f64,
    p_grid: &[f64],
) -> MertonOracle {
    let f = |p: f64| merton_value(utility, theta, horizon, wealth, xi, p);
    let Some((best, _)) = p_grid
        .iter()
        .enumerate()
        .map(|(k, &p)| (k, f(p)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
    else {
        return MertonOracle { value: f64::NAN, p: f64::NAN };
    };
    let lo = p_grid[best.saturating_sub(1)];
    let hi = p_grid[(best + 1).min(p_grid.len() - 1)];
    let (p, value) = if hi > lo { golden_max(f, lo, hi, 1e-10) } else { (p_grid[best], f(p_grid[best])) };
    MertonOracle { value, p }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Constant(Vec<f64>),
    /// The strategy field of a [`UtilityResult`].
    Optimal,
}

#[derive(Debug, Clone)]
pub struct DriftCheck {
    pub strategy: Strategy,
    /// Path average of `R_N − R_0`.
    pub drift: Estimate,
    /// Nonpositive within 3 SE (suboptimal), or zero within 3 SE (optimal).
    pub pass: bool,
}

/// Simulates `R^p = U(X^p Y)` and estimates its total drift.
///
/// `R_0 = U(x·Y_0)`, `R_N = U(X^p_N ξ)`; wealth follows the exact log-Euler
/// step for piecewise-constant `p`.
pub fn supermartingale_check(
    prob: &UtilityProblem,
    market: &MarketModel,
    result: &UtilityResult,
    paths: &PathBundle,
    strategies: &[Strategy],
) -> Result<Vec<DriftCheck>> {
    let sol = &result.solution;
    if paths.n_paths() != sol.n_paths || paths.grid() != &sol.grid {
        return Err(Error::invalid("supermartingale check needs the paths of the solve"));
    }
    let d = market.dim;
    let grid = paths.grid();
    let h = grid.h();
    let thetas = market.validate(&grid.nodes())?;
    let w = paths.brownian(&vec![0.0; d]);
    let last = grid.n_steps();
    let n = paths.n_paths();
    let u = prob.utility;
    let y0 = sol.y0();
    let r0 = u.eval(prob.wealth * y0);
    let xi = (0..n)
        .map(|j| prob.endowment.try_eval(w.get(last, j)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(strategies.len());
    for s in strategies {
        if let Strategy::Constant(p) = s {
            if p.len() != d {
                return Err(Error::invalid("constant strategy has the wrong dimension"));
            }
        }
        let incr: Vec<f64> = (0..n)
            .map(|j| {
                let mut lx = prob.wealth.ln();
                for i in 0..last {
                    let p = match s {
                        Strategy::Constant(p) => p.as_slice(),
                        Strategy::Optimal => result.p(i, j),
                    };
                    let dw = paths.dw(i, j);
                    let (mut pt, mut pp, mut pw) = (0.0, 0.0, 0.0);
                    for k in 0..d {
                        pt += p[k] * thetas[i][k];
                        pp += p[k] * p[k];
                        pw += p[k] * dw[k];
                    }
                    lx += (pt - 0.5 * pp) * h + pw;
                }
                u.eval(lx.exp() * xi[j]) - r0
            })
            .collect();
        let drift = Estimate::from_samples(&incr);
        let pass = match s {
            Strategy::Constant(_) => drift.value <= 3.0 * drift.se,
            Strategy::Optimal => drift.value.abs() <= 3.0 * drift.se,
        };
        out.push(DriftCheck { strategy: s.clone(), drift, pass });
    }
    Ok(out)
}

/// Kreps–Porteus recursive utility: aversion `A(u) = (α−1)/u`,
/// aggregator `g(c, u) = (β/ρ)(c^ρ − u^ρ)/u^{ρ−1}`.
#[derive(Debug, Clone)]
pub struct SDUSpec {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub consumption: TimeFn,
    pub terminal: Terminal,
    pub dim: usize,
}

impl SDUSpec {
    pub fn new(alpha: f64, beta: f64, rho: f64, consumption: TimeFn, terminal: Terminal) -> Result<Self> {
        let s = SDUSpec { alpha, beta, rho, consumption, terminal, dim: 1 };
        s.check_params()?;
        Ok(s)
    }

    fn check_params(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("α must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("β must be nonnegative, got {}", self.beta)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid(format!("ρ must lie in (0, 1], got {}", self.rho)));
        }
        Ok(())
    }

    /// `g(c, u)`.
    pub fn aggregator(&self, c: f64, u: f64) -> f64 {
        self.beta / self.rho * (c.powf(self.rho) * u.powf(1.0 - self.rho) - u)
    }

    /// Backward driver `H(t, u, z) = −g(c_t, u) + (1−α)/2·|z|²/u`.
    pub fn driver_at(&self, c: f64, u: f64, z: &[f64]) -> f64 {
        -self.aggregator(c, u) + 0.5 * (1.0 - self.alpha) * z.iter().map(|v| v * v).sum::<f64>() / u
    }

    /// Parameter ranges, positive consumption at the nodes and a sampled
    /// linear-growth bound `|g(c, y)| ≤ a + b y`.
    pub fn validate(&self, times: &[f64]) -> Result<()> {
        self.check_params()?;
        let mut cmax = 0.0f64;
        for &t in times {
            let c = self.consumption.try_eval(t)?;
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("consumption must be positive, got {c} at t = {t}")));
            }
            cmax = cmax.max(c);
        }
        let k = self.beta / self.rho;
        let (a, b) = (k * cmax.powf(self.rho), k * (cmax.powf(self.rho) + 1.0));
        for &t in times {
            let c = self.consumption.eval(t);
            for e in -12..=12 {
                let y = 2f64.powi(e);
                if self.aggregator(c, y).abs() > a + b * y + 1e-12 * (1.0 + y) {
                    return Err(Error::invalid(format!("aggregator violates linear growth at t = {t}, y = {y}")));
                }
            }
        }
        Ok(())
    }
}

struct SduDriver<'a>(&'a SDUSpec);

impl Driver for SduDriver<'_> {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn at_time(&self, t: f64) -> Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync + '_> {
        let c = self.0.consumption.eval(t);
        Box::new(move |y, z| self.0.driver_at(c, y, z))
    }
}

#[derive(Debug, Clone)]
pub struct SduResult {
    pub u0: Estimate,
    pub times: Vec<f64>,
    /// Path mean of `U` at each node.
    pub mean_path: Vec<f64>,
    pub solution: Option<BSDESolution>,
    pub method: &'static str,
    pub notes: Vec<String>,
}

/// `U` on the nodes of `times` for a constant terminal: the backward ODE
/// `U′ = H(t, U, 0)` by RK4 with `substeps` per interval.
pub fn sdu_ode(spec: &SDUSpec, times: &[f64], substeps: usize) -> Result<Vec<f64>> {
    let Terminal::Constant(xi) = spec.terminal else {
        return Err(Error::Unsupported("the ODE reduction needs a constant terminal".into()));
    };
    if !(xi > 0.0) {
        return Err(Error::Branch(format!("terminal must be positive, got {xi}")));
    }
    let z = vec![0.0; spec.dim];
    let f = |t: f64, u: f64| spec.driver_at(spec.consumption.eval(t), u, &z);
    let n = times.len();
    let mut out = vec![0.0; n];
    out[n - 1] = xi;
    let mut u = xi;
    for i in (0..n - 1).rev() {
        let h = (times[i + 1] - times[i]) / substeps.max(1) as f64;
        let mut t = times[i + 1];
        for _ in 0..substeps.max(1) {
            // dU/dt = −H, integrated from t back to t − h.
            let k1 = f(t, u);
            let k2 = f(t - 0.5 * h, u + 0.5 * h * k1);
            let k3 = f(t - 0.5 * h, u + 0.5 * h * k2);
            let k4 = f(t - h, u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t -= h;
        }
        if !(u > 0.0 && u.is_finite()) {
            return Err(Error::NumericDomain(format!("utility left the positive branch at t = {}", times[i])));
        }
        out[i] = u;
    }
    Ok(out)
}

/// Recursive utility of the consumption plan; constant terminals are solved
/// as an ODE, random ones by least squares on the Brownian paths.
pub fn solve_sdu(spec: &SDUSpec, paths: &PathBundle, opts: &LsmcOptions) -> Result<SduResult> {
    let times = paths.grid().nodes();
    spec.validate(&times)?;
    if paths.dim() != spec.dim {
        return Err(Error::invalid("path dimension differs from the utility's dimension"));
    }
    let notes = vec!["aversion term enters as ½A(u)|z|²".to_string()];
    if let Terminal::Constant(_) = spec.terminal {
        let path = sdu_ode(spec, &times, 64)?;
        return Ok(SduResult {
            u0: Estimate::exact(path[0]),
            times,
            mean_path: path,
            solution: None,
            method: "ode-rk4",
            notes,
        });
    }
    let x0 = vec![0.0; spec.dim];
    let sol = bsde::solve_lsmc_driver(&SduDriver(spec), &spec.terminal, Forward::Brownian(&x0), paths, opts)?;
    let mean_path = (0..times.len()).map(|i| stats::mean(sol.y_node(i))).collect();
    Ok(SduResult {
        u0: sol.y0_estimate(),
        times,
        mean_path,
        solution: Some(sol),
        method: "lsmc",
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::paths::make_paths;

    fn p_grid() -> Vec<f64> {
        (0..=300).map(|k| -1.0 + 0.01 * k as f64).collect()
    }

    #[test]
    fn theta_from_market() {
        let m = MarketModel::black_scholes(0.06, 0.2).unwrap();
        assert!((m.theta(0.0).unwrap()[0] - 0.3).abs() < 1e-14);
        let two = MarketModel::new(
            vec![0.1.into()],
            vec![0.3.into(), 0.4.into()],
            2,
        )
        .unwrap();
        let th = two.theta(0.5).unwrap();
        // θ = σ′ b / |σ|²
        assert!((th[0] - 0.12).abs() < 1e-14 && (th[1] - 0.16).abs() < 1e-14);
        let bad = MarketModel::new(vec![0.1.into(), 0.1.into()], vec![1.0.into(), 1.0.into(), 1.0.into(), 1.0.into()], 2).unwrap();
        assert!(matches!(bad.theta(0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn infimum_matches_closed_form() {
        let th = [0.3, -0.2];
        for &(y, z) in &[(1.0, [0.1, 0.0]), (2.5, [-0.4, 0.7]), (0.3, [0.05, 0.2])] {
            let (v, p) = Utility::Power(0.6).infimum(&th, y, &z);
            let (dg, b, g) = power_coefficients(0.6, &th);
            let h = b * y + g[0] * z[0] + g[1] * z[1] + dg * (z[0] * z[0] + z[1] * z[1]) / y;
            assert!((v + h).abs() < 1e-9, "{v} {h}");
            assert!((p[0] - (th[0] + 0.6 * z[0] / y) / 0.4).abs() < 1e-6);
            let (v, p) = Utility::Log.infimum(&th, y, &z);
            let h = 0.5 * 0.13 * y - 0.5 * (z[0] * z[0] + z[1] * z[1]) / y;
            assert!((v + h).abs() < 1e-9);
            assert!((p[1] + 0.2).abs() < 1e-6);
        }
        assert_eq!(sign_consistency(Utility::Power(0.6), &[0.3], 1.0).unwrap(), 1.0);
        assert_eq!(sign_consistency(Utility::Log, &[0.3], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn merton_oracle_examples() {
        let o = merton_grid_oracle(Utility::Log, 0.3, 1.0, 1.0, 2.0, &p_grid());
        assert!((o.p - 0.3).abs() < 1e-6);
        assert!((o.value - (2f64.ln() + 0.045)).abs() < 1e-12);
        let o = merton_grid_oracle(Utility::Power(0.6), 0.3, 1.0, 1.0, 1.0, &p_grid());
        assert!((o.p - 0.75).abs() < 1e-6);
        assert!((o.value - 0.0675f64.exp() / 0.6).abs() < 1e-12);
        let o = merton_grid_oracle(Utility::Log, 0.0, 1.0, 1.0, 1.0, &p_grid());
        assert!(o.p.abs() < 1e-6);
    }

    #[test]
    fn problem_validation() {
        assert!(matches!(
            UtilityProblem::new(Utility::Power(0.8), Terminal::Constant(1.0), 1.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(UtilityProblem::new(Utility::Power(0.75), Terminal::Constant(1.0), 1.0).is_ok());
        let prob = UtilityProblem::new(Utility::Log, Terminal::Polynomial(vec![0.0, 1.0]), 1.0).unwrap();
        let paths = make_paths(TimeGrid::new(0.0, 1.0, 10).unwrap(), 1, 1000, 1).unwrap();
        let m = MarketModel::black_scholes(0.3, 1.0).unwrap();
        assert!(matches!(
            solve_utility(&m, &prob, &paths, &LsmcOptions::default()),
            Err(Error::Branch(_))
        ));
    }

    #[test]
    fn log_and_power_values() {
        let paths = make_paths(TimeGrid::new(0.0, 1.0, 50).unwrap(), 1, 20_000, 3).unwrap();
        let m = MarketModel::from_theta(&[0.3]).unwrap();
        let opts = LsmcOptions::default();

        let prob = UtilityProblem::new(Utility::Log, Terminal::Constant(2.0), 1.0).unwrap();
        let r = solve_utility(&m, &prob, &paths, &opts).unwrap();
        let target = 2f64.ln() + 0.045;
        assert!((r.value.value - target).abs() / target < 0.01, "{:?}", r.value);
        assert!((r.median_strategy()[0] - 0.3).abs() < 0.01);

        let prob = UtilityProblem::new(Utility::Power(0.6), Terminal::Constant(1.0), 1.0).unwrap();
        let r = solve_utility(&m, &prob, &paths, &opts).unwrap();
        let target = 0.0675f64.exp() / 0.6;
        assert!((r.value.value - target).abs() / target < 0.01, "{:?}", r.value);
        assert!((r.median_strategy()[0] - 0.75).abs() < 0.01);

        let checks = supermartingale_check(
            &prob,
            &m,
            &r,
            &paths,
            &[Strategy::Constant(vec![0.2]), Strategy::Optimal],
        )
        .unwrap();
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
        assert!(checks[0].drift.value < 0.0);
    }

    #[test]
    fn sdu_deterministic_matches_closed_form() {
        let spec = SDUSpec::new(0.5, 0.1, 1.0, 1.0.into(), Terminal::Constant(2.0)).unwrap();
        let paths = make_paths(TimeGrid::new(0.0, 1.0, 20).unwrap(), 1, 10, 1).unwrap();
        let r = solve_sdu(&spec, &paths, &LsmcOptions::default()).unwrap();
        let exact = 1.0 + 0.1f64.exp();
        assert!((r.u0.value - exact).abs() / exact < 1e-10, "{}", r.u0.value);
        for (t, u) in r.times.iter().zip(&r.mean_path) {
            assert!((u - (1.0 + (0.1 * (1.0 - t)).exp())).abs() < 1e-10);
        }
        // β = 0 leaves a deterministic terminal unchanged.
        let flat = SDUSpec::new(0.3, 0.0, 0.5, 1.0.into(), Terminal::Constant(3.0)).unwrap();
        assert_eq!(solve_sdu(&flat, &paths, &LsmcOptions::default()).unwrap().u0.value, 3.0);
    }

    #[test]
    fn sdu_rejects_bad_parameters() {
        for (a, b, r) in [(0.0, 0.1, 1.0), (1.2, 0.1, 1.0), (0.5, -0.1, 1.0), (0.5, 0.1, 0.0), (0.5, 0.1, 1.5)] {
            assert!(matches!(
                SDUSpec::new(a, b, r, 1.0.into(), Terminal::Constant(1.0)),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn sdu_linear_case() {
        // α = ρ = 1: U_0 = e^{βT} E ξ − c(e^{βT} − 1).
        let xi = Terminal::exp_affine(1.0, 0.5).plus(1.0);
        let spec = SDUSpec::new(1.0, 0.1, 1.0, 0.5.into(), xi).unwrap();
        let paths = make_paths(TimeGrid::new(0.0, 1.0, 50).unwrap(), 1, 40_000, 5).unwrap();
        let r = solve_sdu(&spec, &paths, &LsmcOptions::default()).unwrap();
        let e = 0.1f64.exp();
        let exact = e * (0.125f64.exp() + 1.0) - 0.5 * (e - 1.0);
        assert!((r.u0.value - exact).abs() <= 3.0 * r.u0.se, "{:?} vs {exact}", r.u0);
    }
}
