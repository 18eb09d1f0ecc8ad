//! Backward least-squares Monte Carlo for `Y_t = ξ + ∫ H(s,Y,Z) ds − ∫ Z dW`.
//!
//! The scheme is the explicit one-step recursion on the fitted values:
//!
//! ```text
//! A_i = E[Y_{i+1} | X_i]
//! Z_i = E[(Y_{i+1} − A_i) ΔW_i | X_i] / h
//! Y_i = max(A_i + h H(t_i, max(A_i, ε), Z_i), ε)
//! ```
//!
//! Conditional expectations are weighted least squares with weights
//! `1/max(Â_{i+1}(X_i), c)²` (`c` one percent of the median of `Y_{i+1}`),
//! so that the fit is accurate in relative terms
//! for terminals spread over several orders of magnitude. Subtracting `A_i`
//! before the `Z` regression is a control variate; it does not change the
//! conditional expectation. The standard error of `Y_0` is taken from the
//! realized path values `ξ + Σ h H_i`.
//!
//! Duality: for the g-class the conjugate is finite only on the parabolic
//! region `b ≤ β − |a−γ|²/(4δ)`, and every feasible control `(a, b)` gives
//! the lower bound `E_{Q^a}[e^{∫b} ξ − ∫ e^{∫b} H*(b, a) ds] ≤ Y_0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::func::TimeFn;
use crate::generators::{Branch, Driver, GeneratorSpec};
use crate::grid::TimeGrid;
use crate::paths::{PathBundle, StateArray, CHUNK};
use crate::solution::{BSDESolution, Diagnostics, NodeFit};
use crate::stats::{median, Estimate};
use crate::terminal::Terminal;

/// Monomials of total degree `≤ degree` in the state, optionally augmented
/// with exponentials `e^{s·x}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBasis {
    dim: usize,
    degree: usize,
    exponents: Vec<Vec<u32>>,
    exps: Vec<Vec<f64>>,
}

fn exponents(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; dim]];
    for total in 1..=degree as u32 {
        let mut cur = vec![0u32; dim];
        fill(&mut out, &mut cur, 0, total);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, k: usize, left: u32) {
    if k + 1 == cur.len() {
        cur[k] = left;
        out.push(cur.clone());
        return;
    }
    for e in (0..=left).rev() {
        cur[k] = e;
        fill(out, cur, k + 1, left - e);
    }
}

impl RegressionBasis {
    pub fn monomials(dim: usize, degree: usize) -> Result<Self> {
        if degree < 1 || dim == 0 {
            return Err(Error::invalid(format!("basis needs degree >= 1 and dim >= 1, got {degree}, {dim}")));
        }
        Ok(RegressionBasis {
            dim,
            degree,
            exponents: exponents(dim, degree),
            exps: Vec::new(),
        })
    }

    /// Adds `e^{slope·x}`.
    pub fn with_exp(mut self, slope: Vec<f64>) -> Result<Self> {
        if slope.len() != self.dim {
            return Err(Error::invalid("exponential slope dimension mismatch"));
        }
        if slope.iter().any(|s| *s != 0.0) && !self.exps.contains(&slope) {
            self.exps.push(slope);
        }
        Ok(self)
    }

    /// Default basis for a terminal: exp-affine terminals (also shifted ones)
    /// get their own exponential `e^{s·x}` added.
    pub fn for_terminal(dim: usize, degree: usize, terminal: &Terminal, augment: bool) -> Result<Self> {
        let b = Self::monomials(dim, degree)?;
        match terminal.exp_slope() {
            Some(slope) if augment && slope.len() == dim => b.with_exp(slope.to_vec()),
            _ => Ok(b),
        }
    }

    pub fn has_exp(&self) -> bool {
        !self.exps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_functions(&self) -> usize {
        self.exponents.len() + self.exps.len()
    }

    pub fn describe(&self) -> String {
        let mut s = format!("monomials(degree {})", self.degree);
        for e in &self.exps {
            s.push_str(&format!(" + exp({e:?}.x)"));
        }
        s
    }

    /// Writes all basis functions at `x` into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let mut j = 0;
        for e in &self.exponents {
            let mut v = 1.0;
            for (xi, &p) in x.iter().zip(e) {
                v *= xi.powi(p as i32);
            }
            out[j] = v;
            j += 1;
        }
        for s in &self.exps {
            out[j] = s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().exp();
            j += 1;
        }
    }

    /// `Σ c_j φ_j(x)`; a one-element coefficient vector is a constant fit.
    pub fn combine(&self, coef: &[f64], x: &[f64]) -> f64 {
        if coef.len() == 1 {
            return coef[0];
        }
        let mut phi = vec![0.0; self.n_functions()];
        self.eval_into(x, &mut phi);
        phi.iter().zip(coef).map(|(a, b)| a * b).sum()
    }
}

/// Knobs of [`solve_lsmc`].
#[derive(Debug, Clone, PartialEq)]
pub struct LsmcOptions {
    /// Fixed-point iterations of `Y = A + hH(Y, Z)` per node; 0 is the
    /// plain explicit step.
    pub n_picard: usize,
    /// Positivity floor; `None` means `1e-6·median(|ξ|)`.
    pub clamp_eps: Option<f64>,
    pub degree: usize,
    /// Add `e^{s·x}` to the basis for exp-affine terminals.
    pub augment_exp: bool,
    /// Largest accepted condition number of the scaled Gram matrix.
    pub max_condition: f64,
    pub weighting: Weighting,
}

/// Least-squares weights of the per-node regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `Relative` when the basis carries an exponential, `Uniform` otherwise.
    Auto,
    /// `1/Â_{i+1}(X_i)²`: relative error, for multiplicative solutions.
    Relative,
    Uniform,
}

impl Weighting {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "auto" => Some(Weighting::Auto),
            "relative" => Some(Weighting::Relative),
            "uniform" => Some(Weighting::Uniform),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Weighting::Auto => "auto",
            Weighting::Relative => "relative",
            Weighting::Uniform => "uniform",
        }
    }
}

impl Default for LsmcOptions {
    fn default() -> Self {
        LsmcOptions {
            n_picard: 0,
            clamp_eps: None,
            degree: 3,
            augment_exp: true,
            max_condition: 1e12,
            weighting: Weighting::Auto,
        }
    }
}

/// Forward state used as regression variable and terminal argument.
#[derive(Debug, Clone, Copy)]
pub enum Forward<'a> {
    /// `X = x0 + W`.
    Brownian(&'a [f64]),
    States(&'a StateArray),
}

fn forward_states<'a>(forward: Forward<'a>, paths: &PathBundle) -> Result<std::borrow::Cow<'a, StateArray>> {
    use std::borrow::Cow;
    match forward {
        Forward::Brownian(x0) => {
            if x0.len() != paths.dim() {
                return Err(Error::invalid("start point dimension differs from the Brownian dimension"));
            }
            Ok(Cow::Owned(paths.brownian(x0)))
        }
        Forward::States(s) => {
            if s.n_paths != paths.n_paths() || s.grid != *paths.grid() {
                return Err(Error::invalid("forward states and paths must share grid and path count"));
            }
            Ok(Cow::Borrowed(s))
        }
    }
}

/// Weighted least squares of several targets on one design matrix.
struct Regression {
    k: usize,
    /// Cholesky factor of the column-scaled Gram matrix.
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    scale: DVector<f64>,
    cond: f64,
}

impl Regression {
    fn new(phi: &[f64], w: &[f64], k: usize, node: usize, max_cond: f64) -> Result<Self> {
        let m = w.len();
        let parts: Vec<Vec<f64>> = (0..m)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|ps| {
                let mut g = vec![0.0; k * k];
                for &p in ps {
                    let row = &phi[p * k..(p + 1) * k];
                    for a in 0..k {
                        let wa = w[p] * row[a];
                        for b in a..k {
                            g[a * k + b] += wa * row[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut g = DMatrix::<f64>::zeros(k, k);
        for part in &parts {
            for a in 0..k {
                for b in a..k {
                    g[(a, b)] += part[a * k + b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        let scale = DVector::from_iterator(k, (0..k).map(|a| {
            let d = g[(a, a)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        }));
        if scale.iter().any(|s| *s == 0.0 || !s.is_finite()) {
            return Err(Error::IllConditioned { node, cond: f64::INFINITY });
        }
        let gs = DMatrix::from_fn(k, k, |a, b| g[(a, b)] * scale[a] * scale[b]);
        let eig = SymmetricEigen::new(gs.clone()).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v.abs())));
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(cond <= max_cond) {
            return Err(Error::IllConditioned { node, cond });
        }
        let chol = gs.cholesky().ok_or(Error::IllConditioned { node, cond })?;
        Ok(Regression { k, chol, scale, cond })
    }

    /// Coefficients for the target `y_p`, given `Σ w φ y` accumulated
    /// from `target(p)`.
    fn fit(&self, phi: &[f64], w: &[f64], target: impl Fn(usize) -> f64 + Sync) -> Vec<f64> {
        let k = self.k;
        let m = w.len();
        let parts: Vec<Vec<f64>> = (0..m)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|ps| {
                let mut r = vec![0.0; k];
                for &p in ps {
                    let wy = w[p] * target(p);
                    for a in 0..k {
                        r[a] += wy * phi[p * k + a];
                    }
                }
                r
            })
            .collect();
        let mut rhs = DVector::<f64>::zeros(k);
        for part in &parts {
            for a in 0..k {
                rhs[a] += part[a];
            }
        }
        let scaled = rhs.component_mul(&self.scale);
        let c = self.chol.solve(&scaled).component_mul(&self.scale);
        c.iter().copied().collect()
    }
}

fn dotk(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Terminal as seen by the positive-coordinate engine.
struct PositiveTerminal<'a> {
    terminal: &'a Terminal,
    sign: f64,
}

impl PositiveTerminal<'_> {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.sign * self.terminal.try_eval(x)?)
    }
}

/// LSMC solution of `BSDE(ξ, H)` for a generator spec. On the negative
/// branch the mirrored problem `−ξ`, `−H(t, −y, −z)` is solved and the
/// result negated.
pub fn solve_lsmc(
    spec: &GeneratorSpec,
    terminal: &Terminal,
    forward: Forward<'_>,
    paths: &PathBundle,
    opts: &LsmcOptions,
) -> Result<BSDESolution> {
    spec.validate(&paths.grid().nodes())?;
    let sign = match spec.branch {
        Branch::Positive => 1.0,
        Branch::Negative => -1.0,
    };
    let mut sol = lsmc_core(spec, &PositiveTerminal { terminal, sign }, terminal, forward, paths, opts)?;
    if spec.delta == 0.5 {
        sol.diagnostics
            .warnings
            .push("delta = 1/2: the S2 stability estimate does not cover this case".into());
    }
    if sign < 0.0 {
        sol.negate();
    }
    Ok(sol)
}

/// LSMC for an arbitrary positive-branch driver (for example a truncation).
pub fn solve_lsmc_driver(
    driver: &dyn Driver,
    terminal: &Terminal,
    forward: Forward<'_>,
    paths: &PathBundle,
    opts: &LsmcOptions,
) -> Result<BSDESolution> {
    lsmc_core(driver, &PositiveTerminal { terminal, sign: 1.0 }, terminal, forward, paths, opts)
}

/// Root of `y = a + step(y)` on `[base, ∞)`, used when the explicit
/// increment exceeds the value it is added to (fitted `A` near the floor).
fn implicit_step(a: f64, base: f64, explicit: f64, step: impl Fn(f64) -> f64) -> Option<f64> {
    let f = |y: f64| y - a - step(y);
    let (mut lo, mut hi) = (base, explicit.max(base));
    if !(f(lo) <= 0.0) {
        return None;
    }
    let mut grow = 0;
    while !(f(hi) >= 0.0) {
        hi *= 2.0;
        grow += 1;
        if grow > 60 || !hi.is_finite() {
            return None;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

fn lsmc_core(
    driver: &dyn Driver,
    xi: &PositiveTerminal<'_>,
    terminal: &Terminal,
    forward: Forward<'_>,
    paths: &PathBundle,
    opts: &LsmcOptions,
) -> Result<BSDESolution> {
    if paths.drift_shift().is_some() {
        return Err(Error::invalid("least squares needs increments under the original measure"));
    }
    if driver.dim() != paths.dim() {
        return Err(Error::invalid(format!(
            "generator has z of dimension {}, paths have dimension {}",
            driver.dim(),
            paths.dim()
        )));
    }
    let states = forward_states(forward, paths)?;
    let grid = *paths.grid();
    let (m, n, d) = (paths.n_paths(), grid.n_steps(), paths.dim());
    let sd = states.dim;
    let h = grid.h();
    let basis = RegressionBasis::for_terminal(sd, opts.degree, terminal, opts.augment_exp)?;
    let kf = basis.n_functions();
    let relative = match opts.weighting {
        Weighting::Auto => basis.has_exp(),
        Weighting::Relative => true,
        Weighting::Uniform => false,
    };

    let mut r: Vec<f64> = (0..m).map(|p| xi.eval(states.get(n, p))).collect::<Result<_>>()?;
    if let Some(p) = r.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Branch(format!(
            "terminal value {} on path {p} is not strictly positive on the solved branch",
            r[p]
        )));
    }
    let eps = match opts.clamp_eps {
        Some(e) if e > 0.0 => e,
        Some(e) => return Err(Error::invalid(format!("clamp epsilon must be positive, got {e}"))),
        None => 1e-6 * median(&r),
    };

    let mut sol = BSDESolution::new(grid, m, d, "lsmc");
    sol.y[n * m..].copy_from_slice(&r);
    let mut diag = Diagnostics {
        clamp_activations: vec![0; n],
        condition_numbers: vec![1.0; n],
        picard_iterations: opts.n_picard,
        residual_norms: vec![0.0; n],
        warnings: Vec::new(),
    };
    let mut fits: Vec<NodeFit> = vec![
        NodeFit {
            y_coef: Vec::new(),
            z_coef: Vec::new(),
            constant_only: true,
        };
        n
    ];
    let mut next_coef: Option<Vec<f64>> = None;
    let mut phi = vec![0.0; m * kf];
    let mut w = vec![0.0; m];
    let mut a = vec![0.0; m];

    for i in (0..n).rev() {
        let node = states.node(i);
        let constant = node.chunks(sd).all(|x| x == &node[..sd]);
        let k = if constant { 1 } else { kf };
        let floor = (1e-2 * median(&sol.y[(i + 1) * m..(i + 2) * m])).max(eps);
        for p in 0..m {
            let x = states.get(i, p);
            let row = &mut phi[p * k..(p + 1) * k];
            if constant {
                row[0] = 1.0;
            } else {
                basis.eval_into(x, row);
            }
            let prev = match &next_coef {
                None => xi.eval(x).unwrap_or(f64::NAN),
                Some(c) => basis.combine(c, x),
            };
            let prev = if prev.is_finite() { prev.max(floor) } else { floor };
            w[p] = if relative { 1.0 / (prev * prev) } else { 1.0 };
        }
        let phi_i = &phi[..m * k];
        let reg = Regression::new(phi_i, &w, k, i, opts.max_condition)?;
        diag.condition_numbers[i] = reg.cond;
        let ynext = sol.y[(i + 1) * m..(i + 2) * m].to_vec();
        // A constant target is reproduced exactly by the constant basis
        // function (the first one) with zero Z.
        let flat = ynext.iter().all(|v| *v == ynext[0]);
        let a_coef = if flat {
            let mut c = vec![0.0; k];
            c[0] = ynext[0];
            c
        } else {
            reg.fit(phi_i, &w, |p| ynext[p])
        };
        let mut res = 0.0;
        for p in 0..m {
            a[p] = dotk(&phi_i[p * k..(p + 1) * k], &a_coef);
            res += (ynext[p] - a[p]).powi(2);
        }
        diag.residual_norms[i] = (res / m as f64).sqrt();
        let mut z_coef = Vec::with_capacity(d);
        for c in 0..d {
            z_coef.push(if flat {
                vec![0.0; k]
            } else {
                reg.fit(phi_i, &w, |p| (ynext[p] - a[p]) * paths.dw(i, p)[c] / h)
            });
        }
        let hfun = driver.at_time(grid.t(i));
        let mut z = vec![0.0; d];
        let mut clamps = 0usize;
        for p in 0..m {
            let row = &phi_i[p * k..(p + 1) * k];
            for c in 0..d {
                z[c] = dotk(row, &z_coef[c]);
            }
            let ap = a[p];
            if ap < eps {
                clamps += 1;
            }
            let base = ap.max(eps);
            let mut y = ap + h * hfun(base, &z);
            if y - ap > base {
                if let Some(v) = implicit_step(ap, base, y, |v| h * hfun(v, &z)) {
                    y = v;
                }
            }
            for _ in 0..opts.n_picard {
                y = ap + h * hfun(y.max(eps), &z);
            }
            if !y.is_finite() {
                return Err(Error::AtPoint {
                    t: grid.t(i),
                    x: states.get(i, p).to_vec(),
                    source: Box::new(Error::NumericDomain(format!("generator value is not finite on path {p}"))),
                });
            }
            if y < eps {
                if ap >= eps {
                    clamps += 1;
                }
                y = eps;
            }
            sol.y[i * m + p] = y;
            sol.z[(i * m + p) * d..(i * m + p + 1) * d].copy_from_slice(&z);
            r[p] += y - ap;
        }
        diag.clamp_activations[i] = clamps;
        next_coef = Some(a_coef.clone());
        fits[i] = NodeFit {
            y_coef: a_coef,
            z_coef,
            constant_only: constant,
        };
    }
    let rate = diag.clamp_rate(m);
    if rate > 0.1 {
        diag.warnings.push(format!(
            "singularity: positivity floor active on {:.1}% of path-nodes",
            100.0 * rate
        ));
    }
    sol.y0_se = Estimate::from_samples(&r).se;
    sol.diagnostics = diag;
    sol.fits = Some(fits);
    sol.basis = Some(basis);
    sol.clamp_eps = eps;
    Ok(sol)
}

impl BSDESolution {
    /// Fitted `E[Y_{i+1} | X_i = x]` (floored at the clamp level) and
    /// `Z_i(x)` from a least-squares solution.
    pub fn fitted(&self, node: usize, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let fits = self.fits.as_ref()?;
        let basis = self.basis.as_ref()?;
        let f = fits.get(node)?;
        let y = basis.combine(&f.y_coef, x);
        let z = f.z_coef.iter().map(|c| basis.combine(c, x)).collect();
        Some((y, z))
    }
}

/// Which Lipschitz approximation a ladder uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ladder {
    /// `H^n = sup_{|a|,|b| ≤ n} (by + a·z − H*(b, a))`.
    Sup,
    /// `H^n = inf H(y′, z′) + n‖(y, z) − (y′, z′)‖`.
    InfConvolution,
}

/// `Y_0` along a truncation ladder.
#[derive(Debug, Clone)]
pub struct LadderReport {
    pub levels: Vec<f64>,
    pub y0: Vec<Estimate>,
    pub solutions: Vec<BSDESolution>,
    /// Indices `k` where `Y_0(n_{k+1}) < Y_0(n_k) − 2 SE`.
    pub violations: Vec<usize>,
}

impl LadderReport {
    pub fn monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Solves with `H^n` for each level of an increasing list (same paths for
/// every level).
pub fn solve_truncated_ladder(
    spec: &GeneratorSpec,
    terminal: &Terminal,
    forward: Forward<'_>,
    paths: &PathBundle,
    levels: &[f64],
    ladder: Ladder,
    opts: &LsmcOptions,
) -> Result<LadderReport> {
    if levels.is_empty() || levels.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("truncation levels must be a nonempty increasing list"));
    }
    if spec.branch != Branch::Positive {
        return Err(Error::Unsupported("truncation ladders are defined on the positive branch".into()));
    }
    spec.validate(&paths.grid().nodes())?;
    let mut solutions = Vec::with_capacity(levels.len());
    for &n in levels {
        let sol = match ladder {
            Ladder::Sup => solve_lsmc_driver(&spec.truncate_sup(n)?, terminal, forward, paths, opts)?,
            Ladder::InfConvolution => solve_lsmc_driver(&spec.truncate_infconv(n)?, terminal, forward, paths, opts)?,
        };
        solutions.push(sol);
    }
    let y0: Vec<Estimate> = solutions.iter().map(|s| s.y0_estimate()).collect();
    let violations = y0
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].value < w[0].value - 2.0 * w[0].se.max(w[1].se))
        .map(|(k, _)| k)
        .collect();
    Ok(LadderReport {
        levels: levels.to_vec(),
        y0,
        solutions,
        violations,
    })
}

/// Subgradient feedback `ā = γ + 2δZ/Y`, `b̄ = β − δ|Z|²/Y²` read off a
/// least-squares solution.
#[derive(Debug, Clone)]
pub struct FeedbackControl {
    spec: GeneratorSpec,
    grid: TimeGrid,
    basis: RegressionBasis,
    fits: Vec<NodeFit>,
    eps: f64,
}

impl FeedbackControl {
    /// `(a, b)` at node `i` and state `x`.
    pub fn at(&self, i: usize, x: &[f64]) -> (Vec<f64>, f64) {
        let f = &self.fits[i];
        let y = self.basis.combine(&f.y_coef, x).max(self.eps);
        let z: Vec<f64> = f.z_coef.iter().map(|c| self.basis.combine(c, x)).collect();
        subgradient(&self.spec, self.grid.t(i), y, &z)
    }
}

fn subgradient(spec: &GeneratorSpec, t: f64, y: f64, z: &[f64]) -> (Vec<f64>, f64) {
    let c = spec.coeffs(t);
    let a = c.gamma.iter().zip(z).map(|(g, zk)| g + 2.0 * spec.delta * zk / y).collect();
    let b = c.beta - spec.delta * z.iter().map(|v| v * v).sum::<f64>() / (y * y);
    (a, b)
}

/// A dual control `(a, b)`.
#[derive(Debug, Clone)]
pub enum DualControl {
    Constant { a: Vec<f64>, b: f64 },
    Deterministic { a: Vec<TimeFn>, b: TimeFn },
    /// Markov feedback; `Q^a` is realized by adding `a h` to the increments
    /// along the simulated state.
    Feedback(FeedbackControl),
    /// Per-path fields on the given paths (`a`: steps × paths × dim,
    /// `b`: steps × paths); `Q^a` is realized by likelihood weights.
    PerPath { a: Vec<f64>, b: Vec<f64> },
}

/// Dual value with the smallest feasibility margin met along the paths
/// (`None` for generators without a closed-form conjugate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualEstimate {
    pub value: Estimate,
    pub margin: Option<f64>,
}

/// Monte Carlo estimate of `E_{Q^a}[e^{∫b} ξ − ∫ e^{∫b} H*(b, a) ds]` with
/// left-point sums, for `X = x0 + W` (a Brownian motion with drift `a`
/// under `Q^a`).
pub fn dual_value(
    spec: &GeneratorSpec,
    terminal: &Terminal,
    control: &DualControl,
    paths: &PathBundle,
    x0: &[f64],
) -> Result<DualEstimate> {
    if spec.branch != Branch::Positive {
        return Err(Error::Unsupported("the dual representation is stated for the positive branch".into()));
    }
    if paths.drift_shift().is_some() {
        return Err(Error::invalid("dual_value applies its own measure change; pass unshifted paths"));
    }
    let d = paths.dim();
    if spec.dim() != d || x0.len() != d {
        return Err(Error::invalid("control, generator and path dimensions must agree"));
    }
    let grid = *paths.grid();
    let (m, n, h) = (paths.n_paths(), grid.n_steps(), grid.h());
    let mut min_margin = f64::INFINITY;
    let mut conj = |i: usize, p: usize, b: f64, a: &[f64]| -> Result<f64> {
        let c = spec.conjugate(grid.t(i), b, a);
        if let Some(mg) = c.margin {
            min_margin = min_margin.min(mg);
        }
        if !c.feasible {
            return Err(Error::Infeasible { node: i, path: p });
        }
        Ok(c.value)
    };
    let mut values = vec![0.0; m];
    match control {
        DualControl::Constant { .. } | DualControl::Deterministic { .. } => {
            let (a_fns, b_fn): (Vec<TimeFn>, TimeFn) = match control {
                DualControl::Constant { a, b } => (a.iter().map(|v| TimeFn::Const(*v)).collect(), TimeFn::Const(*b)),
                DualControl::Deterministic { a, b } => (a.clone(), b.clone()),
                _ => unreachable!(),
            };
            if a_fns.len() != d {
                return Err(Error::invalid("control a has the wrong dimension"));
            }
            let mut disc = vec![0.0f64; n + 1];
            let mut running = 0.0;
            for i in 0..n {
                let t = grid.t(i);
                let a: Vec<f64> = a_fns.iter().map(|f| f.eval(t)).collect();
                let b = b_fn.eval(t);
                let hs = conj(i, 0, b, &a)?;
                running += (disc[i]).exp() * hs * h;
                disc[i + 1] = disc[i] + b * h;
            }
            let shifted = paths.with_drift(a_fns)?;
            let w = shifted.brownian(x0);
            let growth = disc[n].exp();
            for p in 0..m {
                values[p] = growth * terminal.try_eval(w.get(n, p))? - running;
            }
        }
        DualControl::Feedback(fb) => {
            if fb.grid != grid || fb.fits.len() != n {
                return Err(Error::invalid("feedback control was fitted on a different grid"));
            }
            let mut x = vec![0.0; d];
            for p in 0..m {
                x.copy_from_slice(x0);
                let (mut bsum, mut run) = (0.0f64, 0.0);
                for i in 0..n {
                    let (a, b) = fb.at(i, &x);
                    let hs = conj(i, p, b, &a)?;
                    run += bsum.exp() * hs * h;
                    bsum += b * h;
                    let dw = paths.dw(i, p);
                    for k in 0..d {
                        x[k] += a[k] * h + dw[k];
                    }
                }
                values[p] = bsum.exp() * terminal.try_eval(&x)? - run;
            }
        }
        DualControl::PerPath { a, b } => {
            if a.len() != n * m * d || b.len() != n * m {
                return Err(Error::invalid("per-path control fields have the wrong size"));
            }
            let w = paths.brownian(x0);
            for p in 0..m {
                let (mut bsum, mut run, mut log_l) = (0.0f64, 0.0, 0.0f64);
                for i in 0..n {
                    let ai = &a[(i * m + p) * d..(i * m + p + 1) * d];
                    let bi = b[i * m + p];
                    let hs = conj(i, p, bi, ai)?;
                    run += bsum.exp() * hs * h;
                    bsum += bi * h;
                    let dw = paths.dw(i, p);
                    for k in 0..d {
                        log_l += ai[k] * dw[k] - 0.5 * ai[k] * ai[k] * h;
                    }
                }
                values[p] = log_l.exp() * (bsum.exp() * terminal.try_eval(w.get(n, p))? - run);
            }
        }
    }
    if let Some(p) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericDomain(format!("dual value is not finite on path {p}")));
    }
    Ok(DualEstimate {
        value: Estimate::from_samples(&values),
        margin: if min_margin.is_finite() { Some(min_margin) } else { None },
    })
}

fn subgradient_spec_check(sol: &BSDESolution, spec: &GeneratorSpec) -> Result<()> {
    if spec.custom.is_some() || spec.delta <= 0.0 {
        return Err(Error::Unsupported("subgradient controls need a g-class generator with delta > 0".into()));
    }
    if spec.branch != Branch::Positive || !(sol.min_y() > 0.0) {
        return Err(Error::Branch("subgradient controls need a strictly positive solution".into()));
    }
    Ok(())
}

/// Feedback control attaining the dual supremum at the fitted solution.
pub fn subgradient_control(sol: &BSDESolution, spec: &GeneratorSpec) -> Result<DualControl> {
    subgradient_spec_check(sol, spec)?;
    let (Some(fits), Some(basis)) = (&sol.fits, &sol.basis) else {
        return Err(Error::invalid("subgradient feedback needs a least-squares solution with fits"));
    };
    Ok(DualControl::Feedback(FeedbackControl {
        spec: spec.clone(),
        grid: sol.grid,
        basis: basis.clone(),
        fits: fits.clone(),
        eps: sol.clamp_eps.max(f64::MIN_POSITIVE),
    }))
}

/// Subgradient fields `(ā, b̄)` on the solution's own paths, as a
/// [`DualControl::PerPath`].
pub fn subgradient_fields(sol: &BSDESolution, spec: &GeneratorSpec) -> Result<DualControl> {
    subgradient_spec_check(sol, spec)?;
    let (m, n, d) = (sol.n_paths, sol.grid.n_steps(), sol.dim);
    let mut a = vec![0.0; n * m * d];
    let mut b = vec![0.0; n * m];
    for i in 0..n {
        let t = sol.grid.t(i);
        for p in 0..m {
            let (ai, bi) = subgradient(spec, t, sol.y(i, p), sol.z(i, p));
            a[(i * m + p) * d..(i * m + p + 1) * d].copy_from_slice(&ai);
            b[i * m + p] = bi;
        }
    }
    Ok(DualControl::PerPath { a, b })
}
