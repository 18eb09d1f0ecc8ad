//! The power change of variable `u(y) = y^m/m`, `m = 2δ + 1`.
//!
//! If `(Y, Z)` solves the BSDE with generator `δ|z|²/y`, then `Ȳ = u(Y)`
//! has zero drift: `dȲ = Y^{m−1} dY + ½(m−1)Y^{m−2}|Z|² dt` and the drift
//! `−Y^{m−1}δ|Z|²/Y + δY^{m−2}|Z|²` vanishes. Hence
//! `Y_t = v(E[u(ξ) | F_t])` with `v = u⁻¹`. For the g-class with `α ≡ 0`
//! the transformed equation is linear with rate `m β` and drift `γ`, so
//! `Ȳ_t = E_{Q^γ}[e^{m∫_t^T β} u(ξ) | F_t]`, where `W` has drift `γ` under
//! `Q^γ`. With `α ≠ 0` only two-sided bounds are available.

use crate::error::{Error, Result};
use crate::func::TimeFn;
use crate::generators::GeneratorSpec;
use crate::paths::PathBundle;
use crate::quadrature::{gauss_expect, gauss_expect_nd, QuadratureRule};
use crate::solution::BSDESolution;
use crate::stats::Estimate;
use crate::terminal::Terminal;

/// `u(y) = y^m/m` and its inverse `v(w) = (m w)^{1/m}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTransform {
    delta: f64,
    m: f64,
}

impl PowerTransform {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be nonnegative, got {delta}")));
        }
        Ok(PowerTransform { delta, m: 2.0 * delta + 1.0 })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// True when `m` is an odd integer, so `u` extends to the whole line.
    pub fn odd(&self) -> bool {
        (self.m - self.m.round()).abs() < 1e-12 && (self.m.round() as i64) % 2 == 1
    }

    pub fn forward(&self, y: f64) -> Result<f64> {
        if y > 0.0 {
            Ok(y.powf(self.m) / self.m)
        } else if self.odd() {
            Ok(-(-y).powf(self.m) / self.m)
        } else {
            Err(Error::NumericDomain(format!("u({y}) needs y > 0 when 2*delta + 1 = {} is not odd", self.m)))
        }
    }

    pub fn inverse(&self, w: f64) -> Result<f64> {
        if w > 0.0 {
            Ok((self.m * w).powf(1.0 / self.m))
        } else if self.odd() {
            Ok(-(-self.m * w).powf(1.0 / self.m))
        } else {
            Err(Error::NumericDomain(format!(
                "inverse transform at w = {w} needs w > 0 when 2*delta + 1 = {} is not odd",
                self.m
            )))
        }
    }

    /// `dv/dw = (m w)^{1/m − 1}` for `w > 0`.
    pub fn inverse_derivative(&self, w: f64) -> f64 {
        (self.m * w.abs()).powf(1.0 / self.m - 1.0)
    }
}

/// `F(s, t) = exp(∫_s^t ρ)` with `ρ = m(α + β)`, through the antiderivative
/// `R(t) = ∫_{t_ref}^t ρ` so that `F(s,t)F(t,r) = F(s,r)` up to rounding.
#[derive(Debug, Clone)]
pub struct IntegratingFactor {
    rate: TimeFn,
    t_ref: f64,
}

impl IntegratingFactor {
    pub fn new(rate: TimeFn, t_ref: f64) -> Self {
        IntegratingFactor { rate, t_ref }
    }

    /// `ρ = (2δ+1)(α + β)` from a spec.
    pub fn from_spec(spec: &GeneratorSpec, t_ref: f64) -> Self {
        let m = spec.m();
        let rate = match (spec.alpha.as_const(), spec.beta.as_const()) {
            (Some(a), Some(b)) => TimeFn::Const(m * (a + b)),
            _ => {
                let s = spec.clone();
                TimeFn::native(move |t| m * (s.alpha.eval(t) + s.beta.eval(t)))
            }
        };
        IntegratingFactor { rate, t_ref }
    }

    pub fn rate(&self) -> &TimeFn {
        &self.rate
    }

    pub fn antiderivative(&self, t: f64) -> f64 {
        self.rate.integral(self.t_ref, t)
    }

    pub fn factor(&self, s: f64, t: f64) -> f64 {
        (self.antiderivative(t) - self.antiderivative(s)).exp()
    }
}

/// How conditional expectations of `f(W_T)` are evaluated.
#[derive(Debug, Clone)]
pub enum CondExpectation {
    /// Gauss–Hermite quadrature over the remaining increment (tensor rule in
    /// `d > 1`).
    Quadrature(QuadratureRule),
    /// Nested Monte Carlo with `inner` fresh samples per path and node, all
    /// nodes sharing the same standard normals.
    NestedMc { inner: usize, seed: u64 },
}

impl CondExpectation {
    pub fn quadrature(n: usize) -> Result<Self> {
        Ok(CondExpectation::Quadrature(QuadratureRule::gauss_hermite(n)?))
    }
}

/// Evaluates `E[g(w + offset + √var·G)]`.
struct Conditional<'a> {
    mode: &'a CondExpectation,
    normals: Vec<f64>,
    dim: usize,
}

impl<'a> Conditional<'a> {
    fn new(mode: &'a CondExpectation, dim: usize) -> Self {
        let normals = match mode {
            CondExpectation::Quadrature(_) => Vec::new(),
            CondExpectation::NestedMc { inner, seed } => {
                use rand::SeedableRng;
                use rand_distr::{Distribution, StandardNormal};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                (0..inner * dim).map(|_| StandardNormal.sample(&mut rng)).collect()
            }
        };
        Conditional { mode, normals, dim }
    }

    fn expect(&self, g: &dyn Fn(&[f64]) -> f64, mean: &[f64], var: f64) -> Result<f64> {
        if var <= 0.0 {
            let v = g(mean);
            return if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NumericDomain(format!("terminal transform is {v} at {mean:?}")))
            };
        }
        match self.mode {
            CondExpectation::Quadrature(rule) => {
                if self.dim == 1 {
                    gauss_expect(|x| g(&[mean[0] + x]), var, rule)
                } else {
                    gauss_expect_nd(g, mean, var, rule)
                }
            }
            CondExpectation::NestedMc { inner, .. } => {
                let s = var.sqrt();
                let mut x = vec![0.0; self.dim];
                let mut acc = 0.0;
                for j in 0..*inner {
                    for k in 0..self.dim {
                        x[k] = mean[k] + s * self.normals[j * self.dim + k];
                    }
                    acc += g(&x);
                }
                let v = acc / *inner as f64;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NumericDomain("nested Monte Carlo average is not finite".into()))
                }
            }
        }
    }
}

fn terminal_sign(terminal: &Terminal, paths: &PathBundle) -> Result<f64> {
    let w = paths.brownian(&vec![0.0; paths.dim()]);
    let n = paths.grid().n_steps();
    let xi: Vec<f64> = (0..paths.n_paths())
        .map(|p| terminal.try_eval(w.get(n, p)))
        .collect::<Result<_>>()?;
    Terminal::sign_of(&xi)
}

/// Shared engine: `Y_t = v(F(t,T)·E[u(ξ) | W_t] + A_t)` where the
/// conditional law of `W_T` has mean `W_t + offset(t)` and variance `T − t`.
struct ExactSolver<'a> {
    pt: PowerTransform,
    terminal: &'a Terminal,
    paths: &'a PathBundle,
    /// `offset(t_i)` per node and component.
    offsets: Vec<Vec<f64>>,
    /// Multiplicative factor `F(t_i, T)`.
    factors: Vec<f64>,
    /// Additive term in the transformed scale.
    additive: Vec<f64>,
}

impl ExactSolver<'_> {
    fn solve(&self, mode: &CondExpectation, method: &'static str) -> Result<BSDESolution> {
        let grid = *self.paths.grid();
        let (n_paths, dim) = (self.paths.n_paths(), self.paths.dim());
        let sign = terminal_sign(self.terminal, self.paths)?;
        if sign < 0.0 && !self.pt.odd() {
            return Err(Error::Branch("negative terminal needs 2*delta + 1 odd".into()));
        }
        let pt = self.pt;
        let term = self.terminal;
        let ubar = move |x: &[f64]| pt.forward(term.eval(x)).unwrap_or(f64::NAN);
        let cond = Conditional::new(mode, dim);
        let w = self.paths.brownian(&vec![0.0; dim]);
        let mut sol = BSDESolution::new(grid, n_paths, dim, method);
        let n = grid.n_steps();
        let closed_z = match self.terminal {
            Terminal::Constant(_) => Some(vec![0.0; dim]),
            Terminal::ExpAffine { slope, .. } if slope.len() == dim => Some(slope.clone()),
            _ => None,
        };
        let value_at = |i: usize, x: &[f64]| -> Result<f64> {
            let tau = grid.horizon() - grid.t(i);
            let mean: Vec<f64> = x.iter().zip(&self.offsets[i]).map(|(a, b)| a + b).collect();
            let e = cond.expect(&ubar, &mean, tau)?;
            pt.inverse(self.factors[i] * e + self.additive[i])
        };
        for i in 0..=n {
            for p in 0..n_paths {
                let x = w.get(i, p);
                let y = if i == n { self.terminal.try_eval(x)? } else { value_at(i, x)? };
                sol.y[i * n_paths + p] = y;
                if i == n {
                    continue;
                }
                let zo = (i * n_paths + p) * dim;
                match &closed_z {
                    Some(s) => {
                        for k in 0..dim {
                            sol.z[zo + k] = s[k] * y;
                        }
                    }
                    None => {
                        let eps = 1e-4;
                        let mut xp = x.to_vec();
                        for k in 0..dim {
                            xp[k] = x[k] + eps;
                            let up = value_at(i, &xp)?;
                            xp[k] = x[k] - eps;
                            let dn = value_at(i, &xp)?;
                            xp[k] = x[k];
                            sol.z[zo + k] = (up - dn) / (2.0 * eps);
                        }
                    }
                }
            }
        }
        Ok(sol)
    }
}

/// Exact solution of the BSDE with generator `δ|z|²/y` and `ξ = f(W_T)`.
pub fn solve_canonical(
    delta: f64,
    terminal: &Terminal,
    paths: &PathBundle,
    mode: &CondExpectation,
) -> Result<BSDESolution> {
    let pt = PowerTransform::new(delta)?;
    let n = paths.grid().n_nodes();
    ExactSolver {
        pt,
        terminal,
        paths,
        offsets: vec![vec![0.0; paths.dim()]; n],
        factors: vec![1.0; n],
        additive: vec![0.0; n],
    }
    .solve(mode, "transform-exact")
}

fn gamma_offsets(spec: &GeneratorSpec, paths: &PathBundle) -> Vec<Vec<f64>> {
    let grid = paths.grid();
    (0..grid.n_nodes())
        .map(|i| spec.gamma.iter().map(|g| g.integral(grid.t(i), grid.horizon())).collect())
        .collect()
}

fn alpha_is_zero(spec: &GeneratorSpec, paths: &PathBundle) -> bool {
    spec.alpha.is_zero() || paths.grid().nodes().iter().all(|&t| spec.alpha.eval(t) == 0.0)
}

/// Exact solution for the g-class with `α ≡ 0`.
pub fn solve_gclass_exact(
    spec: &GeneratorSpec,
    terminal: &Terminal,
    paths: &PathBundle,
    mode: &CondExpectation,
) -> Result<BSDESolution> {
    if spec.custom.is_some() {
        return Err(Error::Unsupported("exact solution needs a g-class generator without a custom H".into()));
    }
    if !alpha_is_zero(spec, paths) {
        return Err(Error::Unsupported(
            "exact solution needs alpha = 0; use the least-squares solver or sandwich bounds".into(),
        ));
    }
    if spec.dim() != paths.dim() {
        return Err(Error::invalid("gamma dimension differs from the Brownian dimension"));
    }
    let grid = *paths.grid();
    let f = IntegratingFactor::from_spec(spec, grid.t0());
    ExactSolver {
        pt: PowerTransform::new(spec.delta)?,
        terminal,
        paths,
        offsets: gamma_offsets(spec, paths),
        factors: grid.nodes().iter().map(|&t| f.factor(t, grid.horizon())).collect(),
        additive: vec![0.0; grid.n_nodes()],
    }
    .solve(mode, "transform-exact")
}

/// Measure change used by [`gclass_y0_mc`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureChange {
    /// Add `γ` to the increments.
    DriftShift,
    /// Reweight by `exp(Σ γ·ΔW − ½Σ|γ|²h)`.
    LikelihoodWeights,
}

/// Monte Carlo `Y_0` for the g-class with `α ≡ 0` from paths under the
/// original measure, with a delta-method standard error.
pub fn gclass_y0_mc(
    spec: &GeneratorSpec,
    terminal: &Terminal,
    paths: &PathBundle,
    change: MeasureChange,
) -> Result<Estimate> {
    if !alpha_is_zero(spec, paths) || spec.custom.is_some() {
        return Err(Error::Unsupported("exact Monte Carlo needs a g-class generator with alpha = 0".into()));
    }
    let grid = *paths.grid();
    let pt = PowerTransform::new(spec.delta)?;
    let fac = IntegratingFactor::from_spec(spec, grid.t0()).factor(grid.t0(), grid.horizon());
    let d = paths.dim();
    let n = grid.n_steps();
    let h = grid.h();
    let shifted;
    let bundle = match change {
        MeasureChange::DriftShift => {
            shifted = paths.with_drift(spec.gamma.clone())?;
            &shifted
        }
        MeasureChange::LikelihoodWeights => paths,
    };
    let w = bundle.brownian(&vec![0.0; d]);
    let gam: Vec<Vec<f64>> = (0..n).map(|i| spec.coeffs(grid.t(i)).gamma).collect();
    let mut samples = Vec::with_capacity(paths.n_paths());
    for p in 0..paths.n_paths() {
        let mut v = fac * pt.forward(terminal.try_eval(w.get(n, p))?)?;
        if change == MeasureChange::LikelihoodWeights {
            let mut log_l = 0.0;
            for i in 0..n {
                let dw = paths.dw(i, p);
                for k in 0..d {
                    log_l += gam[i][k] * dw[k] - 0.5 * gam[i][k] * gam[i][k] * h;
                }
            }
            v *= log_l.exp();
        }
        samples.push(v);
    }
    let e = Estimate::from_samples(&samples);
    Ok(e.map(|w| pt.inverse(w).unwrap_or(f64::NAN), |w| pt.inverse_derivative(w)))
}

/// Lower and upper solutions per node and path (untransformed scale).
#[derive(Debug, Clone)]
pub struct SandwichBounds {
    pub lower: BSDESolution,
    pub upper: BSDESolution,
}

/// Bounds `v(Y′) ≤ Y ≤ v(Y″)` with `Y′_t = E_{Q^γ}[u(ξ) | F_t]` and
/// `Y″_t = E_{Q^γ}[F(t,T) u(ξ) + ∫_t^T m α_s F(t,s) ds | F_t]`, where `Y″`
/// solves the linear equation with generator `m(α + (α+β)y) + γ·z`.
pub fn sandwich_bounds(
    spec: &GeneratorSpec,
    terminal: &Terminal,
    paths: &PathBundle,
    mode: &CondExpectation,
) -> Result<SandwichBounds> {
    if spec.dim() != paths.dim() {
        return Err(Error::invalid("gamma dimension differs from the Brownian dimension"));
    }
    let grid = *paths.grid();
    let pt = PowerTransform::new(spec.delta)?;
    let f = IntegratingFactor::from_spec(spec, grid.t0());
    let m = spec.m();
    let tn = grid.horizon();
    let additive: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&t| match (spec.alpha.as_const(), f.rate().as_const()) {
            (Some(a), Some(rho)) if rho.abs() > 1e-12 => m * a * ((rho * (tn - t)).exp() - 1.0) / rho,
            (Some(a), Some(_)) => m * a * (tn - t),
            _ => {
                let (alpha, ff) = (spec.alpha.clone(), f.clone());
                TimeFn::native(move |s| m * alpha.eval(s) * ff.factor(t, s)).integral(t, tn)
            }
        })
        .collect();
    let offsets = gamma_offsets(spec, paths);
    let n = grid.n_nodes();
    let lower = ExactSolver {
        pt,
        terminal,
        paths,
        offsets: offsets.clone(),
        factors: vec![1.0; n],
        additive: vec![0.0; n],
    }
    .solve(mode, "lower-bound")?;
    let upper = ExactSolver {
        pt,
        terminal,
        paths,
        offsets,
        factors: grid.nodes().iter().map(|&t| f.factor(t, tn)).collect(),
        additive,
    }
    .solve(mode, "upper-bound")?;
    Ok(SandwichBounds { lower, upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::paths::make_paths;

    fn quad() -> CondExpectation {
        CondExpectation::quadrature(40).unwrap()
    }

    #[test]
    fn power_transform_examples() {
        let pt = PowerTransform::new(1.0).unwrap();
        assert!((pt.forward(2.0).unwrap() - 8.0 / 3.0).abs() < 1e-15);
        assert!((pt.inverse(9.0).unwrap() - 3.0).abs() < 1e-14);
        assert!((pt.inverse(-9.0).unwrap() + 3.0).abs() < 1e-14);
        let id = PowerTransform::new(0.0).unwrap();
        assert_eq!(id.forward(1.7).unwrap(), 1.7);
        assert_eq!(id.inverse(-1.7).unwrap(), -1.7);
        let half = PowerTransform::new(0.25).unwrap();
        assert!(half.inverse(-1.0).is_err());
        assert!(half.forward(-1.0).is_err());
    }

    #[test]
    fn integrating_factor_is_multiplicative() {
        let f = IntegratingFactor::new(TimeFn::parse("1 + sin(3*t)").unwrap(), 0.0);
        assert_eq!(f.factor(0.4, 0.4), 1.0);
        let lhs = f.factor(0.1, 0.5) * f.factor(0.5, 0.9);
        assert!((lhs / f.factor(0.1, 0.9) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_lognormal() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let paths = make_paths(grid, 1, 20, 1).unwrap();
        let xi = Terminal::exp_affine(1.0, 1.0);
        let sol = solve_canonical(1.0, &xi, &paths, &quad()).unwrap();
        assert!((sol.y0() / 1.5f64.exp() - 1.0).abs() < 1e-12);
        let w = paths.brownian(&[0.0]);
        for i in 0..4 {
            for p in 0..20 {
                let exact = (w.get(i, p)[0] + 1.5 * (1.0 - grid.t(i))).exp();
                assert!((sol.y(i, p) / exact - 1.0).abs() < 1e-11);
                assert!((sol.z(i, p)[0] - sol.y(i, p)).abs() < 1e-12 * exact);
            }
        }
        let half = solve_canonical(0.5, &xi, &paths, &quad()).unwrap();
        assert!((half.y0() - 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_z_for_expr_terminals() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let paths = make_paths(grid, 1, 10, 2).unwrap();
        let xi = Terminal::parse("exp(x)", 1).unwrap();
        let sol = solve_canonical(1.0, &xi, &paths, &quad()).unwrap();
        for i in 0..4 {
            for p in 0..10 {
                assert!((sol.z(i, p)[0] / sol.y(i, p) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_terminal_is_constant() {
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let paths = make_paths(grid, 1, 5, 2).unwrap();
        let sol = solve_canonical(1.0, &Terminal::Constant(2.5), &paths, &quad()).unwrap();
        assert!(sol.y.iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert!(sol.z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mixed_sign_terminal_is_rejected() {
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let paths = make_paths(grid, 1, 50, 2).unwrap();
        let xi = Terminal::parse("x", 1).unwrap();
        assert!(matches!(solve_canonical(1.0, &xi, &paths, &quad()), Err(Error::Branch(_))));
    }

    #[test]
    fn negative_terminal_with_odd_power() {
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let paths = make_paths(grid, 1, 5, 2).unwrap();
        let xi = Terminal::ExpAffine { scale: -1.0, slope: vec![1.0] };
        let sol = solve_canonical(1.0, &xi, &paths, &quad()).unwrap();
        assert!((sol.y0() + 1.5f64.exp()).abs() < 1e-11);
    }

    #[test]
    fn gclass_exact_examples() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let paths = make_paths(grid, 1, 5, 4).unwrap();
        let spec = GeneratorSpec::gclass(1.0, 0.0.into(), 0.2.into(), vec![0.0.into()]);
        let sol = solve_gclass_exact(&spec, &Terminal::Constant(1.7), &paths, &quad()).unwrap();
        assert!((sol.y0() - 1.7 * 0.2f64.exp()).abs() < 1e-12);
        let with_alpha = GeneratorSpec::gclass(1.0, 0.1.into(), 0.0.into(), vec![0.0.into()]);
        assert!(matches!(
            solve_gclass_exact(&with_alpha, &Terminal::Constant(1.0), &paths, &quad()),
            Err(Error::Unsupported(_))
        ));
        // gamma = 0.5: E_Q e^{3 W_1} = e^{1.5 + 4.5}, so Y_0 = e^2
        let g = GeneratorSpec::gclass(1.0, 0.0.into(), 0.0.into(), vec![0.5.into()]);
        let sol = solve_gclass_exact(&g, &Terminal::exp_affine(1.0, 1.0), &paths, &quad()).unwrap();
        assert!((sol.y0() / 2f64.exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sandwich_collapses_without_alpha_and_beta() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let paths = make_paths(grid, 1, 5, 4).unwrap();
        let spec = GeneratorSpec::canonical(1.0);
        let b = sandwich_bounds(&spec, &Terminal::exp_affine(1.0, 1.0), &paths, &quad()).unwrap();
        for (l, u) in b.lower.y.iter().zip(&b.upper.y) {
            assert!((l - u).abs() < 1e-12 * l.abs());
        }
    }

    #[test]
    fn sandwich_upper_bound_constant_alpha() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let paths = make_paths(grid, 1, 3, 4).unwrap();
        let spec = GeneratorSpec::gclass(1.0, 0.1.into(), 0.0.into(), vec![0.0.into()]);
        let b = sandwich_bounds(&spec, &Terminal::Constant(1.0), &paths, &quad()).unwrap();
        let e3 = 0.3f64.exp();
        let transformed_upper = e3 / 3.0 + (e3 - 1.0);
        let expected = (3.0 * transformed_upper).powf(1.0 / 3.0);
        assert!((b.upper.y0() - expected).abs() < 1e-12);
        assert!((b.lower.y0() - 1.0).abs() < 1e-12);
        // true solution of Y' = -(0.1 + 0) is 1.1 at t = 0
        assert!(b.lower.y0() <= 1.1 && 1.1 <= b.upper.y0());
    }

    #[test]
    fn two_measure_changes_agree() {
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let paths = make_paths(grid, 1, 200_000, 9).unwrap();
        let g = GeneratorSpec::gclass(1.0, 0.0.into(), 0.0.into(), vec![0.5.into()]);
        let xi = Terminal::exp_affine(1.0, 1.0);
        let a = gclass_y0_mc(&g, &xi, &paths, MeasureChange::DriftShift).unwrap();
        let b = gclass_y0_mc(&g, &xi, &paths, MeasureChange::LikelihoodWeights).unwrap();
        let se = (a.se * a.se + b.se * b.se).sqrt();
        assert!((a.value - b.value).abs() <= 3.0 * se, "{a:?} {b:?}");
        assert!(a.agrees(2f64.exp(), 4.0, 0.0), "{a:?}");
    }
}
