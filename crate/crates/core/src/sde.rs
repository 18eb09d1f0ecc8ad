//! Forward diffusions `dX = μ(t,X) dt + σ(t,X) dW`, optionally reflected at
//! the boundary of a convex domain.
//!
//! The reflected scheme is projected Euler: the predictor
//! `P = X_i + μh + σΔW_i` is mapped to the closest point of the closed
//! domain and the displacement `|X_{i+1} − P|` is added to the local time
//! `K`. For intervals and balls the displacement points along the inward
//! normal `∇Φ`, which is the direction required of `dK`.

use crate::error::{Error, Result};
use crate::func::FieldFn;
use crate::grid::TimeGrid;
use crate::paths::{PathBundle, StateArray};
use crate::stats::energy_distance;

/// Closed convex domain with a closed-form projection.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexDomain {
    Interval { lo: f64, hi: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl ConvexDomain {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::invalid(format!("interval needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(ConvexDomain::Interval { lo, hi })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || center.is_empty() {
            return Err(Error::invalid("ball needs a positive radius and a center"));
        }
        Ok(ConvexDomain::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexDomain::Interval { .. } => 1,
            ConvexDomain::Ball { center, .. } => center.len(),
        }
    }

    /// `Φ > 0` inside, `Φ = 0` on the boundary, `|∇Φ| = 1` there.
    pub fn phi(&self, x: &[f64]) -> f64 {
        match self {
            ConvexDomain::Interval { lo, hi } => (x[0] - lo).min(hi - x[0]),
            ConvexDomain::Ball { center, radius } => radius - dist(x, center),
        }
    }

    /// Inward unit normal at a boundary point (`∇Φ`).
    pub fn inward_normal(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ConvexDomain::Interval { lo, hi } => {
                if (x[0] - lo).abs() <= (hi - x[0]).abs() {
                    vec![1.0]
                } else {
                    vec![-1.0]
                }
            }
            ConvexDomain::Ball { center, .. } => {
                let r = dist(x, center);
                x.iter().zip(center).map(|(a, c)| (c - a) / r).collect()
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            ConvexDomain::Interval { lo, hi } => *lo <= x[0] && x[0] <= *hi,
            ConvexDomain::Ball { center, radius } => dist(x, center) <= *radius * (1.0 + BALL_TOL),
        }
    }

    /// True for points strictly inside.
    pub fn interior(&self, x: &[f64]) -> bool {
        match self {
            ConvexDomain::Interval { lo, hi } => *lo < x[0] && x[0] < *hi,
            ConvexDomain::Ball { center, radius } => dist(x, center) < *radius * (1.0 - BALL_TOL),
        }
    }

    /// Closest point of the closed domain, written into `x`.
    pub fn project_in_place(&self, x: &mut [f64]) {
        match self {
            ConvexDomain::Interval { lo, hi } => x[0] = x[0].clamp(*lo, *hi),
            ConvexDomain::Ball { center, radius } => {
                let r = dist(x, center);
                if r > *radius {
                    for (a, c) in x.iter_mut().zip(center) {
                        *a = c + (*a - c) * radius / r;
                    }
                }
            }
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        self.project_in_place(&mut v);
        v
    }
}

/// Radial projection lands on the sphere only up to rounding.
const BALL_TOL: f64 = 1e-12;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Drift, volatility (row-major `d × d`) and optional reflecting domain.
#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub dim: usize,
    pub drift: Vec<FieldFn>,
    pub vol: Vec<FieldFn>,
    pub domain: Option<ConvexDomain>,
}

/// Blow-up threshold on `|X|`.
pub const BLOW_UP: f64 = 1e12;

impl DiffusionSpec {
    pub fn new(dim: usize, drift: Vec<FieldFn>, vol: Vec<FieldFn>) -> Result<Self> {
        if dim == 0 || drift.len() != dim || vol.len() != dim * dim {
            return Err(Error::invalid(format!(
                "diffusion of dimension {dim} needs {dim} drift and {} volatility entries",
                dim * dim
            )));
        }
        Ok(DiffusionSpec { dim, drift, vol, domain: None })
    }

    /// One-dimensional diffusion.
    pub fn scalar(drift: FieldFn, vol: FieldFn) -> Self {
        DiffusionSpec {
            dim: 1,
            drift: vec![drift],
            vol: vec![vol],
            domain: None,
        }
    }

    /// Standard Brownian motion in dimension `dim`.
    pub fn brownian(dim: usize) -> Self {
        let mut vol = vec![FieldFn::Const(0.0); dim * dim];
        for k in 0..dim {
            vol[k * dim + k] = FieldFn::Const(1.0);
        }
        DiffusionSpec {
            dim,
            drift: vec![FieldFn::Const(0.0); dim],
            vol,
            domain: None,
        }
    }

    pub fn with_domain(mut self, domain: ConvexDomain) -> Result<Self> {
        if domain.dim() != self.dim {
            return Err(Error::invalid("domain dimension differs from the diffusion dimension"));
        }
        self.domain = Some(domain);
        Ok(self)
    }

    /// Constant coefficients `(μ, σ)` when every entry is constant.
    pub fn constant_coefficients(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mu: Option<Vec<f64>> = self.drift.iter().map(FieldFn::as_const).collect();
        let sig: Option<Vec<f64>> = self.vol.iter().map(FieldFn::as_const).collect();
        Some((mu?, sig?))
    }

    /// Sampled `max (|μ| + |σ|)/(1 + |x|)` over `x = ±r·e_k`, `r ∈ [0, radius]`.
    pub fn growth_constant(&self, times: &[f64], radius: f64) -> f64 {
        let mut c = 0.0f64;
        let mut x = vec![0.0; self.dim];
        for &t in times {
            for k in 0..self.dim {
                for j in -20..=20 {
                    x.iter_mut().for_each(|v| *v = 0.0);
                    x[k] = radius * j as f64 / 20.0;
                    let m: f64 = self.drift.iter().map(|f| f.eval(t, &x).powi(2)).sum::<f64>().sqrt();
                    let s: f64 = self.vol.iter().map(|f| f.eval(t, &x).powi(2)).sum::<f64>().sqrt();
                    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    c = c.max((m + s) / (1.0 + nx));
                }
            }
        }
        c
    }

    /// Rejects coefficients that are undefined on the lattice or grow
    /// visibly faster than linearly (the sampled constant on `|x| ≤ 100`
    /// exceeding twice the one on `|x| ≤ 10` plus one).
    pub fn validate(&self, times: &[f64]) -> Result<()> {
        let c10 = self.growth_constant(times, 10.0);
        let c100 = self.growth_constant(times, 100.0);
        if !c10.is_finite() || !c100.is_finite() {
            return Err(Error::invalid("drift or volatility is not finite on the test lattice"));
        }
        if c100 > 2.0 * c10 + 1.0 {
            return Err(Error::invalid(format!(
                "drift/volatility grow faster than linearly (sampled constants {c10:.3} on |x|<=10, {c100:.3} on |x|<=100)"
            )));
        }
        Ok(())
    }

    #[inline]
    fn step(&self, t: f64, x: &[f64], dw: &[f64], h: f64, out: &mut [f64]) {
        let d = self.dim;
        if d == 1 {
            out[0] = x[0] + self.drift[0].eval(t, x) * h + self.vol[0].eval(t, x) * dw[0];
            return;
        }
        for k in 0..d {
            let mut v = x[k] + self.drift[k].eval(t, x) * h;
            for j in 0..d {
                v += self.vol[k * d + j].eval(t, x) * dw[j];
            }
            out[k] = v;
        }
    }
}

fn check_start(grid: &TimeGrid, t0: f64, spec: &DiffusionSpec, x0: &[f64], paths: &PathBundle) -> Result<()> {
    if (grid.t0() - t0).abs() > 1e-12 * (1.0 + t0.abs()) {
        return Err(Error::invalid(format!(
            "paths start at t = {}, simulation requested from t = {t0}",
            grid.t0()
        )));
    }
    if x0.len() != spec.dim || paths.dim() != spec.dim {
        return Err(Error::invalid("state, Brownian and diffusion dimensions must agree"));
    }
    Ok(())
}

/// Euler–Maruyama states on every node of the bundle's grid.
pub fn euler(spec: &DiffusionSpec, t0: f64, x0: &[f64], paths: &PathBundle) -> Result<StateArray> {
    if spec.domain.is_some() {
        return Err(Error::invalid("diffusion has a reflecting domain; use euler_reflected"));
    }
    check_start(paths.grid(), t0, spec, x0, paths)?;
    Ok(simulate(spec, 0, x0, paths, false)?.states)
}

/// States, local time and boundary-contact flags of a reflected diffusion.
#[derive(Debug, Clone)]
pub struct ReflectedPath {
    pub states: StateArray,
    /// Cumulative local time `K`, `n_nodes × n_paths`, node-major.
    pub local_time: Vec<f64>,
    /// True where the state sits on the boundary after a projection.
    pub contact: Vec<bool>,
}

impl ReflectedPath {
    pub fn k(&self, node: usize, path: usize) -> f64 {
        self.local_time[node * self.states.n_paths + path]
    }
}

/// Projected Euler scheme in the spec's domain.
pub fn euler_reflected(spec: &DiffusionSpec, t0: f64, x0: &[f64], paths: &PathBundle) -> Result<ReflectedPath> {
    let domain = spec
        .domain
        .as_ref()
        .ok_or_else(|| Error::invalid("euler_reflected needs a domain"))?;
    check_start(paths.grid(), t0, spec, x0, paths)?;
    if !domain.contains(x0) {
        return Err(Error::invalid(format!("start point {x0:?} lies outside the domain")));
    }
    simulate(spec, 0, x0, paths, true)
}

/// Simulates from node `start` (states before it are frozen at `x0`).
fn simulate(spec: &DiffusionSpec, start: usize, x0: &[f64], paths: &PathBundle, reflect: bool) -> Result<ReflectedPath> {
    let grid = *paths.grid();
    let (n, d) = (paths.n_paths(), spec.dim);
    let mut states = StateArray::zeros(grid, n, d);
    let mut local_time = if reflect { vec![0.0; grid.n_nodes() * n] } else { Vec::new() };
    let mut contact = if reflect { vec![false; grid.n_nodes() * n] } else { Vec::new() };
    let h = grid.h();
    let domain = if reflect { spec.domain.as_ref() } else { None };
    for i in 0..=start.min(grid.n_steps()) {
        for p in 0..n {
            states.get_mut(i, p).copy_from_slice(x0);
        }
    }
    let mut next = vec![0.0; d];
    let mut pred = vec![0.0; d];
    for i in start..grid.n_steps() {
        let t = grid.t(i);
        for p in 0..n {
            spec.step(t, states.get(i, p), paths.dw(i, p), h, &mut pred);
            next.copy_from_slice(&pred);
            if let Some(dom) = domain {
                dom.project_in_place(&mut next);
                let dk = dist(&next, &pred);
                let o = (i + 1) * n + p;
                local_time[o] = local_time[i * n + p] + dk;
                contact[o] = dk > 0.0 || !dom.interior(&next);
            }
            let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm <= BLOW_UP) {
                return Err(Error::BlowUp { path: p, step: i });
            }
            states.get_mut(i + 1, p).copy_from_slice(&next);
        }
    }
    Ok(ReflectedPath { states, local_time, contact })
}

/// Euler (or projected Euler when the spec has a domain) started at the
/// first grid node `≥ t_start`, with the state frozen at `x0` before it.
pub fn simulate_from(spec: &DiffusionSpec, t_start: f64, x0: &[f64], paths: &PathBundle) -> Result<ReflectedPath> {
    let grid = paths.grid();
    if t_start < grid.t0() - 1e-12 || t_start > grid.horizon() + 1e-12 {
        return Err(Error::invalid(format!("start time {t_start} outside the grid")));
    }
    let k = (((t_start - grid.t0()) / grid.h()) - 1e-9).ceil().max(0.0) as usize;
    if let Some(dom) = &spec.domain {
        if !dom.contains(x0) {
            return Err(Error::invalid(format!("start point {x0:?} lies outside the domain")));
        }
    }
    simulate(spec, k.min(grid.n_steps()), x0, paths, spec.domain.is_some())
}

/// Gap between the flow started at `(tⁿ, xⁿ)` and the base flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow {
    pub t: f64,
    pub x: Vec<f64>,
    /// `max_i (mean_p |Xⁿ_i − X_i|²)^{1/2}`.
    pub strong_gap: f64,
    /// Energy distance between the terminal samples.
    pub law_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowReport {
    pub rows: Vec<FlowRow>,
}

impl FlowReport {
    /// True when each gap is at most `(1 + rel)` times the previous one
    /// plus `abs`.
    pub fn decreasing(&self, strong: bool, rel: f64, abs: f64) -> bool {
        let g: Vec<f64> = self
            .rows
            .iter()
            .map(|r| if strong { r.strong_gap } else { r.law_gap })
            .collect();
        g.windows(2).all(|w| w[1] <= w[0] * (1.0 + rel) + abs)
    }
}

/// Common-random-number comparison of flows started along a sequence
/// `(tⁿ, xⁿ) → (t, x)`, all driven by the same increments.
pub fn flow_continuity_test(
    spec: &DiffusionSpec,
    base: (f64, &[f64]),
    sequence: &[(f64, Vec<f64>)],
    paths: &PathBundle,
) -> Result<FlowReport> {
    let grid = *paths.grid();
    let (n, d) = (paths.n_paths(), spec.dim);
    let x_base = simulate_from(spec, base.0, base.1, paths)?.states;
    let last = grid.n_steps();
    let mut rows = Vec::with_capacity(sequence.len());
    for (t, x) in sequence {
        let xs = simulate_from(spec, *t, x, paths)?.states;
        let mut strong = 0.0f64;
        for i in 0..=last {
            let mut s = 0.0;
            for p in 0..n {
                s += dist(xs.get(i, p), x_base.get(i, p)).powi(2);
            }
            strong = strong.max((s / n as f64).sqrt());
        }
        let law = energy_distance(xs.node(last), x_base.node(last), d, 2000);
        rows.push(FlowRow {
            t: *t,
            x: x.clone(),
            strong_gap: strong,
            law_gap: law.max(0.0),
        });
    }
    Ok(FlowReport { rows })
}
