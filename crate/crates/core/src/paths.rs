//! Seeded Brownian increments on a uniform grid.
//!
//! Increments are stored node-major: step `i`, path `p`, component `k` sits
//! at `(i * n_paths + p) * dim + k`. Paths are generated in chunks of
//! [`CHUNK`] paths, each chunk driven by its own ChaCha stream keyed by
//! `(seed, chunk index)`, so results do not depend on the number of worker
//! threads and the first `m` paths of a bundle equal a bundle of `m` paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::func::TimeFn;
use crate::grid::TimeGrid;

pub const CHUNK: usize = 4096;

/// Brownian increments, optionally under a deterministic drift shift
/// `dW = a(t) dt + dW^Q`.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    drift_shift: Option<Vec<TimeFn>>,
    increments: Vec<f64>,
}

/// Per-path states on every node of a grid (node-major, like increments).
#[derive(Debug, Clone)]
pub struct StateArray {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl StateArray {
    pub fn zeros(grid: TimeGrid, n_paths: usize, dim: usize) -> Self {
        StateArray {
            grid,
            n_paths,
            dim,
            data: vec![0.0; grid.n_nodes() * n_paths * dim],
        }
    }

    #[inline]
    pub fn get(&self, node: usize, path: usize) -> &[f64] {
        let o = (node * self.n_paths + path) * self.dim;
        &self.data[o..o + self.dim]
    }

    #[inline]
    pub fn get_mut(&mut self, node: usize, path: usize) -> &mut [f64] {
        let o = (node * self.n_paths + path) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    /// All states at one node, `n_paths * dim` values.
    pub fn node(&self, node: usize) -> &[f64] {
        let w = self.n_paths * self.dim;
        &self.data[node * w..(node + 1) * w]
    }

    /// Component `k` at `node` for every path.
    pub fn component(&self, node: usize, k: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.get(node, p)[k]).collect()
    }
}

impl PathBundle {
    pub fn new(
        grid: TimeGrid,
        dim: usize,
        n_paths: usize,
        seed: u64,
        drift_shift: Option<Vec<TimeFn>>,
    ) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::invalid("path bundle needs at least one path"));
        }
        if dim == 0 {
            return Err(Error::invalid("Brownian dimension must be positive"));
        }
        if let Some(a) = &drift_shift {
            if a.len() != dim {
                return Err(Error::invalid(format!(
                    "drift shift has {} components, expected {dim}",
                    a.len()
                )));
            }
        }
        let n_steps = grid.n_steps();
        let h = grid.h();
        let sh = h.sqrt();
        let n_chunks = n_paths.div_ceil(CHUNK);
        let chunks: Vec<Vec<f64>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                let len = CHUNK.min(n_paths - c * CHUNK);
                let mut out = vec![0.0; len * n_steps * dim];
                for v in out.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *v = sh * g;
                }
                out
            })
            .collect();
        // scatter path-major chunks into node-major storage
        let mut increments = vec![0.0; n_steps * n_paths * dim];
        for (c, chunk) in chunks.iter().enumerate() {
            let len = chunk.len() / (n_steps * dim);
            for j in 0..len {
                let p = c * CHUNK + j;
                for i in 0..n_steps {
                    let src = (j * n_steps + i) * dim;
                    let dst = (i * n_paths + p) * dim;
                    increments[dst..dst + dim].copy_from_slice(&chunk[src..src + dim]);
                }
            }
        }
        if let Some(a) = &drift_shift {
            for i in 0..n_steps {
                let t = grid.t(i);
                let shift: Vec<f64> = a.iter().map(|f| f.eval(t) * h).collect();
                for p in 0..n_paths {
                    let o = (i * n_paths + p) * dim;
                    for k in 0..dim {
                        increments[o + k] += shift[k];
                    }
                }
            }
        }
        Ok(PathBundle {
            grid,
            dim,
            n_paths,
            seed,
            drift_shift,
            increments,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn drift_shift(&self) -> Option<&[TimeFn]> {
        self.drift_shift.as_deref()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    #[inline]
    pub fn dw(&self, step: usize, path: usize) -> &[f64] {
        let o = (step * self.n_paths + path) * self.dim;
        &self.increments[o..o + self.dim]
    }

    /// Brownian states `W_{t_i} − W_{t_0}` starting from `w0`.
    pub fn brownian(&self, w0: &[f64]) -> StateArray {
        let mut s = StateArray::zeros(self.grid, self.n_paths, self.dim);
        for p in 0..self.n_paths {
            s.get_mut(0, p).copy_from_slice(w0);
        }
        for i in 0..self.grid.n_steps() {
            for p in 0..self.n_paths {
                for k in 0..self.dim {
                    let v = s.get(i, p)[k] + self.dw(i, p)[k];
                    s.get_mut(i + 1, p)[k] = v;
                }
            }
        }
        s
    }

    /// Same paths with a constant or time-dependent drift added to each
    /// increment (measure change by drift addition).
    pub fn with_drift(&self, a: Vec<TimeFn>) -> Result<PathBundle> {
        if a.len() != self.dim {
            return Err(Error::invalid("drift dimension mismatch"));
        }
        let h = self.grid.h();
        let mut out = self.clone();
        for i in 0..self.grid.n_steps() {
            let t = self.grid.t(i);
            let shift: Vec<f64> = a.iter().map(|f| f.eval(t) * h).collect();
            for p in 0..self.n_paths {
                let o = (i * self.n_paths + p) * self.dim;
                for k in 0..self.dim {
                    out.increments[o + k] += shift[k];
                }
            }
        }
        out.drift_shift = Some(match &self.drift_shift {
            None => a,
            Some(old) => old
                .iter()
                .zip(a)
                .map(|(f, g)| {
                    let (f, g) = (f.clone(), g);
                    TimeFn::native(move |t| f.eval(t) + g.eval(t))
                })
                .collect(),
        });
        Ok(out)
    }

    /// The first `m` paths.
    pub fn take_paths(&self, m: usize) -> Result<PathBundle> {
        if m == 0 || m > self.n_paths {
            return Err(Error::invalid(format!("cannot take {m} of {} paths", self.n_paths)));
        }
        let mut inc = Vec::with_capacity(self.grid.n_steps() * m * self.dim);
        for i in 0..self.grid.n_steps() {
            let o = i * self.n_paths * self.dim;
            inc.extend_from_slice(&self.increments[o..o + m * self.dim]);
        }
        Ok(PathBundle {
            increments: inc,
            n_paths: m,
            ..self.clone_meta()
        })
    }

    /// Sums groups of `factor` consecutive increments (same Brownian paths on
    /// a coarser grid).
    pub fn coarsen(&self, factor: usize) -> Result<PathBundle> {
        let grid = self.grid.coarsen(factor)?;
        let (n, d) = (self.n_paths, self.dim);
        let mut inc = vec![0.0; grid.n_steps() * n * d];
        for i in 0..self.grid.n_steps() {
            let ci = i / factor;
            for j in 0..n * d {
                inc[ci * n * d + j] += self.increments[i * n * d + j];
            }
        }
        Ok(PathBundle {
            grid,
            increments: inc,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> PathBundle {
        PathBundle {
            grid: self.grid,
            dim: self.dim,
            n_paths: self.n_paths,
            seed: self.seed,
            drift_shift: self.drift_shift.clone(),
            increments: Vec::new(),
        }
    }

    /// Per-step moment diagnostics: the largest standardized deviation of the
    /// empirical mean from `a(t_i) h`, and the largest relative deviation of
    /// the empirical variance from `h`.
    pub fn diagnostics(&self) -> PathDiagnostics {
        let h = self.grid.h();
        let n = self.n_paths as f64;
        let mut worst_mean = 0.0f64;
        let mut worst_var = 0.0f64;
        for i in 0..self.grid.n_steps() {
            let t = self.grid.t(i);
            for k in 0..self.dim {
                let target = self.drift_shift.as_ref().map_or(0.0, |a| a[k].eval(t) * h);
                let mut s = 0.0;
                let mut s2 = 0.0;
                for p in 0..self.n_paths {
                    let v = self.dw(i, p)[k] - target;
                    s += v;
                    s2 += v * v;
                }
                let m = s / n;
                let var = s2 / n - m * m;
                worst_mean = worst_mean.max(m.abs() / (h / n).sqrt());
                worst_var = worst_var.max((var / h - 1.0).abs());
            }
        }
        PathDiagnostics {
            max_mean_z: worst_mean,
            max_var_rel_dev: worst_var,
            ok: worst_mean <= 5.0 && worst_var <= 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathDiagnostics {
    /// Largest `|mean − a h| / √(h/n)` over steps and components.
    pub max_mean_z: f64,
    /// Largest `|var/h − 1|` over steps and components.
    pub max_var_rel_dev: f64,
    pub ok: bool,
}

/// Convenience constructor for a bundle without a drift shift.
pub fn make_paths(grid: TimeGrid, dim: usize, n_paths: usize, seed: u64) -> Result<PathBundle> {
    PathBundle::new(grid, dim, n_paths, seed, None)
}
