use crate::bsde::RegressionBasis;
use crate::grid::TimeGrid;
use crate::stats::Estimate;

/// Per-node diagnostics of a backward solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Number of paths where the positivity floor was applied, per node.
    pub clamp_activations: Vec<usize>,
    /// Condition number of the (column-scaled) regression Gram matrix, per node.
    pub condition_numbers: Vec<f64>,
    /// Picard iterations performed at each node.
    pub picard_iterations: usize,
    /// RMS residual of the `Y` regression, per node.
    pub residual_norms: Vec<f64>,
    /// Non-fatal findings such as a high clamp rate.
    pub warnings: Vec<String>,
}

impl Diagnostics {
    /// Fraction of path-nodes where the floor was active.
    pub fn clamp_rate(&self, n_paths: usize) -> f64 {
        let nodes = self.clamp_activations.len().max(1);
        self.clamp_activations.iter().sum::<usize>() as f64 / (nodes * n_paths) as f64
    }
}

/// Regression fit at one node: `Y(x) ≈ basis(x)·y_coef`,
/// `Z_k(x) ≈ basis(x)·z_coef[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFit {
    pub y_coef: Vec<f64>,
    pub z_coef: Vec<Vec<f64>>,
    /// True when only the constant basis function was used.
    pub constant_only: bool,
}

/// Discrete solution `(Y, Z)` on every path.
///
/// `y` holds `n_nodes × n_paths` values (node-major); `z` holds
/// `n_steps × n_paths × dim` values, defined on the nodes `0..n_steps`.
#[derive(Debug, Clone)]
pub struct BSDESolution {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub dim: usize,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub diagnostics: Diagnostics,
    /// Standard error of `Y_0` when it is a Monte Carlo quantity.
    pub y0_se: f64,
    /// Regression fits per node (least-squares solutions only).
    pub fits: Option<Vec<NodeFit>>,
    /// Basis the fits refer to.
    pub basis: Option<RegressionBasis>,
    /// Positivity floor used by the solver (0 for exact solutions).
    pub clamp_eps: f64,
    pub method: &'static str,
}

impl BSDESolution {
    pub fn new(grid: TimeGrid, n_paths: usize, dim: usize, method: &'static str) -> Self {
        BSDESolution {
            grid,
            n_paths,
            dim,
            y: vec![0.0; grid.n_nodes() * n_paths],
            z: vec![0.0; grid.n_steps() * n_paths * dim],
            diagnostics: Diagnostics::default(),
            y0_se: 0.0,
            fits: None,
            basis: None,
            clamp_eps: 0.0,
            method,
        }
    }

    #[inline]
    pub fn y(&self, node: usize, path: usize) -> f64 {
        self.y[node * self.n_paths + path]
    }

    #[inline]
    pub fn z(&self, node: usize, path: usize) -> &[f64] {
        let o = (node * self.n_paths + path) * self.dim;
        &self.z[o..o + self.dim]
    }

    pub fn y_node(&self, node: usize) -> &[f64] {
        &self.y[node * self.n_paths..(node + 1) * self.n_paths]
    }

    /// Path average of `Y` at node 0.
    pub fn y0(&self) -> f64 {
        crate::stats::mean(self.y_node(0))
    }

    pub fn y0_estimate(&self) -> Estimate {
        Estimate {
            value: self.y0(),
            se: self.y0_se,
        }
    }

    /// Smallest `Y` over all nodes and paths.
    pub fn min_y(&self) -> f64 {
        self.y.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Flips the sign of `Y` and `Z` (negative-branch mirror).
    pub(crate) fn negate(&mut self) {
        self.y.iter_mut().for_each(|v| *v = -*v);
        self.z.iter_mut().for_each(|v| *v = -*v);
        if let Some(fits) = &mut self.fits {
            for f in fits {
                f.y_coef.iter_mut().for_each(|v| *v = -*v);
                f.z_coef.iter_mut().flatten().for_each(|v| *v = -*v);
            }
        }
    }
}
