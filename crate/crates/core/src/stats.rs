//! Sample statistics used by diagnostics and reports.

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, se: 0.0 }
    }

    /// Sample mean and its standard error.
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len() as f64;
        if x.is_empty() {
            return Estimate { value: f64::NAN, se: f64::NAN };
        }
        let m = x.iter().sum::<f64>() / n;
        if x.len() < 2 {
            return Estimate { value: m, se: 0.0 };
        }
        let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate { value: m, se: (var / n).sqrt() }
    }

    /// Delta method for a smooth map `g` with derivative `dg` at the estimate.
    pub fn map(self, g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> Self {
        Estimate {
            value: g(self.value),
            se: dg(self.value).abs() * self.se,
        }
    }

    /// True when `|value − target| ≤ k·se + abs_tol`.
    pub fn agrees(&self, target: f64, k: f64, abs_tol: f64) -> bool {
        (self.value - target).abs() <= k * self.se + abs_tol
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0).max(1.0)
}

pub fn median(x: &[f64]) -> f64 {
    let mut v: Vec<f64> = x.iter().copied().filter(|v| !v.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `Σ_{i,j} |x_i − x_j| / n²` for sorted `x`.
fn mean_abs_within(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let s: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, v)| v * (2.0 * i as f64 - n + 1.0))
        .sum();
    2.0 * s / (n * n)
}

/// Energy distance `2E|X−Y| − E|X−X'| − E|Y−Y'|` between two 1-D samples
/// (V-statistic form), in `O(n log n)`.
pub fn energy_distance_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(a.len() + 1);
    prefix.push(0.0);
    for v in &a {
        prefix.push(prefix.last().unwrap() + v);
    }
    let total = *prefix.last().unwrap();
    let na = a.len();
    let cross: f64 = b
        .iter()
        .map(|&y| {
            let k = a.partition_point(|&v| v < y);
            let below = y * k as f64 - prefix[k];
            let above = (total - prefix[k]) - y * (na - k) as f64;
            below + above
        })
        .sum::<f64>()
        / (na as f64 * b.len() as f64);
    2.0 * cross - mean_abs_within(&a) - mean_abs_within(&b)
}

/// Energy distance between two samples in `ℝ^d` stored row-major; uses at
/// most `cap` points from each sample.
pub fn energy_distance(a: &[f64], b: &[f64], dim: usize, cap: usize) -> f64 {
    if dim == 1 {
        return energy_distance_1d(a, b);
    }
    let na = (a.len() / dim).min(cap);
    let nb = (b.len() / dim).min(cap);
    let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let pair_mean = |x: &[f64], nx: usize, y: &[f64], ny: usize| {
        let mut s = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                s += dist(&x[i * dim..(i + 1) * dim], &y[j * dim..(j + 1) * dim]);
            }
        }
        s / (nx * ny) as f64
    };
    2.0 * pair_mean(a, na, b, nb) - pair_mean(a, na, a, na) - pair_mean(b, nb, b, nb)
}

/// Hill estimator of the right-tail index from the largest `k` of the
/// positive samples. Returns `None` when fewer than `k + 1` positive samples
/// exist.
pub fn hill_tail_index(x: &[f64], k: usize) -> Option<f64> {
    let mut v: Vec<f64> = x.iter().copied().filter(|v| *v > 0.0 && v.is_finite()).collect();
    if k == 0 || v.len() <= k {
        return None;
    }
    v.sort_by(|a, b| b.total_cmp(a));
    let threshold = v[k].ln();
    let s: f64 = v[..k].iter().map(|x| x.ln() - threshold).sum::<f64>() / k as f64;
    if s <= 0.0 {
        Some(f64::INFINITY)
    } else {
        Some(1.0 / s)
    }
}
