//! Derivative-free reference maximiser used to validate [`super::fit_mle`].
//!
//! Works directly on `(beta_01, gaps, increments)` with the observation-level
//! log-likelihood: an exhaustive grid over a box followed by compass search
//! within the same caps that bound [`super::fit_mle`].

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Link, ModelParams, TreeStructure};

use super::{log_likelihood, FitOptions, MAX_LOG_GAP, MIN_LOG_GAP};

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub points_per_dim: usize,
    pub threshold_range: (f64, f64),
    pub gap_range: (f64, f64),
    pub location_range: (f64, f64),
    pub scale_range: (f64, f64),
    /// Compass search stops once the step falls below this.
    pub min_step: f64,
    /// Bound on `|beta_01|` and on location increments.
    pub location_cap: f64,
    /// Bound on scale increments.
    pub scale_cap: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points_per_dim: 9,
            threshold_range: (-4.0, 4.0),
            gap_range: (0.1, 6.0),
            location_range: (-5.0, 5.0),
            scale_range: (-2.5, 2.5),
            min_step: 1e-8,
            location_cap: FitOptions::default().location_cap,
            scale_cap: FitOptions::default().scale_cap,
        }
    }
}

const MAX_DIM: usize = 4;

struct Layout {
    k1: usize,
    n_loc: usize,
    n_sc: usize,
}

impl Layout {
    fn dim(&self) -> usize {
        self.k1 + self.n_loc + self.n_sc
    }

    fn params(&self, z: &[f64]) -> Option<ModelParams> {
        let mut thresholds = vec![z[0]];
        for s in 1..self.k1 {
            if z[s] <= 0.0 {
                return None;
            }
            thresholds.push(thresholds[s - 1] + z[s]);
        }
        ModelParams::new(
            thresholds,
            z[self.k1..self.k1 + self.n_loc].to_vec(),
            z[self.k1 + self.n_loc..].to_vec(),
        )
        .ok()
    }

    /// Feasible interval of coordinate `i`.
    fn bounds(&self, spec: &GridSpec, i: usize) -> (f64, f64) {
        if i == 0 || (i >= self.k1 && i < self.k1 + self.n_loc) {
            (-spec.location_cap, spec.location_cap)
        } else if i < self.k1 {
            (MIN_LOG_GAP.exp(), MAX_LOG_GAP.exp())
        } else {
            (-spec.scale_cap, spec.scale_cap)
        }
    }

    fn range(&self, spec: &GridSpec, i: usize) -> (f64, f64) {
        if i == 0 {
            spec.threshold_range
        } else if i < self.k1 {
            spec.gap_range
        } else if i < self.k1 + self.n_loc {
            spec.location_range
        } else {
            spec.scale_range
        }
    }
}

/// Brute-force maximum-likelihood fit for structures with at most four free parameters.
pub fn oracle_fit(structure: &TreeStructure, data: &Dataset, link: Link, grid: &GridSpec) -> Result<(ModelParams, f64)> {
    let layout = Layout {
        k1: data.k() - 1,
        n_loc: structure.location_splits.len(),
        n_sc: structure.scale_splits.len(),
    };
    let d = layout.dim();
    if d > MAX_DIM {
        return Err(Error::Dimension(d));
    }
    let objective = |z: &[f64]| -> f64 {
        match layout.params(z) {
            Some(p) => log_likelihood(structure, &p, link, data).unwrap_or(f64::NEG_INFINITY),
            None => f64::NEG_INFINITY,
        }
    };

    let m = grid.points_per_dim.max(2);
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let (lo, hi) = layout.range(grid, i);
            (0..m).map(|g| lo + (hi - lo) * g as f64 / (m - 1) as f64).collect()
        })
        .collect();
    let mut best = vec![0.0; d];
    let mut best_value = f64::NEG_INFINITY;
    let mut index = vec![0usize; d];
    let mut z = vec![0.0; d];
    loop {
        for i in 0..d {
            z[i] = axes[i][index[i]];
        }
        let v = objective(&z);
        if v > best_value {
            best_value = v;
            best.copy_from_slice(&z);
        }
        let mut i = 0;
        while i < d {
            index[i] += 1;
            if index[i] < m {
                break;
            }
            index[i] = 0;
            i += 1;
        }
        if i == d {
            break;
        }
    }

    let mut step: Vec<f64> = (0..d)
        .map(|i| {
            let (lo, hi) = layout.range(grid, i);
            (hi - lo) / (m - 1) as f64
        })
        .collect();
    let mut z = best;
    let mut value = best_value;
    while step.iter().any(|&h| h >= grid.min_step) {
        let mut improved = false;
        for i in 0..d {
            for sign in [1.0, -1.0] {
                // keep moving while it pays
                loop {
                    let (lo, hi) = layout.bounds(grid, i);
                    let mut trial = z.clone();
                    trial[i] = (z[i] + sign * step[i]).clamp(lo, hi);
                    if trial[i] == z[i] {
                        break;
                    }
                    let v = objective(&trial);
                    if v > value {
                        z = trial;
                        value = v;
                        improved = true;
                    } else {
                        break;
                    }
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|h| *h *= 0.5);
        }
    }
    let params = layout.params(&z).ok_or_else(|| Error::Numerical("oracle ended outside the parameter space".into()))?;
    Ok((params, value))
}
