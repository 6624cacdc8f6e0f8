//! Box-constrained damped Newton ascent with backtracking line search.

use nalgebra::{DMatrix, DVector};

use super::design::GroupedDesign;
use super::{FitInfo, FitOptions, MAX_LOG_GAP, MIN_LOG_GAP};
use crate::model::Link;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const BOUND_EPS: f64 = 1e-9;

pub(crate) struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Indices of the threshold increments `delta_s`.
    gaps: std::ops::Range<usize>,
}

impl Bounds {
    pub fn new(design: &GroupedDesign, opts: &FitOptions) -> Self {
        let d = design.dim();
        let mut lower = vec![0.0; d];
        let mut upper = vec![0.0; d];
        lower[0] = -opts.location_cap;
        upper[0] = opts.location_cap;
        for s in 1..design.k - 1 {
            lower[s] = MIN_LOG_GAP;
            upper[s] = MAX_LOG_GAP;
        }
        for i in design.loc_offset()..design.sc_offset() {
            lower[i] = -opts.location_cap;
            upper[i] = opts.location_cap;
        }
        for i in design.sc_offset()..d {
            lower[i] = -opts.scale_cap;
            upper[i] = opts.scale_cap;
        }
        Bounds {
            lower,
            upper,
            gaps: 1..design.k - 1,
        }
    }

    fn project(&self, theta: &mut [f64]) {
        for (i, x) in theta.iter_mut().enumerate() {
            *x = x.clamp(self.lower[i], self.upper[i]);
        }
    }

    fn at_lower(&self, theta: &[f64], i: usize) -> bool {
        theta[i] <= self.lower[i] + BOUND_EPS
    }

    fn at_upper(&self, theta: &[f64], i: usize) -> bool {
        theta[i] >= self.upper[i] - BOUND_EPS
    }

    /// Gradient with components pushing outward at an active bound zeroed.
    fn projected_gradient(&self, theta: &[f64], grad: &[f64]) -> Vec<f64> {
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                if (g < 0.0 && self.at_lower(theta, i)) || (g > 0.0 && self.at_upper(theta, i)) {
                    0.0
                } else {
                    g
                }
            })
            .collect()
    }

    fn flags(&self, theta: &[f64]) -> (bool, bool) {
        let mut degenerate = false;
        let mut collided = false;
        for i in 0..theta.len() {
            if self.gaps.contains(&i) {
                collided |= self.at_lower(theta, i);
                degenerate |= self.at_upper(theta, i);
            } else {
                degenerate |= self.at_lower(theta, i) || self.at_upper(theta, i);
            }
        }
        (degenerate, collided)
    }
}

pub(crate) struct Outcome {
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub info: FitInfo,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves `m x = g` for positive definite `m`; `None` when the factorisation fails.
fn solve_pd(m: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = m.cholesky()?;
    let x = chol.solve(g);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Ascent direction on the free coordinates. Returns the direction and
/// whether it came from a second-order model.
fn direction(hess: &DMatrix<f64>, fisher: &DMatrix<f64>, grad: &[f64], free: &[usize]) -> (Vec<f64>, bool) {
    let m = free.len();
    let g = DVector::from_iterator(m, free.iter().map(|&i| grad[i]));
    let sub = |src: &DMatrix<f64>, sign: f64| DMatrix::from_fn(m, m, |a, b| sign * src[(free[a], free[b])]);

    let candidates = [sub(hess, -1.0), sub(fisher, 1.0)];
    for base in candidates {
        let scale = (0..m).map(|a| base[(a, a)].abs()).fold(0.0f64, f64::max).max(1e-300);
        for ridge in [0.0, 1e-10, 1e-7, 1e-4] {
            let mut mat = base.clone();
            if ridge > 0.0 {
                for a in 0..m {
                    mat[(a, a)] += ridge * scale;
                }
            }
            if let Some(x) = solve_pd(mat, &g) {
                if x.dot(&g) >= 0.0 {
                    return (x.iter().copied().collect(), true);
                }
            }
        }
    }
    (g.iter().copied().collect(), false)
}

pub(crate) fn maximize(design: &GroupedDesign, link: Link, start: Vec<f64>, opts: &FitOptions) -> Outcome {
    let bounds = Bounds::new(design, opts);
    let d = design.dim();
    let mut theta = start;
    bounds.project(&mut theta);
    let mut ev = design.evaluate(link, &theta);
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;

    if ev.value.is_finite() {
        while iterations < opts.max_iterations {
            let pg = bounds.projected_gradient(&theta, &ev.grad);
            grad_norm = max_norm(&pg);
            if grad_norm <= opts.grad_tol {
                converged = true;
                break;
            }
            iterations += 1;

            let free: Vec<usize> = (0..d).filter(|&i| pg[i] != 0.0 || ev.grad[i] == 0.0).collect();
            let (dir_free, second_order) = direction(&ev.hess, &ev.fisher, &ev.grad, &free);
            let decrement: f64 = free.iter().zip(&dir_free).map(|(&i, x)| ev.grad[i] * x).sum();
            if second_order && 0.5 * decrement <= opts.rel_tol * (1.0 + ev.value.abs()) {
                converged = true;
                break;
            }

            let mut full = vec![0.0; d];
            for (&i, &x) in free.iter().zip(&dir_free) {
                full[i] = x;
            }
            let accepted = line_search(design, link, &bounds, &theta, &ev.grad, ev.value, &full).or_else(|| {
                // steepest ascent fallback
                let mut g = vec![0.0; d];
                let gn = free.iter().map(|&i| ev.grad[i].powi(2)).sum::<f64>().sqrt().max(1.0);
                for &i in &free {
                    g[i] = ev.grad[i] / gn;
                }
                line_search(design, link, &bounds, &theta, &ev.grad, ev.value, &g)
            });
            let Some(next) = accepted else {
                break;
            };
            let previous = ev.value;
            theta = next;
            ev = design.evaluate(link, &theta);
            if second_order && (ev.value - previous).abs() <= opts.rel_tol * (1.0 + ev.value.abs()) {
                let pg = bounds.projected_gradient(&theta, &ev.grad);
                grad_norm = max_norm(&pg);
                converged = true;
                break;
            }
        }
    }
    let (degenerate, collided) = bounds.flags(&theta);
    Outcome {
        loglik: ev.value,
        theta,
        info: FitInfo {
            iterations,
            converged,
            grad_norm,
            degenerate,
            collided,
        },
    }
}

fn line_search(
    design: &GroupedDesign,
    link: Link,
    bounds: &Bounds,
    theta: &[f64],
    grad: &[f64],
    value: f64,
    dir: &[f64],
) -> Option<Vec<f64>> {
    let mut step = 1.0;
    let mut trial = theta.to_vec();
    for _ in 0..MAX_HALVINGS {
        for i in 0..theta.len() {
            trial[i] = theta[i] + step * dir[i];
        }
        bounds.project(&mut trial);
        let predicted: f64 = (0..theta.len()).map(|i| grad[i] * (trial[i] - theta[i])).sum();
        let v = design.loglik(link, &trial);
        if v.is_finite() && v > value && v >= value + ARMIJO * predicted.max(0.0) {
            return Some(trial);
        }
        step *= 0.5;
    }
    None
}
