//! Maximum-likelihood estimation for a fixed tree structure.

pub(crate) mod design;
mod optim;
pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, Component, Link, ModelParams, TreeStructure};

pub use oracle::{oracle_fit, GridSpec};

pub(crate) use design::GroupedDesign;

/// Threshold increments satisfy `exp(delta) >= 1e-8`.
pub const MIN_LOG_GAP: f64 = -18.420_680_743_952_367;
/// Upper guard on `delta`; reaching it marks the fit degenerate.
pub const MAX_LOG_GAP: f64 = 9.210_340_371_976_184;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Tolerance on the relative change of the log-likelihood.
    pub rel_tol: f64,
    /// Tolerance on the max-norm of the projected gradient.
    pub grad_tol: f64,
    /// Bound on `|beta_01|` and on every location increment.
    pub location_cap: f64,
    /// Bound on every scale increment.
    pub scale_cap: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            rel_tol: 1e-10,
            grad_tol: 1e-6,
            location_cap: 15.0,
            scale_cap: 7.0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && [self.rel_tol, self.grad_tol, self.location_cap, self.scale_cap]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidOptions("fit options must all be positive".into()))
        }
    }
}

/// Unconstrained coordinates `(beta_01, delta_2..delta_{k-1}, beta_1.., gamma_1..)`
/// with `beta_0r = beta_01 + sum_{s<=r} exp(delta_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParams {
    pub values: Vec<f64>,
    pub k: usize,
    pub n_location: usize,
    pub n_scale: usize,
}

impl FreeParams {
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let t = &params.thresholds;
        let mut values = Vec::with_capacity(t.len() + params.location_increments.len() + params.scale_increments.len());
        values.push(t[0]);
        values.extend(t.windows(2).map(|w| (w[1] - w[0]).ln()));
        values.extend(&params.location_increments);
        values.extend(&params.scale_increments);
        Ok(FreeParams {
            values,
            k: params.k(),
            n_location: params.location_increments.len(),
            n_scale: params.scale_increments.len(),
        })
    }

    pub fn to_params(&self) -> ModelParams {
        let k1 = self.k - 1;
        let mut thresholds = Vec::with_capacity(k1);
        thresholds.push(self.values[0]);
        for s in 1..k1 {
            let prev = thresholds[s - 1];
            thresholds.push(prev + self.values[s].exp());
        }
        ModelParams {
            thresholds,
            location_increments: self.values[k1..k1 + self.n_location].to_vec(),
            scale_increments: self.values[k1 + self.n_location..].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Warm start for a structure with one more split in `component`: the new
    /// increment is appended to that component's block with value 0.
    pub fn with_new_increment(&self, component: Component) -> Self {
        let mut next = self.clone();
        match component {
            Component::Location => {
                next.values.insert(self.k - 1 + self.n_location, 0.0);
                next.n_location += 1;
            }
            Component::Scale => {
                next.values.push(0.0);
                next.n_scale += 1;
            }
        }
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Some parameter sits at its cap (quasi-separation).
    pub degenerate: bool,
    /// Two thresholds were pushed together to the minimal gap.
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    pub theta: FreeParams,
    pub loglik: f64,
    pub info: FitInfo,
}

/// `sum_i log pi_{y_i}(x_i)`, evaluated observation by observation.
pub fn log_likelihood(structure: &TreeStructure, params: &ModelParams, link: Link, data: &Dataset) -> Result<f64> {
    params.check_against(structure)?;
    if params.k() != data.k() {
        return Err(Error::Schema(format!(
            "parameters describe {} categories, data has {}",
            params.k(),
            data.k()
        )));
    }
    let x = data.covariates();
    let mut total = 0.0;
    let mut row = vec![0.0; data.p()];
    for (i, &y) in data.y().iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x.value(i, j);
        }
        let p = model::category_probs(structure, params, link, &row)[y - 1];
        if p <= 0.0 || !p.is_finite() {
            return Err(Error::Numerical(format!(
                "probability of observed category underflows at row {}",
                i + 1
            )));
        }
        total += p.ln();
    }
    Ok(total)
}

/// Analytic gradient of the log-likelihood in [`FreeParams`] coordinates.
pub fn gradient(structure: &TreeStructure, params: &ModelParams, link: Link, data: &Dataset) -> Result<Vec<f64>> {
    params.check_against(structure)?;
    let theta = FreeParams::from_params(params)?;
    let design = GroupedDesign::new(structure, data);
    let ev = design.evaluate(link, &theta.values);
    if !ev.value.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite".into()));
    }
    Ok(ev.grad)
}

/// Starting values: marginal cumulative link-scale proportions, zero increments.
pub(crate) fn default_start(design: &GroupedDesign, link: Link) -> Vec<f64> {
    let counts = design.marginal_counts();
    let total: f64 = counts.iter().sum();
    let mut cum = 0.0;
    let mut t = Vec::with_capacity(design.k - 1);
    for c in &counts[..design.k - 1] {
        cum += c;
        let p = (cum / total).clamp(1e-6, 1.0 - 1e-6);
        t.push(link.inverse_cdf(p));
    }
    let mut theta = vec![0.0; design.dim()];
    theta[0] = t[0];
    for s in 1..t.len() {
        theta[s] = (t[s] - t[s - 1]).max(1e-8).ln();
    }
    theta
}

pub(crate) fn fit_design(
    design: &GroupedDesign,
    link: Link,
    options: &FitOptions,
    warm_start: Option<&[f64]>,
) -> Result<FitResult> {
    let start = match warm_start {
        Some(w) => {
            if w.len() != design.dim() {
                return Err(Error::Schema(format!(
                    "warm start has {} values, model has {} free parameters",
                    w.len(),
                    design.dim()
                )));
            }
            w.to_vec()
        }
        None => default_start(design, link),
    };
    let out = optim::maximize(design, link, start, options);
    if !out.loglik.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite at the starting values".into()));
    }
    let theta = FreeParams {
        values: out.theta,
        k: design.k,
        n_location: design.n_loc,
        n_scale: design.n_sc,
    };
    Ok(FitResult {
        params: theta.to_params(),
        theta,
        loglik: out.loglik,
        info: out.info,
    })
}

/// Fits all parameters of `structure` by maximum likelihood.
///
/// Starts from `warm_start` when given (typically the fit of a nested model
/// with the new increment set to zero), otherwise from the marginal
/// cumulative proportions. Parameters reaching their caps are kept at the cap
/// and flagged in [`FitInfo::degenerate`].
pub fn fit_mle(
    structure: &TreeStructure,
    data: &Dataset,
    link: Link,
    options: &FitOptions,
    warm_start: Option<&FreeParams>,
) -> Result<FitResult> {
    options.validate()?;
    structure.check_variables(data.p())?;
    let design = GroupedDesign::new(structure, data);
    let fit = fit_design(&design, link, options, warm_start.map(|w| w.values.as_slice()))?;
    if !fit.info.converged {
        return Err(Error::Convergence {
            iterations: fit.info.iterations,
            loglik: fit.loglik,
            grad_norm: fit.info.grad_norm,
        });
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariates, VariableKind, VariableSpec};
    use crate::model::ROOT;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    /// Binary grouping variable `g` (0/1) with the given per-group category counts.
    fn grouped(groups: &[&[usize]]) -> Dataset {
        let mut y = Vec::new();
        let mut g = Vec::new();
        for (gi, counts) in groups.iter().enumerate() {
            for (r, &c) in counts.iter().enumerate() {
                for _ in 0..c {
                    y.push(r + 1);
                    g.push(gi as f64);
                }
            }
        }
        let specs = vec![VariableSpec::new("g", VariableKind::Metric, 0)];
        Dataset::new(y, Covariates::new(specs, vec![g]).unwrap()).unwrap()
    }

    #[test]
    fn intercept_only_closed_form() {
        let d = grouped(&[&[2, 5, 3]]);
        let fit = fit_mle(&TreeStructure::new(), &d, Link::Logit, &FitOptions::default(), None).unwrap();
        assert!((fit.params.thresholds[0] - logit(0.2)).abs() < 1e-9);
        assert!((fit.params.thresholds[1] - logit(0.7)).abs() < 1e-9);
        let expected = 2.0 * 0.2f64.ln() + 5.0 * 0.5f64.ln() + 3.0 * 0.3f64.ln();
        assert!((fit.loglik - expected).abs() < 1e-9);
        assert!((expected + 10.296_530_140_645_735).abs() < 1e-12);
    }

    #[test]
    fn loglik_examples() {
        let d = grouped(&[&[2, 2]]);
        let p = ModelParams::intercepts(vec![0.0]).unwrap();
        let ll = log_likelihood(&TreeStructure::new(), &p, Link::Logit, &d).unwrap();
        assert!((ll + 2.772_588_722_239_781).abs() < 1e-12);

        let d = grouped(&[&[2, 5, 3]]);
        let p = ModelParams::intercepts(vec![logit(0.2), logit(0.7)]).unwrap();
        let ll = log_likelihood(&TreeStructure::new(), &p, Link::Logit, &d).unwrap();
        assert!((ll + 10.296_530_140_645_735).abs() < 1e-9);
    }

    #[test]
    fn loglik_negative_for_finite_params() {
        let d = grouped(&[&[1, 3]]);
        let p = ModelParams::intercepts(vec![-30.0]).unwrap();
        let ll = log_likelihood(&TreeStructure::new(), &p, Link::Logit, &d).unwrap();
        assert!(ll < 0.0);
    }

    #[test]
    fn loglik_underflow_is_numerical_error() {
        let d = grouped(&[&[2, 2]]);
        let p = ModelParams::intercepts(vec![1e6]).unwrap();
        assert!(matches!(
            log_likelihood(&TreeStructure::new(), &p, Link::Logit, &d),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn two_group_location_split() {
        // group 0 (g <= 0, left) counts (3, 7); group 1 counts (6, 4)
        let d = grouped(&[&[3, 7], &[6, 4]]);
        let s = TreeStructure::new().with_split(Component::Location, ROOT, 0, 0.0).unwrap();
        let fit = fit_mle(&s, &d, Link::Logit, &FitOptions::default(), None).unwrap();
        assert!((fit.params.thresholds[0] - 0.405_465_108_108_164).abs() < 1e-7);
        assert!((fit.params.location_increments[0] - 1.252_762_968_495_368).abs() < 1e-7);
        assert!(!fit.info.degenerate);
    }

    #[test]
    fn unidentified_scale_stays_at_warm_start() {
        let d = grouped(&[&[5, 5], &[5, 5]]);
        let s = TreeStructure::new().with_split(Component::Scale, ROOT, 0, 0.0).unwrap();
        let base = fit_mle(&TreeStructure::new(), &d, Link::Logit, &FitOptions::default(), None).unwrap();
        let warm = base.theta.with_new_increment(Component::Scale);
        let fit = fit_mle(&s, &d, Link::Logit, &FitOptions::default(), Some(&warm)).unwrap();
        assert_eq!(fit.params.scale_increments[0], 0.0);
        assert!(fit.params.thresholds[0].abs() < 1e-12);
    }

    #[test]
    fn separation_is_capped_and_flagged() {
        let d = grouped(&[&[0, 6], &[6, 4]]);
        let s = TreeStructure::new().with_split(Component::Location, ROOT, 0, 0.0).unwrap();
        let fit = fit_mle(&s, &d, Link::Logit, &FitOptions::default(), None).unwrap();
        assert!(fit.info.degenerate);
        assert!((fit.params.location_increments[0] - 15.0).abs() < 1e-9);
    }

    #[test]
    fn free_params_roundtrip_and_insertion() {
        let p = ModelParams::new(vec![-1.0, 0.5, 2.0], vec![0.3, -0.2], vec![0.1]).unwrap();
        let f = FreeParams::from_params(&p).unwrap();
        assert_eq!(f.dim(), 6);
        let back = f.to_params();
        for (a, b) in back.thresholds.iter().zip(&p.thresholds) {
            assert!((a - b).abs() < 1e-14);
        }
        let w = f.with_new_increment(Component::Location);
        assert_eq!(w.to_params().location_increments, vec![0.3, -0.2, 0.0]);
        assert_eq!(w.to_params().scale_increments, vec![0.1]);
        let w = f.with_new_increment(Component::Scale);
        assert_eq!(w.to_params().scale_increments, vec![0.1, 0.0]);
    }

    #[test]
    fn warm_start_determinism_and_ascent() {
        let d = grouped(&[&[4, 3, 5], &[2, 6, 4]]);
        let base = fit_mle(&TreeStructure::new(), &d, Link::Logit, &FitOptions::default(), None).unwrap();
        let s = TreeStructure::new().with_split(Component::Scale, ROOT, 0, 0.0).unwrap();
        let warm = base.theta.with_new_increment(Component::Scale);
        let a = fit_mle(&s, &d, Link::Logit, &FitOptions::default(), Some(&warm)).unwrap();
        let b = fit_mle(&s, &d, Link::Logit, &FitOptions::default(), Some(&warm)).unwrap();
        assert_eq!(a, b);
        assert!(a.loglik >= base.loglik - 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_intercept_mle() {
        let d = grouped(&[&[3, 8, 2, 7]]);
        let fit = fit_mle(&TreeStructure::new(), &d, Link::Probit, &FitOptions::default(), None).unwrap();
        let g = gradient(&TreeStructure::new(), &fit.params, Link::Probit, &d).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
    }

    #[test]
    fn gradient_positive_toward_top_category() {
        // all left-group observations in the top category
        let d = grouped(&[&[0, 0, 8], &[3, 3, 3]]);
        let s = TreeStructure::new().with_split(Component::Location, ROOT, 0, 0.0).unwrap();
        let p = ModelParams::new(vec![-1.0, 1.0], vec![4.0], vec![]).unwrap();
        let g = gradient(&s, &p, Link::Logit, &d).unwrap();
        assert!(g[2] > 0.0 && g[2].is_finite());
    }
}
