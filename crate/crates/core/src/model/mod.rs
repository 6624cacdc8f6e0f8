//! Cumulative location-scale model with tree-structured predictors:
//! `P(Y <= r | x) = F((beta_0r - loc(x)) / exp(scale(x)))`, where `loc` and
//! `scale` are sums of split increments along the path of `x` in each tree.

pub mod link;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset, VariableSpec};
use crate::error::{Error, Result};

pub use link::Link;
pub use tree::{Component, Condition, Leaf, Split, TreeStructure, ROOT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Ordered thresholds `beta_01 < ... < beta_0,k-1`.
    pub thresholds: Vec<f64>,
    /// One increment per location split, aligned with `TreeStructure::location_splits`.
    pub location_increments: Vec<f64>,
    /// One increment per scale split, aligned with `TreeStructure::scale_splits`.
    pub scale_increments: Vec<f64>,
}

impl ModelParams {
    pub fn new(thresholds: Vec<f64>, location_increments: Vec<f64>, scale_increments: Vec<f64>) -> Result<Self> {
        let p = ModelParams {
            thresholds,
            location_increments,
            scale_increments,
        };
        p.validate()?;
        Ok(p)
    }

    /// Intercept-only parameters.
    pub fn intercepts(thresholds: Vec<f64>) -> Result<Self> {
        Self::new(thresholds, Vec::new(), Vec::new())
    }

    pub fn k(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidData("at least one threshold is required".into()));
        }
        let all = self
            .thresholds
            .iter()
            .chain(&self.location_increments)
            .chain(&self.scale_increments);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite model parameter".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidData("thresholds must be strictly increasing".into()));
        }
        Ok(())
    }

    pub(crate) fn check_against(&self, structure: &TreeStructure) -> Result<()> {
        if self.location_increments.len() != structure.location_splits.len()
            || self.scale_increments.len() != structure.scale_splits.len()
        {
            return Err(Error::Schema(format!(
                "parameters have {}/{} increments but the structure has {}/{} splits",
                self.location_increments.len(),
                self.scale_increments.len(),
                structure.location_splits.len(),
                structure.scale_splits.len()
            )));
        }
        Ok(())
    }

    pub fn increments(&self, component: Component) -> &[f64] {
        match component {
            Component::Location => &self.location_increments,
            Component::Scale => &self.scale_increments,
        }
    }
}

/// Terminal node of `component` containing `x` and its accumulated effect:
/// the sum of increments of every `<=` child on the root-to-leaf path.
pub fn locate(structure: &TreeStructure, params: &ModelParams, component: Component, x: &[f64]) -> (usize, f64) {
    let splits = structure.splits(component);
    let increments = params.increments(component);
    let mut node = ROOT;
    let mut effect = 0.0;
    while let Some(i) = splits.iter().position(|s| s.node_id == node) {
        let s = &splits[i];
        if s.goes_left(x[s.variable]) {
            effect += increments[i];
            node = s.left_child_id;
        } else {
            node = s.right_child_id;
        }
    }
    (node, effect)
}

/// `eta_r = (beta_0r - loc) / exp(scale)` for `r` in `1..k`.
pub fn eta(thresholds: &[f64], location_effect: f64, scale_effect: f64, r: usize) -> f64 {
    (thresholds[r - 1] - location_effect) * (-scale_effect).exp()
}

pub fn linear_predictor(structure: &TreeStructure, params: &ModelParams, x: &[f64], r: usize) -> f64 {
    let (_, loc) = locate(structure, params, Component::Location, x);
    let (_, sc) = locate(structure, params, Component::Scale, x);
    eta(&params.thresholds, loc, sc, r)
}

/// `F(b) - F(a)` for `a < b`, evaluated on whichever tail keeps precision.
pub(crate) fn interval_prob(link: Link, a: f64, b: f64) -> f64 {
    if a > 0.0 {
        link.cdf(-a) - link.cdf(-b)
    } else {
        link.cdf(b) - link.cdf(a)
    }
}

/// Category probabilities `(pi_1, ..., pi_k)` for given aggregate effects.
pub fn probs_from_effects(link: Link, thresholds: &[f64], location_effect: f64, scale_effect: f64) -> Vec<f64> {
    let k = thresholds.len() + 1;
    let inv_scale = (-scale_effect).exp();
    let mut out = Vec::with_capacity(k);
    let mut lower = f64::NEG_INFINITY;
    for r in 0..k {
        let upper = if r + 1 < k {
            (thresholds[r] - location_effect) * inv_scale
        } else {
            f64::INFINITY
        };
        out.push(interval_prob(link, lower, upper));
        lower = upper;
    }
    out
}

pub fn category_probs(structure: &TreeStructure, params: &ModelParams, link: Link, x: &[f64]) -> Vec<f64> {
    let (_, loc) = locate(structure, params, Component::Location, x);
    let (_, sc) = locate(structure, params, Component::Scale, x);
    probs_from_effects(link, &params.thresholds, loc, sc)
}

/// Ratio of cumulative odds `P(Y > r | x_a) / P(Y <= r | x_a)` over the same
/// quantity at `x_b`.
pub fn cumulative_odds_ratio(
    structure: &TreeStructure,
    params: &ModelParams,
    link: Link,
    x_a: &[f64],
    x_b: &[f64],
    r: usize,
) -> f64 {
    let odds = |x: &[f64]| {
        let e = linear_predictor(structure, params, x, r);
        if link == Link::Logit {
            // F(-e)/F(e) = exp(-e) exactly for the logistic
            (-e).exp()
        } else {
            link.cdf(-e) / link.cdf(e)
        }
    };
    odds(x_a) / odds(x_b)
}

/// Terminal node summary with its path conditions, aggregate effect and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalNode {
    pub node_id: usize,
    pub conditions: Vec<String>,
    pub effect: f64,
    pub n: usize,
}

pub(crate) fn format_threshold(c: f64) -> String {
    let s = format!("{c:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub(crate) fn condition_text(specs: &[VariableSpec], c: &Condition) -> String {
    let op = if c.left { "<=" } else { ">" };
    format!("{} {op} {}", specs[c.variable].name, format_threshold(c.threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub structure: TreeStructure,
    pub params: ModelParams,
    pub link: Link,
    pub loglik: f64,
    pub n_obs: usize,
    pub k: usize,
    pub variables: Vec<VariableSpec>,
    pub location_nodes: Vec<TerminalNode>,
    pub scale_nodes: Vec<TerminalNode>,
}

impl FittedModel {
    /// Assembles a fitted model, recomputing the in-sample log-likelihood row by row.
    pub fn new(structure: TreeStructure, params: ModelParams, link: Link, data: &Dataset) -> Result<Self> {
        params.check_against(&structure)?;
        structure.check_variables(data.p())?;
        let loglik = crate::estimation::log_likelihood(&structure, &params, link, data)?;
        let mut tables = Component::BOTH.iter().map(|&component| {
            let nodes = structure.assign_nodes(component, data.covariates());
            structure
                .leaves(component)
                .into_iter()
                .map(|leaf| TerminalNode {
                    node_id: leaf.node_id,
                    conditions: leaf.conditions.iter().map(|c| condition_text(data.specs(), c)).collect(),
                    effect: leaf.active_splits().map(|i| params.increments(component)[i]).sum(),
                    n: nodes.iter().filter(|&&v| v == leaf.node_id).count(),
                })
                .collect::<Vec<_>>()
        });
        let location_nodes = tables.next().unwrap_or_default();
        let scale_nodes = tables.next().unwrap_or_default();
        Ok(FittedModel {
            structure,
            params,
            link,
            loglik,
            n_obs: data.n(),
            k: data.k(),
            variables: data.specs().to_vec(),
            location_nodes,
            scale_nodes,
        })
    }

    pub fn terminal_nodes(&self, component: Component) -> &[TerminalNode] {
        match component {
            Component::Location => &self.location_nodes,
            Component::Scale => &self.scale_nodes,
        }
    }

    pub fn category_probs(&self, x: &[f64]) -> Vec<f64> {
        category_probs(&self.structure, &self.params, self.link, x)
    }

    pub fn check_schema(&self, x: &Covariates) -> Result<()> {
        if x.specs().len() != self.variables.len() {
            return Err(Error::Schema(format!(
                "model expects {} covariates, data has {}",
                self.variables.len(),
                x.specs().len()
            )));
        }
        for (expected, got) in self.variables.iter().zip(x.specs()) {
            if expected.name != got.name || expected.kind != got.kind {
                return Err(Error::Schema(format!(
                    "expected covariate `{}` ({}), found `{}` ({})",
                    expected.name, expected.kind, got.name, got.kind
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nested() -> (TreeStructure, ModelParams) {
        // x3 <= 20 then x7 <= 4 inside the left child; variables are 0-based here
        let t = TreeStructure::new()
            .with_split(Component::Location, ROOT, 3, 20.0)
            .unwrap()
            .with_split(Component::Location, 1, 7, 4.0)
            .unwrap();
        let p = ModelParams::new(vec![-1.0, 1.0], vec![0.7, -0.2], vec![]).unwrap();
        (t, p)
    }

    fn row(x3: f64, x7: f64) -> Vec<f64> {
        let mut x = vec![0.0; 8];
        x[3] = x3;
        x[7] = x7;
        x
    }

    #[test]
    fn locate_empty_tree() {
        let t = TreeStructure::new();
        let p = ModelParams::intercepts(vec![0.0]).unwrap();
        assert_eq!(locate(&t, &p, Component::Location, &[3.0]), (ROOT, 0.0));
        assert_eq!(locate(&t, &p, Component::Scale, &[3.0]), (ROOT, 0.0));
    }

    #[test]
    fn locate_single_and_nested() {
        let t = TreeStructure::new().with_split(Component::Location, ROOT, 3, 20.0).unwrap();
        let p = ModelParams::new(vec![0.0], vec![0.7], vec![]).unwrap();
        assert_eq!(locate(&t, &p, Component::Location, &row(15.0, 0.0)).1, 0.7);
        assert_eq!(locate(&t, &p, Component::Location, &row(25.0, 0.0)).1, 0.0);

        let (t, p) = nested();
        let (node, effect) = locate(&t, &p, Component::Location, &row(15.0, 3.0));
        assert_eq!(node, 3);
        assert!((effect - 0.5).abs() < 1e-15);
        assert!((locate(&t, &p, Component::Location, &row(15.0, 5.0)).1 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn predictor_examples() {
        let th = [-1.0, 1.0];
        assert!((eta(&th, 0.5, 2f64.ln(), 1) + 0.75).abs() < 1e-15);
        assert_eq!(eta(&[0.3], 0.0, 0.0, 1), 0.3);
        assert_eq!(eta(&th, 0.4, 0.0, 2), 1.0 - 0.4);
    }

    #[test]
    fn probability_examples() {
        let p = probs_from_effects(Link::Logit, &[0.0], 0.0, 0.0);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = probs_from_effects(Link::Logit, &[-1.0, 1.0], 0.0, 0.0);
        assert!((p[0] - 0.268_941_421_369_995).abs() < 1e-12);
        assert!((p[1] - 0.462_117_157_260_010).abs() < 1e-12);
        assert!((p[2] - 0.268_941_421_369_995).abs() < 1e-12);
        let p = probs_from_effects(Link::Logit, &[-1.0, 1.0], 0.5, 2f64.ln());
        assert!((p[0] - 0.320_821_300_824_607).abs() < 1e-12);
    }

    #[test]
    fn extremes() {
        let p = probs_from_effects(Link::Logit, &[-1.0, 1.0], 30.0, 0.0);
        assert!(p[2] > 1.0 - 1e-9);
        let p = probs_from_effects(Link::Logit, &[-1.0, 1.0], 0.0, 30.0);
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[2] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn odds_ratio_logit_constant() {
        let (t, p) = nested();
        let a = row(15.0, 3.0);
        let b = row(25.0, 3.0);
        assert_eq!(cumulative_odds_ratio(&t, &p, Link::Logit, &a, &a, 1), 1.0);
        for r in 1..=2 {
            let ratio = cumulative_odds_ratio(&t, &p, Link::Logit, &a, &b, r);
            assert!((ratio - 0.5f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn odds_ratio_probit_matches_probabilities() {
        let (t, p) = nested();
        let a = row(15.0, 3.0);
        let b = row(25.0, 3.0);
        let odds = |x: &[f64], r: usize| {
            let pr = category_probs(&t, &p, Link::Probit, x);
            let below: f64 = pr[..r].iter().sum();
            (1.0 - below) / below
        };
        let r1 = cumulative_odds_ratio(&t, &p, Link::Probit, &a, &b, 1);
        let r2 = cumulative_odds_ratio(&t, &p, Link::Probit, &a, &b, 2);
        assert!((r1 - odds(&a, 1) / odds(&b, 1)).abs() < 1e-9);
        assert!((r2 - odds(&a, 2) / odds(&b, 2)).abs() < 1e-9);
        assert!((r1 - r2).abs() > 1e-3);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::intercepts(vec![1.0, 1.0]).is_err());
        assert!(ModelParams::intercepts(vec![0.0, f64::NAN]).is_err());
        assert!(ModelParams::intercepts(vec![]).is_err());
    }

    #[test]
    fn threshold_formatting() {
        assert_eq!(format_threshold(20.0), "20");
        assert_eq!(format_threshold(-0.25), "-0.25");
        assert_eq!(format_threshold(1.0 / 3.0), "0.333333");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn simplex(
                t0 in -6.0f64..6.0,
                gaps in prop::collection::vec(0.01f64..4.0, 0..5),
                loc in -20.0f64..20.0,
                sc in -5.0f64..5.0,
                probit in any::<bool>(),
            ) {
                let link = if probit { Link::Probit } else { Link::Logit };
                let mut th = vec![t0];
                for g in gaps { th.push(th.last().unwrap() + g); }
                let p = probs_from_effects(link, &th, loc, sc);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&v| v >= 0.0 && v <= 1.0));
            }

            #[test]
            fn locate_invariant_under_increasing_map(x in -10.0f64..10.0, c in -10.0f64..10.0) {
                let cube = |v: f64| v * v * v;
                let t = TreeStructure::new().with_split(Component::Location, ROOT, 0, c).unwrap();
                let tc = TreeStructure::new().with_split(Component::Location, ROOT, 0, cube(c)).unwrap();
                prop_assert_eq!(t.locate_node(Component::Location, &[x]), tc.locate_node(Component::Location, &[cube(x)]));
            }
        }
    }
}
