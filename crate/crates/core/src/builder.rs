//! Growing both trees: intercept-only start, repeated best-split search with
//! a permutation test on the selected split, and a final refit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset};
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, FitOptions};
use crate::inference::{permutation_test, Decision, PermutationResult, PermutationTestSpec};
use crate::model::{locate, Component, FittedModel, Link, TerminalNode, TreeStructure};
use crate::split::{search_best_split, CandidateFlags, CurrentModel, SearchOptions, DEFAULT_MIN_NODE_SIZE};

/// What the global level is divided over at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonferroniScope {
    /// `alpha / p`: one test per covariate.
    Covariates,
    /// `alpha / 2p`: one test per covariate and component, since the selected
    /// split is the best over both components.
    #[default]
    Pairs,
}

impl BonferroniScope {
    pub fn n_tests(self, p: usize) -> usize {
        match self {
            BonferroniScope::Covariates => p,
            BonferroniScope::Pairs => 2 * p,
        }
    }
}

impl FromStr for BonferroniScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covariates" => Ok(BonferroniScope::Covariates),
            "pairs" => Ok(BonferroniScope::Pairs),
            _ => Err(Error::InvalidOptions(format!("unknown Bonferroni scope `{s}`; use covariates or pairs"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub alpha_global: f64,
    pub bonferroni: BonferroniScope,
    pub n_permutations: usize,
    pub seed: u64,
    pub min_node_size: usize,
    pub max_steps: usize,
    pub link: Link,
    pub fit: FitOptions,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            alpha_global: 0.05,
            bonferroni: BonferroniScope::default(),
            n_permutations: 1000,
            seed: 1,
            min_node_size: DEFAULT_MIN_NODE_SIZE,
            max_steps: 30,
            link: Link::Logit,
            fit: FitOptions::default(),
        }
    }
}

impl BuildOptions {
    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if self.min_node_size == 0 {
            return Err(Error::InvalidOptions("minimal node size must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidOptions("max steps must be at least 1".into()));
        }
        self.permutation_spec(0, 1).validate()
    }

    fn search(&self) -> SearchOptions {
        SearchOptions {
            link: self.link,
            min_node_size: self.min_node_size,
            fit: self.fit.clone(),
        }
    }

    fn permutation_spec(&self, step: usize, p: usize) -> PermutationTestSpec {
        PermutationTestSpec {
            n_permutations: self.n_permutations,
            seed: step_seed(self.seed, step),
            alpha_global: self.alpha_global,
            n_tests: self.bonferroni.n_tests(p),
        }
    }
}

/// Seed of the permutation test at `step`, independent of all other steps.
pub fn step_seed(master: u64, step: usize) -> u64 {
    // splitmix64 finaliser over (master, step)
    let mut z = master ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Nonsignificant,
    NoCandidates,
    MaxSteps,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Nonsignificant => "nonsignificant",
            StopReason::NoCandidates => "no_candidates",
            StopReason::MaxSteps => "max_steps",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSplit {
    pub component: Component,
    pub node_id: usize,
    pub variable: usize,
    pub variable_name: String,
    pub threshold: f64,
    pub lr_stat: f64,
    pub flags: CandidateFlags,
    pub candidates_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub selected: SelectedSplit,
    pub permutation: PermutationResult,
    pub permutation_seed: u64,
    pub loglik_before: f64,
    /// Log-likelihood after the refit; `None` when the split was not performed.
    pub loglik_after: Option<f64>,
}

impl StepRecord {
    pub fn accepted(&self) -> bool {
        self.permutation.decision == Decision::Split
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub steps: Vec<StepRecord>,
    pub stop_reason: Option<StopReason>,
    pub final_loglik: f64,
    pub location_nodes: Vec<TerminalNode>,
    pub scale_nodes: Vec<TerminalNode>,
    pub warnings: Vec<String>,
}

impl FitReport {
    /// Fixed-width step trace.
    pub fn trace_table(&self) -> String {
        let mut out = format!(
            "{:>4}  {:<9} {:>5} {:<14} {:>12} {:>10} {:>8} {:>8}  {:<8} {:>14}\n",
            "step", "component", "node", "variable", "threshold", "LR", "p", "level", "decision", "loglik"
        );
        for s in &self.steps {
            let loglik = s.loglik_after.unwrap_or(s.loglik_before);
            out.push_str(&format!(
                "{:>4}  {:<9} {:>5} {:<14} {:>12.6} {:>10.4} {:>8.4} {:>8.4}  {:<8} {:>14.6}{}\n",
                s.step,
                s.selected.component.to_string(),
                s.selected.node_id,
                s.selected.variable_name,
                s.selected.threshold,
                s.selected.lr_stat,
                s.permutation.p_value,
                s.permutation.level,
                if s.accepted() { "split" } else { "stop" },
                loglik,
                if s.selected.flags.any() { "  [flagged]" } else { "" },
            ));
        }
        if let Some(reason) = self.stop_reason {
            out.push_str(&format!("stopped: {reason}; final log-likelihood {:.6}\n", self.final_loglik));
        }
        out
    }
}

/// Build failure together with the steps completed before it.
#[derive(Debug)]
pub struct BuildFailure {
    pub error: Error,
    pub partial: Box<FitReport>,
}

impl fmt::Display for BuildFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} step(s))", self.error, self.partial.steps.len())
    }
}

impl std::error::Error for BuildFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<BuildFailure> for Error {
    fn from(f: BuildFailure) -> Self {
        f.error
    }
}

/// Grows the location and scale trees on `data`.
pub fn build(data: &Dataset, options: &BuildOptions) -> std::result::Result<(FittedModel, FitReport), BuildFailure> {
    let mut report = FitReport {
        steps: Vec::new(),
        stop_reason: None,
        final_loglik: f64::NAN,
        location_nodes: Vec::new(),
        scale_nodes: Vec::new(),
        warnings: data.warnings(),
    };
    macro_rules! bail {
        ($e:expr) => {
            return Err(BuildFailure {
                error: $e,
                partial: Box::new(report),
            })
        };
    }
    if let Err(e) = options.validate() {
        bail!(e);
    }
    report.warnings.extend(options.permutation_spec(0, data.p()).warnings());
    let search = options.search();

    let mut structure = TreeStructure::new();
    let initial = match fit_mle(&structure, data, options.link, &options.fit, None) {
        Ok(f) => f,
        Err(e) => bail!(e),
    };
    let mut current = CurrentModel::from_fit(structure.clone(), &initial);

    for step in 1..=options.max_steps {
        let result = match search_best_split(&current, data, &search) {
            Ok(r) => r,
            Err(Error::NoCandidates) => {
                report.stop_reason = Some(StopReason::NoCandidates);
                break;
            }
            Err(e) => bail!(e),
        };
        let best = &result.best;
        let spec = options.permutation_spec(step, data.p());
        let perm = match permutation_test(&current, data, &search, best, &spec) {
            Ok(p) => p,
            Err(e) => bail!(e),
        };
        let mut record = StepRecord {
            step,
            selected: SelectedSplit {
                component: best.component,
                node_id: best.node_id,
                variable: best.variable,
                variable_name: data.specs()[best.variable].name.clone(),
                threshold: best.threshold,
                lr_stat: best.lr_stat,
                flags: best.flags,
                candidates_evaluated: result.all_evaluated,
            },
            permutation_seed: spec.seed,
            permutation: perm,
            loglik_before: current.loglik,
            loglik_after: None,
        };
        if !record.accepted() {
            report.steps.push(record);
            report.stop_reason = Some(StopReason::Nonsignificant);
            break;
        }

        let next = match structure.with_split(best.component, best.node_id, best.variable, best.threshold) {
            Ok(s) => s,
            Err(e) => bail!(e),
        };
        // every parameter is re-estimated, starting from the current fit
        let warm = current.theta.with_new_increment(best.component);
        let refit = match fit_mle(&next, data, options.link, &options.fit, Some(&warm)) {
            Ok(f) => f,
            Err(e) => {
                report.steps.push(record);
                bail!(e)
            }
        };
        record.loglik_after = Some(refit.loglik);
        report.steps.push(record);
        structure = next;
        current = CurrentModel::from_fit(structure.clone(), &refit);
    }
    if report.stop_reason.is_none() {
        report.stop_reason = Some(StopReason::MaxSteps);
    }

    let final_fit = match fit_mle(&structure, data, options.link, &options.fit, Some(&current.theta)) {
        Ok(f) => f,
        Err(e) => bail!(e),
    };
    let model = match FittedModel::new(structure, final_fit.params, options.link, data) {
        Ok(m) => m,
        Err(e) => bail!(e),
    };
    report.final_loglik = model.loglik;
    report.location_nodes = model.location_nodes.clone();
    report.scale_nodes = model.scale_nodes.clone();
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub location_node: usize,
    pub scale_node: usize,
}

/// Category probabilities and terminal nodes for every row of `x`.
pub fn predict(model: &FittedModel, x: &Covariates) -> Result<Vec<Prediction>> {
    model.check_schema(x)?;
    Ok((0..x.n())
        .map(|i| {
            let row = x.row(i);
            let (location_node, _) = locate(&model.structure, &model.params, Component::Location, &row);
            let (scale_node, _) = locate(&model.structure, &model.params, Component::Scale, &row);
            Prediction {
                probs: model.category_probs(&row),
                location_node,
                scale_node,
            }
        })
        .collect())
}
