//! Permutation test for the maximally selected LR statistic of one variable
//! within one component.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::split::{CurrentModel, SearchContext, SearchOptions, SplitCandidate};

/// Null statistics within this distance below the observed value count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestSpec {
    pub n_permutations: usize,
    pub seed: u64,
    pub alpha_global: f64,
    /// Number of tests the global level is divided over.
    pub n_tests: usize,
}

impl PermutationTestSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_permutations < 19 {
            return Err(Error::InvalidOptions("at least 19 permutations are required".into()));
        }
        if !(self.alpha_global > 0.0 && self.alpha_global < 1.0) {
            return Err(Error::InvalidOptions("alpha must lie in (0, 1)".into()));
        }
        if self.n_tests == 0 {
            return Err(Error::InvalidOptions("number of tests must be positive".into()));
        }
        Ok(())
    }

    pub fn level(&self) -> f64 {
        bonferroni_level(self.alpha_global, self.n_tests)
    }

    /// Advice when `B` is small relative to the per-variable level.
    pub fn warnings(&self) -> Vec<String> {
        let recommended = (20.0 * self.n_tests as f64 / self.alpha_global).ceil() as usize;
        if self.n_permutations < recommended {
            vec![format!(
                "{} permutations is coarse for level {:.4}; at least {recommended} are recommended",
                self.n_permutations,
                self.level()
            )]
        } else {
            Vec::new()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Split,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed_t: f64,
    pub null_ts: Vec<f64>,
    pub p_value: f64,
    pub level: f64,
    pub decision: Decision,
}

pub fn bonferroni_level(alpha_global: f64, p: usize) -> f64 {
    alpha_global / p as f64
}

/// Add-one estimate `(1 + #{T_b >= T_obs}) / (B + 1)`.
pub fn permutation_p_value(observed_t: f64, null_ts: &[f64]) -> f64 {
    let exceed = null_ts.iter().filter(|&&t| t >= observed_t - TIE_TOLERANCE).count();
    (1 + exceed) as f64 / (null_ts.len() + 1) as f64
}

/// `B` uniformly random permutations of `0..n`, drawn up front from `seed`.
pub fn generate_permutations(n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect()
}

/// Tests whether the selected split is performed.
///
/// For every permutation the column of the selected variable is shuffled
/// across all rows and its maximal LR statistic is recomputed over all
/// terminal nodes of the selected component, using the same threshold rule
/// and minimal node size as the observed search. Node memberships of the
/// current model are held fixed.
pub fn permutation_test(
    current: &CurrentModel,
    data: &Dataset,
    options: &SearchOptions,
    selected: &SplitCandidate,
    spec: &PermutationTestSpec,
) -> Result<PermutationResult> {
    spec.validate()?;
    let ctx = SearchContext::new(current, data, options)?;
    let column = data.column(selected.variable);
    let perms = generate_permutations(data.n(), spec.n_permutations, spec.seed);
    let null_ts: Vec<f64> = perms
        .par_iter()
        .map(|perm| {
            let permuted: Vec<f64> = perm.iter().map(|&i| column[i]).collect();
            ctx.max_statistic(selected.component, &permuted)
        })
        .collect();
    let p_value = permutation_p_value(selected.lr_stat, &null_ts);
    let level = spec.level();
    Ok(PermutationResult {
        observed_t: selected.lr_stat,
        null_ts,
        p_value,
        level,
        decision: if p_value <= level { Decision::Split } else { Decision::Stop },
    })
}
