//! Candidate split enumeration and likelihood-ratio ranking.
//!
//! Every candidate adds exactly one increment to the current model, so all
//! LR statistics have one degree of freedom and the smallest p-value is the
//! largest statistic.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimation::design::{assign_leaves, GroupedDesign, LeafAssignment};
use crate::estimation::{fit_design, FitOptions, FitResult, FreeParams};
use crate::model::{Component, Link, ModelParams, TreeStructure};

pub const DEFAULT_MIN_NODE_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub link: Link,
    pub min_node_size: usize,
    pub fit: FitOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            link: Link::Logit,
            min_node_size: DEFAULT_MIN_NODE_SIZE,
            fit: FitOptions::default(),
        }
    }
}

/// The fitted model that candidates are compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentModel {
    pub structure: TreeStructure,
    pub theta: FreeParams,
    pub loglik: f64,
}

impl CurrentModel {
    pub fn from_fit(structure: TreeStructure, fit: &FitResult) -> Self {
        CurrentModel {
            structure,
            theta: fit.theta.clone(),
            loglik: fit.loglik,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CandidateFlags {
    pub degenerate: bool,
    pub threshold_collision: bool,
    pub nonconverged: bool,
}

impl CandidateFlags {
    pub fn any(&self) -> bool {
        self.degenerate || self.threshold_collision || self.nonconverged
    }
}

/// A split that has not been fitted yet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateStub {
    pub component: Component,
    pub node_id: usize,
    pub variable: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub component: Component,
    pub node_id: usize,
    pub variable: usize,
    pub threshold: f64,
    pub lr_stat: f64,
    pub params: ModelParams,
    pub theta: FreeParams,
    pub loglik: f64,
    pub flags: CandidateFlags,
}

impl SplitCandidate {
    pub fn stub(&self) -> CandidateStub {
        CandidateStub {
            component: self.component,
            node_id: self.node_id,
            variable: self.variable,
            threshold: self.threshold,
        }
    }
}

/// Selection order: larger statistic first, then smaller variable index,
/// location before scale, smaller node id, smaller threshold.
pub fn selection_order(a: &SplitCandidate, b: &SplitCandidate) -> Ordering {
    b.lr_stat
        .total_cmp(&a.lr_stat)
        .then(a.variable.cmp(&b.variable))
        .then(a.component.cmp(&b.component))
        .then(a.node_id.cmp(&b.node_id))
        .then(a.threshold.total_cmp(&b.threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableMax {
    pub lr_stat: f64,
    pub candidate: CandidateStub,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: SplitCandidate,
    /// Maximal statistic per (component, variable), pooled over that component's terminal nodes.
    pub per_variable_max: BTreeMap<(Component, usize), VariableMax>,
    pub all_evaluated: usize,
}

/// `max(0, 2 (full - restricted))`.
pub fn lr_statistic(full_loglik: f64, restricted_loglik: f64) -> f64 {
    (2.0 * (full_loglik - restricted_loglik)).max(0.0)
}

/// Row indices per leaf of one component.
fn rows_by_leaf(assignment: &LeafAssignment) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); assignment.active.len()];
    for (i, &leaf) in assignment.row_leaf.iter().enumerate() {
        rows[leaf].push(i);
    }
    rows
}

/// Sorts `rows` by `column` and returns the admissible thresholds together
/// with the position in the sorted order where the `> c` side starts.
fn admissible_cuts(rows: &mut [usize], column: &[f64], min_node_size: usize) -> Vec<(f64, usize)> {
    rows.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
    let n = rows.len();
    let min = min_node_size.max(1);
    let mut cuts = Vec::new();
    let mut i = 0;
    while i < n {
        let v = column[rows[i]];
        let mut end = i + 1;
        while end < n && column[rows[end]] == v {
            end += 1;
        }
        if end < n && end >= min && n - end >= min {
            cuts.push((v, end));
        }
        i = end;
    }
    cuts
}

/// All admissible candidate splits of `structure` (both components, every
/// terminal node, every variable).
pub fn enumerate_candidates(structure: &TreeStructure, data: &Dataset, min_node_size: usize) -> Vec<CandidateStub> {
    let mut out = Vec::new();
    for component in Component::BOTH {
        let assignment = assign_leaves(structure, component, data);
        for (leaf, mut rows) in rows_by_leaf(&assignment).into_iter().enumerate() {
            for j in 0..data.p() {
                for (threshold, _) in admissible_cuts(&mut rows, data.column(j), min_node_size) {
                    out.push(CandidateStub {
                        component,
                        node_id: assignment.leaf_ids[leaf],
                        variable: j,
                        threshold,
                    });
                }
            }
        }
    }
    out
}

/// Shared state for fitting all candidates that extend one current model.
pub(crate) struct SearchContext<'a> {
    data: &'a Dataset,
    current: &'a CurrentModel,
    options: &'a SearchOptions,
    loc: LeafAssignment,
    sc: LeafAssignment,
    loc_rows: Vec<Vec<usize>>,
    sc_rows: Vec<Vec<usize>>,
}

pub(crate) struct SweepFit {
    pub threshold: f64,
    pub fit: FitResult,
}

impl<'a> SearchContext<'a> {
    pub fn new(current: &'a CurrentModel, data: &'a Dataset, options: &'a SearchOptions) -> Result<Self> {
        options.fit.validate()?;
        current.structure.check_variables(data.p())?;
        let loc = assign_leaves(&current.structure, Component::Location, data);
        let sc = assign_leaves(&current.structure, Component::Scale, data);
        Ok(SearchContext {
            loc_rows: rows_by_leaf(&loc),
            sc_rows: rows_by_leaf(&sc),
            data,
            current,
            options,
            loc,
            sc,
        })
    }

    pub fn n_leaves(&self, component: Component) -> usize {
        match component {
            Component::Location => self.loc.active.len(),
            Component::Scale => self.sc.active.len(),
        }
    }

    pub fn leaf_id(&self, component: Component, leaf: usize) -> usize {
        match component {
            Component::Location => self.loc.leaf_ids[leaf],
            Component::Scale => self.sc.leaf_ids[leaf],
        }
    }

    /// Fits every admissible split of `leaf` in `component` on `column`.
    pub fn sweep(&self, component: Component, leaf: usize, column: &[f64]) -> Vec<SweepFit> {
        let mut rows = match component {
            Component::Location => self.loc_rows[leaf].clone(),
            Component::Scale => self.sc_rows[leaf].clone(),
        };
        let cuts = admissible_cuts(&mut rows, column, self.options.min_node_size);
        if cuts.is_empty() {
            return Vec::new();
        }

        let structure = &self.current.structure;
        let (mut loc_active, mut sc_active) = (self.loc.active.clone(), self.sc.active.clone());
        let new_increment = structure.n_splits(component);
        let (n_loc, n_sc) = match component {
            Component::Location => {
                let mut a = loc_active[leaf].clone();
                a.push(new_increment);
                loc_active.push(a);
                (structure.location_splits.len() + 1, structure.scale_splits.len())
            }
            Component::Scale => {
                let mut a = sc_active[leaf].clone();
                a.push(new_increment);
                sc_active.push(a);
                (structure.location_splits.len(), structure.scale_splits.len() + 1)
            }
        };
        let k = self.data.k();
        let mut design = GroupedDesign {
            k,
            n_loc,
            n_sc,
            counts: vec![0.0; loc_active.len() * sc_active.len() * k],
            loc_leaves: loc_active,
            sc_leaves: sc_active,
        };
        let y = self.data.y();
        for (i, &label) in y.iter().enumerate() {
            let cell = design.cell(self.loc.row_leaf[i], self.sc.row_leaf[i], label - 1);
            design.counts[cell] += 1.0;
        }
        let new_leaf = self.n_leaves(component);
        let moved_cell = |i: usize, d: &GroupedDesign| -> (usize, usize) {
            let (l, s) = (self.loc.row_leaf[i], self.sc.row_leaf[i]);
            let from = d.cell(l, s, y[i] - 1);
            let to = match component {
                Component::Location => d.cell(new_leaf, s, y[i] - 1),
                Component::Scale => d.cell(l, new_leaf, y[i] - 1),
            };
            (from, to)
        };

        let warm = self.current.theta.with_new_increment(component);
        let mut out = Vec::with_capacity(cuts.len());
        let mut moved = 0;
        for (threshold, end) in cuts {
            for &i in &rows[moved..end] {
                let (from, to) = moved_cell(i, &design);
                design.counts[from] -= 1.0;
                design.counts[to] += 1.0;
            }
            moved = end;
            // adjacent cuts differ by a few rows, so the previous optimum is a close start
            let start = match out.last() {
                Some(SweepFit { fit, .. }) if fit.info.converged && !fit.info.degenerate => &fit.theta.values,
                _ => &warm.values,
            };
            if let Ok(fit) = fit_design(&design, self.options.link, &self.options.fit, Some(start)) {
                out.push(SweepFit { threshold, fit });
            }
        }
        out
    }

    /// Largest LR statistic for splitting any terminal node of `component` on `column`.
    pub fn max_statistic(&self, component: Component, column: &[f64]) -> f64 {
        (0..self.n_leaves(component))
            .flat_map(|leaf| self.sweep(component, leaf, column))
            .map(|s| lr_statistic(s.fit.loglik, self.current.loglik))
            .fold(0.0, f64::max)
    }
}

/// Largest LR statistic over all terminal nodes of `component` when the
/// split variable takes the values in `column` (node memberships of the
/// current model are kept fixed). Zero when no split is admissible.
pub fn max_statistic(
    current: &CurrentModel,
    data: &Dataset,
    options: &SearchOptions,
    component: Component,
    column: &[f64],
) -> Result<f64> {
    if column.len() != data.n() {
        return Err(Error::Schema(format!("column has {} values, data has {} rows", column.len(), data.n())));
    }
    Ok(SearchContext::new(current, data, options)?.max_statistic(component, column))
}

/// Fits every admissible candidate, in enumeration order.
pub fn evaluate_candidates(current: &CurrentModel, data: &Dataset, options: &SearchOptions) -> Result<Vec<SplitCandidate>> {
    let ctx = SearchContext::new(current, data, options)?;
    let jobs: Vec<(Component, usize, usize)> = Component::BOTH
        .iter()
        .flat_map(|&c| (0..ctx.n_leaves(c)).flat_map(move |leaf| (0..data.p()).map(move |j| (c, leaf, j))))
        .collect();
    let nested: Vec<Vec<SplitCandidate>> = jobs
        .par_iter()
        .map(|&(component, leaf, j)| {
            let node_id = ctx.leaf_id(component, leaf);
            ctx.sweep(component, leaf, data.column(j))
                .into_iter()
                .map(|s| SplitCandidate {
                    component,
                    node_id,
                    variable: j,
                    threshold: s.threshold,
                    lr_stat: lr_statistic(s.fit.loglik, current.loglik),
                    loglik: s.fit.loglik,
                    flags: CandidateFlags {
                        degenerate: s.fit.info.degenerate,
                        threshold_collision: s.fit.info.collided,
                        nonconverged: !s.fit.info.converged,
                    },
                    params: s.fit.params,
                    theta: s.fit.theta,
                })
                .collect()
        })
        .collect();
    Ok(nested.into_iter().flatten().collect())
}

/// Fits all candidates and selects the one with the largest LR statistic.
pub fn search_best_split(current: &CurrentModel, data: &Dataset, options: &SearchOptions) -> Result<SearchResult> {
    let candidates = evaluate_candidates(current, data, options)?;
    let mut per_variable_max: BTreeMap<(Component, usize), (usize, f64)> = BTreeMap::new();
    for (idx, c) in candidates.iter().enumerate() {
        per_variable_max
            .entry((c.component, c.variable))
            .and_modify(|e| {
                if selection_order(c, &candidates[e.0]) == Ordering::Less {
                    *e = (idx, c.lr_stat);
                }
            })
            .or_insert((idx, c.lr_stat));
    }
    let best = candidates
        .iter()
        .min_by(|a, b| selection_order(a, b))
        .cloned()
        .ok_or(Error::NoCandidates)?;
    Ok(SearchResult {
        all_evaluated: candidates.len(),
        per_variable_max: per_variable_max
            .into_iter()
            .map(|(key, (idx, stat))| {
                (
                    key,
                    VariableMax {
                        lr_stat: stat,
                        candidate: candidates[idx].stub(),
                    },
                )
            })
            .collect(),
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariates, VariableKind, VariableSpec};
    use crate::estimation::fit_mle;
    use crate::model::ROOT;

    fn dataset(y: Vec<usize>, cols: Vec<Vec<f64>>) -> Dataset {
        let specs = (0..cols.len())
            .map(|j| VariableSpec::new(format!("x{}", j + 1), VariableKind::Metric, j))
            .collect();
        Dataset::new(y, Covariates::new(specs, cols).unwrap()).unwrap()
    }

    fn current_for(structure: TreeStructure, data: &Dataset) -> CurrentModel {
        let fit = fit_mle(&structure, data, Link::Logit, &FitOptions::default(), None).unwrap();
        CurrentModel::from_fit(structure, &fit)
    }

    fn two_groups() -> Dataset {
        let mut y = Vec::new();
        let mut g = Vec::new();
        for (gi, counts) in [[3usize, 7], [6, 4]].iter().enumerate() {
            for (r, &c) in counts.iter().enumerate() {
                y.extend(std::iter::repeat(r + 1).take(c));
                g.extend(std::iter::repeat(gi as f64).take(c));
            }
        }
        dataset(y, vec![g])
    }

    #[test]
    fn lr_statistic_rules() {
        assert_eq!(lr_statistic(-3.0, -3.0), 0.0);
        assert_eq!(lr_statistic(-3.0 - 1e-12, -3.0), 0.0);
        let t = lr_statistic(-12.838_759_690_641_5, -13.762_776_274_271_77);
        assert!((t - 1.848_033_167_260_54).abs() < 1e-9);
    }

    #[test]
    fn enumeration_counts() {
        let d = dataset(vec![1, 2, 1, 2, 1, 2], vec![vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]]);
        assert_eq!(enumerate_candidates(&TreeStructure::new(), &d, 1).len(), 2);

        let d = dataset(
            vec![1, 2, 1, 2, 1, 2],
            vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 5.0], vec![7.0; 6]],
        );
        assert_eq!(enumerate_candidates(&TreeStructure::new(), &d, 1).len(), 8);
        // min node size 2 drops the cut at 1
        assert_eq!(enumerate_candidates(&TreeStructure::new(), &d, 2).len(), 6);
    }

    #[test]
    fn enumeration_after_location_split() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let d = dataset((0..12).map(|i| 1 + i % 2).collect(), vec![x]);
        let s = TreeStructure::new().with_split(Component::Location, ROOT, 0, 5.0).unwrap();
        let stubs = enumerate_candidates(&s, &d, 1);
        let loc_nodes: std::collections::BTreeSet<usize> = stubs
            .iter()
            .filter(|c| c.component == Component::Location)
            .map(|c| c.node_id)
            .collect();
        assert_eq!(loc_nodes.into_iter().collect::<Vec<_>>(), vec![1, 2]);
        assert!(stubs.iter().any(|c| c.component == Component::Scale && c.node_id == ROOT));
        assert_eq!(stubs.len(), 5 + 5 + 11);
    }

    #[test]
    fn two_group_statistic_matches_closed_form() {
        let d = two_groups();
        let current = current_for(TreeStructure::new(), &d);
        let opts = SearchOptions {
            min_node_size: 1,
            ..SearchOptions::default()
        };
        let res = search_best_split(&current, &d, &opts).unwrap();
        assert_eq!(res.all_evaluated, 2);
        assert_eq!(res.best.component, Component::Location);
        assert!((res.best.lr_stat - 1.848_033_167_260_54).abs() < 1e-6);
    }

    #[test]
    fn candidate_fits_match_direct_fits() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 40) as f64).collect();
        let y: Vec<usize> = (0..40).map(|i| if x[i] < 15.0 { [1, 1, 2, 3][i % 4] } else { [1, 2, 3, 3][i % 4] }).collect();
        let d = dataset(y, vec![x]);
        let current = current_for(TreeStructure::new(), &d);
        let opts = SearchOptions {
            min_node_size: 5,
            ..SearchOptions::default()
        };
        let candidates = evaluate_candidates(&current, &d, &opts).unwrap();
        for c in candidates.iter().step_by(5) {
            let s = current.structure.with_split(c.component, c.node_id, c.variable, c.threshold).unwrap();
            let warm = current.theta.with_new_increment(c.component);
            let direct = fit_mle(&s, &d, Link::Logit, &opts.fit, Some(&warm)).unwrap();
            // fits started from different points agree to the optimiser's stopping bound
            let tol = 2.0 * opts.fit.rel_tol * (1.0 + direct.loglik.abs());
            assert!((direct.loglik - c.loglik).abs() < tol, "{} vs {}", direct.loglik, c.loglik);
            assert!(c.loglik >= current.loglik - 1e-10);
        }
    }

    #[test]
    fn no_candidates_error() {
        let d = dataset(vec![1, 2, 1, 2], vec![vec![1.0; 4]]);
        let current = current_for(TreeStructure::new(), &d);
        assert!(matches!(
            search_best_split(&current, &d, &SearchOptions::default()),
            Err(Error::NoCandidates)
        ));
    }

    fn candidate(stat: f64, variable: usize, component: Component, node_id: usize, threshold: f64) -> SplitCandidate {
        SplitCandidate {
            component,
            node_id,
            variable,
            threshold,
            lr_stat: stat,
            params: ModelParams::intercepts(vec![0.0]).unwrap(),
            theta: FreeParams::from_params(&ModelParams::intercepts(vec![0.0]).unwrap()).unwrap(),
            loglik: 0.0,
            flags: CandidateFlags::default(),
        }
    }

    #[test]
    fn selection_tie_breaks() {
        let a = candidate(5.1, 3, Component::Scale, 0, 1.0);
        let b = candidate(3.2, 0, Component::Location, 0, 1.0);
        assert_eq!(selection_order(&a, &b), Ordering::Less);
        let a = candidate(2.0, 1, Component::Scale, 0, 1.0);
        let b = candidate(2.0, 1, Component::Location, 0, 1.0);
        assert_eq!(selection_order(&b, &a), Ordering::Less);
        let a = candidate(2.0, 0, Component::Scale, 0, 1.0);
        let b = candidate(2.0, 1, Component::Location, 0, 1.0);
        assert_eq!(selection_order(&a, &b), Ordering::Less);
        let a = candidate(2.0, 0, Component::Location, 2, 1.0);
        let b = candidate(2.0, 0, Component::Location, 1, 3.0);
        assert_eq!(selection_order(&b, &a), Ordering::Less);
        let a = candidate(2.0, 0, Component::Location, 1, 0.5);
        assert_eq!(selection_order(&a, &b), Ordering::Less);
    }

    #[test]
    fn per_variable_max_is_brute_force_max() {
        let n = 60;
        let x1: Vec<f64> = (0..n).map(|i| ((i * 13) % n) as f64).collect();
        let x2: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64).collect();
        let y: Vec<usize> = (0..n).map(|i| 1 + ((i * 5 + (x1[i] as usize) / 20) % 3)).collect();
        let d = dataset(y, vec![x1, x2]);
        let current = current_for(TreeStructure::new(), &d);
        let opts = SearchOptions {
            min_node_size: 5,
            ..SearchOptions::default()
        };
        let res = search_best_split(&current, &d, &opts).unwrap();
        let all = evaluate_candidates(&current, &d, &opts).unwrap();
        assert_eq!(res.all_evaluated, all.len());
        for ((component, j), vm) in &res.per_variable_max {
            let brute = all
                .iter()
                .filter(|c| c.component == *component && c.variable == *j)
                .map(|c| c.lr_stat)
                .fold(f64::MIN, f64::max);
            assert_eq!(vm.lr_stat, brute);
        }
        let top = all.iter().map(|c| c.lr_stat).fold(f64::MIN, f64::max);
        assert_eq!(res.best.lr_stat, top);
    }
}
