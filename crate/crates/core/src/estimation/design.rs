//! Count-table form of the likelihood.
//!
//! Under a fixed tree structure an observation enters the likelihood only
//! through its (location leaf, scale leaf, category) cell, so the data reduce
//! to a `m_loc x m_sc x k` table of counts. Derivatives are taken with respect
//! to the free parameter vector `(beta_01, delta_2.., beta_1.., gamma_1..)`.

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::model::{interval_prob, Component, Link, TreeStructure};

#[derive(Debug, Clone)]
pub(crate) struct GroupedDesign {
    pub k: usize,
    pub n_loc: usize,
    pub n_sc: usize,
    /// Active location increment indices per location leaf.
    pub loc_leaves: Vec<Vec<usize>>,
    /// Active scale increment indices per scale leaf.
    pub sc_leaves: Vec<Vec<usize>>,
    /// `counts[(l * sc_leaves.len() + s) * k + r]`
    pub counts: Vec<f64>,
}

/// Leaf index of every row for each component, plus each leaf's active increments.
pub(crate) struct LeafAssignment {
    pub row_leaf: Vec<usize>,
    pub leaf_ids: Vec<usize>,
    pub active: Vec<Vec<usize>>,
}

pub(crate) fn assign_leaves(structure: &TreeStructure, component: Component, data: &Dataset) -> LeafAssignment {
    let leaves = structure.leaves(component);
    let leaf_ids: Vec<usize> = leaves.iter().map(|l| l.node_id).collect();
    let active = leaves.iter().map(|l| l.active_splits().collect()).collect();
    let row_leaf = structure
        .assign_nodes(component, data.covariates())
        .into_iter()
        .map(|id| leaf_ids.binary_search(&id).expect("assigned node is a leaf"))
        .collect();
    LeafAssignment {
        row_leaf,
        leaf_ids,
        active,
    }
}

impl GroupedDesign {
    pub fn from_assignments(structure: &TreeStructure, data: &Dataset, loc: &LeafAssignment, sc: &LeafAssignment) -> Self {
        let k = data.k();
        let mut design = GroupedDesign {
            k,
            n_loc: structure.location_splits.len(),
            n_sc: structure.scale_splits.len(),
            loc_leaves: loc.active.clone(),
            sc_leaves: sc.active.clone(),
            counts: vec![0.0; loc.active.len() * sc.active.len() * k],
        };
        for (i, &y) in data.y().iter().enumerate() {
            let cell = design.cell(loc.row_leaf[i], sc.row_leaf[i], y - 1);
            design.counts[cell] += 1.0;
        }
        design
    }

    pub fn new(structure: &TreeStructure, data: &Dataset) -> Self {
        let loc = assign_leaves(structure, Component::Location, data);
        let sc = assign_leaves(structure, Component::Scale, data);
        Self::from_assignments(structure, data, &loc, &sc)
    }

    #[inline]
    pub fn cell(&self, loc_leaf: usize, sc_leaf: usize, category: usize) -> usize {
        (loc_leaf * self.sc_leaves.len() + sc_leaf) * self.k + category
    }

    pub fn dim(&self) -> usize {
        self.k - 1 + self.n_loc + self.n_sc
    }

    pub fn loc_offset(&self) -> usize {
        self.k - 1
    }

    pub fn sc_offset(&self) -> usize {
        self.k - 1 + self.n_loc
    }

    /// Pooled category counts.
    pub fn marginal_counts(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (i, &c) in self.counts.iter().enumerate() {
            out[i % self.k] += c;
        }
        out
    }

    fn thresholds(&self, theta: &[f64]) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.k - 1);
        t.push(theta[0]);
        for s in 1..self.k - 1 {
            let prev = t[s - 1];
            t.push(prev + theta[s].exp());
        }
        t
    }

    /// Iterates over nonempty groups as `(counts, location effect, scale effect, loc leaf, scale leaf)`.
    fn groups<'a>(&'a self, theta: &'a [f64]) -> impl Iterator<Item = (&'a [f64], f64, f64, usize, usize)> + 'a {
        let n_sc_leaves = self.sc_leaves.len();
        let lo = self.loc_offset();
        let so = self.sc_offset();
        self.counts.chunks_exact(self.k).enumerate().filter_map(move |(g, counts)| {
            if counts.iter().all(|&c| c == 0.0) {
                return None;
            }
            let l = g / n_sc_leaves;
            let s = g % n_sc_leaves;
            let loc: f64 = self.loc_leaves[l].iter().map(|&i| theta[lo + i]).sum();
            let sc: f64 = self.sc_leaves[s].iter().map(|&i| theta[so + i]).sum();
            Some((counts, loc, sc, l, s))
        })
    }

    /// Log-likelihood; `-inf` when an observed cell has probability zero.
    pub fn loglik(&self, link: Link, theta: &[f64]) -> f64 {
        let t = self.thresholds(theta);
        let mut total = 0.0;
        for (counts, loc, sc, _, _) in self.groups(theta) {
            let inv = (-sc).exp();
            let mut lower = f64::NEG_INFINITY;
            for (r, &c) in counts.iter().enumerate() {
                let upper = if r + 1 < self.k { (t[r] - loc) * inv } else { f64::INFINITY };
                if c > 0.0 {
                    let p = interval_prob(link, lower, upper);
                    if p <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    total += c * p.ln();
                }
                lower = upper;
            }
        }
        total
    }

    /// Log-likelihood, gradient, observed Hessian and expected information.
    pub fn evaluate(&self, link: Link, theta: &[f64]) -> Evaluation {
        let d = self.dim();
        let k = self.k;
        let t = self.thresholds(theta);
        let exp_delta: Vec<f64> = (0..k - 1).map(|s| if s == 0 { 1.0 } else { theta[s].exp() }).collect();
        let lo = self.loc_offset();
        let so = self.sc_offset();

        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        let mut hess = DMatrix::<f64>::zeros(d, d);
        let mut fisher = DMatrix::<f64>::zeros(d, d);

        // gradients of eta_r for r = 0..k-2 within a group
        let mut v = vec![vec![0.0; d]; k - 1];
        let mut eta = vec![0.0; k - 1];
        let mut dpi = vec![0.0; d];
        let mut sc_active = Vec::new();

        for (counts, loc, sc, l, s) in self.groups(theta) {
            let inv = (-sc).exp();
            let total: f64 = counts.iter().sum();
            sc_active.clear();
            sc_active.extend(self.sc_leaves[s].iter().map(|&i| so + i));
            for r in 0..k - 1 {
                eta[r] = (t[r] - loc) * inv;
                let vr = &mut v[r];
                vr.iter_mut().for_each(|x| *x = 0.0);
                vr[0] = inv;
                for q in 1..=r {
                    vr[q] = inv * exp_delta[q];
                }
                for &i in &self.loc_leaves[l] {
                    vr[lo + i] = -inv;
                }
                for &a in &sc_active {
                    vr[a] = -eta[r];
                }
            }

            for c in 0..k {
                let lower = if c == 0 { f64::NEG_INFINITY } else { eta[c - 1] };
                let upper = if c + 1 < k { eta[c] } else { f64::INFINITY };
                let p = interval_prob(link, lower, upper);
                let n_c = counts[c];
                if p <= 0.0 {
                    if n_c > 0.0 {
                        value = f64::NEG_INFINITY;
                    }
                    continue;
                }
                let f_up = if c + 1 < k { link.pdf(eta[c]) } else { 0.0 };
                let f_lo = if c > 0 { link.pdf(eta[c - 1]) } else { 0.0 };
                for q in 0..d {
                    let mut g = 0.0;
                    if c + 1 < k {
                        g += f_up * v[c][q];
                    }
                    if c > 0 {
                        g -= f_lo * v[c - 1][q];
                    }
                    dpi[q] = g;
                }
                let w_f = total / p;
                for a in 0..d {
                    if dpi[a] == 0.0 {
                        continue;
                    }
                    for b in 0..d {
                        fisher[(a, b)] += w_f * dpi[a] * dpi[b];
                    }
                }
                if n_c == 0.0 {
                    continue;
                }
                value += n_c * p.ln();
                let w = n_c / p;
                for q in 0..d {
                    grad[q] += w * dpi[q];
                }
                // -n/p^2 * dpi dpi^T
                let w2 = n_c / (p * p);
                for a in 0..d {
                    if dpi[a] == 0.0 {
                        continue;
                    }
                    for b in 0..d {
                        hess[(a, b)] -= w2 * dpi[a] * dpi[b];
                    }
                }
                // n/p * d2pi
                if c + 1 < k {
                    let fp = link.pdf_deriv(eta[c]);
                    add_eta_curvature(&mut hess, w, fp, f_up, &v[c], eta[c], c, inv, &exp_delta, &sc_active);
                }
                if c > 0 {
                    let fp = link.pdf_deriv(eta[c - 1]);
                    add_eta_curvature(&mut hess, -w, fp, f_lo, &v[c - 1], eta[c - 1], c - 1, inv, &exp_delta, &sc_active);
                }
            }
        }
        Evaluation {
            value,
            grad,
            hess,
            fisher,
        }
    }
}

/// Adds `weight * d2 F(eta_r)` = `weight * (F''(eta) v v^T + F'(eta) H_eta)` to `hess`, where
/// `H_eta = D - a v^T - v a^T - eta a a^T`, `a` the indicator of active scale
/// increments and `D` the diagonal threshold curvature `inv * exp(delta_s)` for `s <= r`.
#[allow(clippy::too_many_arguments)]
fn add_eta_curvature(
    hess: &mut DMatrix<f64>,
    weight: f64,
    f_prime: f64,
    f: f64,
    v: &[f64],
    eta: f64,
    r: usize,
    inv: f64,
    exp_delta: &[f64],
    sc_active: &[usize],
) {
    let d = v.len();
    let a_coef = weight * f_prime;
    if a_coef != 0.0 {
        for a in 0..d {
            if v[a] == 0.0 {
                continue;
            }
            for b in 0..d {
                hess[(a, b)] += a_coef * v[a] * v[b];
            }
        }
    }
    let wf = weight * f;
    if wf == 0.0 {
        return;
    }
    for s in 1..=r {
        hess[(s, s)] += wf * inv * exp_delta[s];
    }
    for &a in sc_active {
        for q in 0..d {
            hess[(a, q)] -= wf * v[q];
            hess[(q, a)] -= wf * v[q];
        }
        for &b in sc_active {
            hess[(a, b)] -= wf * eta;
        }
    }
}

pub(crate) struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
    pub fisher: DMatrix<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariates, VariableKind, VariableSpec};
    use crate::model::ROOT;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64) -> (GroupedDesign, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 80;
        let k = 4;
        let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(1..=k)).collect();
        y[..k].copy_from_slice(&[1, 2, 3, 4]);
        let specs = vec![
            VariableSpec::new("a", VariableKind::Metric, 0),
            VariableSpec::new("b", VariableKind::Metric, 1),
        ];
        let data = Dataset::new(y, Covariates::new(specs, cols).unwrap()).unwrap();
        let s = TreeStructure::new()
            .with_split(Component::Location, ROOT, 0, 0.0)
            .unwrap()
            .with_split(Component::Location, 2, 1, 0.2)
            .unwrap()
            .with_split(Component::Scale, ROOT, 1, -0.1)
            .unwrap()
            .with_split(Component::Scale, 1, 0, 0.3)
            .unwrap();
        let design = GroupedDesign::new(&s, &data);
        let theta: Vec<f64> = (0..design.dim()).map(|_| rng.random_range(-0.6..0.6)).collect();
        (design, theta)
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        for seed in 0..5 {
            let (design, theta) = random_problem(seed);
            let ev = design.evaluate(Link::Logit, &theta);
            let h = 1e-6;
            for q in 0..theta.len() {
                let mut up = theta.clone();
                up[q] += h;
                let mut dn = theta.clone();
                dn[q] -= h;
                let gu = design.evaluate(Link::Logit, &up).grad;
                let gd = design.evaluate(Link::Logit, &dn).grad;
                for a in 0..theta.len() {
                    let fd = (gu[a] - gd[a]) / (2.0 * h);
                    let an = ev.hess[(a, q)];
                    assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "seed {seed} ({a},{q}) fd {fd} an {an}");
                }
            }
        }
    }

    #[test]
    fn probit_hessian_matches_gradient_differences() {
        let (design, theta) = random_problem(11);
        let ev = design.evaluate(Link::Probit, &theta);
        let h = 1e-6;
        for q in 0..theta.len() {
            let mut up = theta.clone();
            up[q] += h;
            let mut dn = theta.clone();
            dn[q] -= h;
            let gu = design.evaluate(Link::Probit, &up).grad;
            let gd = design.evaluate(Link::Probit, &dn).grad;
            for a in 0..theta.len() {
                let fd = (gu[a] - gd[a]) / (2.0 * h);
                assert!((fd - ev.hess[(a, q)]).abs() < 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn value_paths_agree() {
        let (design, theta) = random_problem(3);
        let a = design.loglik(Link::Logit, &theta);
        let b = design.evaluate(Link::Logit, &theta).value;
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn fisher_is_symmetric_psd_diagonal() {
        let (design, theta) = random_problem(5);
        let ev = design.evaluate(Link::Logit, &theta);
        for a in 0..theta.len() {
            assert!(ev.fisher[(a, a)] >= 0.0);
            for b in 0..theta.len() {
                assert!((ev.fisher[(a, b)] - ev.fisher[(b, a)]).abs() < 1e-9);
            }
        }
    }
}
