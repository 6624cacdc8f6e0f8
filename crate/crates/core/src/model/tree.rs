//! Binary partitions of the predictor space, one per model component.
//!
//! Node ids are local to a component. The root is node `0`; the `i`-th split
//! of a component creates children `2i + 1` (the `x <= c` side) and `2i + 2`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};

pub const ROOT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Location,
    Scale,
}

impl Component {
    pub const BOTH: [Component; 2] = [Component::Location, Component::Scale];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Location => "location",
            Component::Scale => "scale",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub component: Component,
    pub node_id: usize,
    pub variable: usize,
    pub threshold: f64,
    pub left_child_id: usize,
    pub right_child_id: usize,
}

impl Split {
    pub fn goes_left(&self, value: f64) -> bool {
        value <= self.threshold
    }
}

/// A condition on the path from the root to a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub split_index: usize,
    pub variable: usize,
    pub threshold: f64,
    pub left: bool,
}

/// Terminal node of one component together with the splits whose `<=` child
/// lies on its path (these carry the increments that sum to its effect).
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub node_id: usize,
    pub conditions: Vec<Condition>,
}

impl Leaf {
    pub fn active_splits(&self) -> impl Iterator<Item = usize> + '_ {
        self.conditions.iter().filter(|c| c.left).map(|c| c.split_index)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeStructure {
    pub location_splits: Vec<Split>,
    pub scale_splits: Vec<Split>,
}

impl TreeStructure {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn splits(&self, component: Component) -> &[Split] {
        match component {
            Component::Location => &self.location_splits,
            Component::Scale => &self.scale_splits,
        }
    }

    pub fn n_splits(&self, component: Component) -> usize {
        self.splits(component).len()
    }

    pub fn is_terminal(&self, component: Component, node_id: usize) -> bool {
        let splits = self.splits(component);
        let exists = node_id == ROOT || splits.iter().any(|s| s.left_child_id == node_id || s.right_child_id == node_id);
        exists && !splits.iter().any(|s| s.node_id == node_id)
    }

    /// Returns a new structure with terminal node `node_id` of `component` split at `x_variable <= threshold`.
    pub fn with_split(&self, component: Component, node_id: usize, variable: usize, threshold: f64) -> Result<Self> {
        if !self.is_terminal(component, node_id) {
            return Err(Error::InvalidOptions(format!(
                "node {node_id} is not a terminal node of the {component} tree"
            )));
        }
        if !threshold.is_finite() {
            return Err(Error::InvalidOptions("split threshold must be finite".into()));
        }
        let mut next = self.clone();
        let splits = match component {
            Component::Location => &mut next.location_splits,
            Component::Scale => &mut next.scale_splits,
        };
        let i = splits.len();
        splits.push(Split {
            component,
            node_id,
            variable,
            threshold,
            left_child_id: 2 * i + 1,
            right_child_id: 2 * i + 2,
        });
        Ok(next)
    }

    /// Terminal nodes in ascending id order.
    pub fn leaves(&self, component: Component) -> Vec<Leaf> {
        let splits = self.splits(component);
        let mut out = Vec::with_capacity(splits.len() + 1);
        self.collect_leaves(splits, ROOT, &mut Vec::new(), &mut out);
        out.sort_by_key(|l| l.node_id);
        out
    }

    fn collect_leaves(&self, splits: &[Split], node: usize, path: &mut Vec<Condition>, out: &mut Vec<Leaf>) {
        match splits.iter().position(|s| s.node_id == node) {
            None => out.push(Leaf {
                node_id: node,
                conditions: path.clone(),
            }),
            Some(i) => {
                let s = &splits[i];
                for (left, child) in [(true, s.left_child_id), (false, s.right_child_id)] {
                    path.push(Condition {
                        split_index: i,
                        variable: s.variable,
                        threshold: s.threshold,
                        left,
                    });
                    self.collect_leaves(splits, child, path, out);
                    path.pop();
                }
            }
        }
    }

    /// Terminal node containing the covariate row `x` (indexed by variable).
    pub fn locate_node(&self, component: Component, x: &[f64]) -> usize {
        let splits = self.splits(component);
        let mut node = ROOT;
        while let Some(s) = splits.iter().find(|s| s.node_id == node) {
            node = if s.goes_left(x[s.variable]) {
                s.left_child_id
            } else {
                s.right_child_id
            };
        }
        node
    }

    /// Terminal node id for every row of `x`.
    pub fn assign_nodes(&self, component: Component, x: &Covariates) -> Vec<usize> {
        let mut nodes = vec![ROOT; x.n()];
        // parents are always split before their children
        for s in self.splits(component) {
            let col = x.column(s.variable);
            for (i, node) in nodes.iter_mut().enumerate() {
                if *node == s.node_id {
                    *node = if s.goes_left(col[i]) {
                        s.left_child_id
                    } else {
                        s.right_child_id
                    };
                }
            }
        }
        nodes
    }

    pub(crate) fn check_variables(&self, p: usize) -> Result<()> {
        for s in self.location_splits.iter().chain(&self.scale_splits) {
            if s.variable >= p {
                return Err(Error::Schema(format!(
                    "split uses variable index {} but only {p} covariates are present",
                    s.variable
                )));
            }
        }
        Ok(())
    }
}
