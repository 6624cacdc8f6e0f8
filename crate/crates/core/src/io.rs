//! Model documents (JSON) and tree rendering (DOT).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::builder::{BuildOptions, FitReport, StepRecord, StopReason};
use crate::data::VariableSpec;
use crate::error::{Error, Result};
use crate::model::{format_threshold, Component, FittedModel, Link, ModelParams, TerminalNode, TreeStructure, ROOT};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub node_id: usize,
    /// `None` for the root.
    pub parent: Option<usize>,
    pub left_child_id: usize,
    pub right_child_id: usize,
    pub variable: String,
    pub threshold: f64,
    /// Added to every observation in the left (`<=`) child.
    pub increment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub loglik: f64,
    pub n_obs: usize,
    pub options: Option<BuildOptions>,
    pub seed: Option<u64>,
    pub stop_reason: Option<StopReason>,
    pub steps: Vec<StepRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: String,
    pub link: Link,
    pub k: usize,
    pub variables: Vec<VariableSpec>,
    pub thresholds: Vec<f64>,
    pub location_splits: Vec<SplitRecord>,
    pub scale_splits: Vec<SplitRecord>,
    pub location_nodes: Vec<TerminalNode>,
    pub scale_nodes: Vec<TerminalNode>,
    pub metadata: FitMetadata,
}

fn parent_of(node_id: usize) -> Option<usize> {
    (node_id != ROOT).then(|| (node_id - 1) / 2)
}

impl ModelDocument {
    pub fn new(model: &FittedModel, options: Option<&BuildOptions>, report: Option<&FitReport>) -> Self {
        let records = |component: Component| -> Vec<SplitRecord> {
            model
                .structure
                .splits(component)
                .iter()
                .zip(model.params.increments(component))
                .map(|(s, &increment)| SplitRecord {
                    node_id: s.node_id,
                    parent: parent_of(s.node_id),
                    left_child_id: s.left_child_id,
                    right_child_id: s.right_child_id,
                    variable: model.variables[s.variable].name.clone(),
                    threshold: s.threshold,
                    increment,
                })
                .collect()
        };
        ModelDocument {
            schema_version: SCHEMA_VERSION.to_string(),
            link: model.link,
            k: model.k,
            variables: model.variables.clone(),
            thresholds: model.params.thresholds.clone(),
            location_splits: records(Component::Location),
            scale_splits: records(Component::Scale),
            location_nodes: model.location_nodes.clone(),
            scale_nodes: model.scale_nodes.clone(),
            metadata: FitMetadata {
                loglik: model.loglik,
                n_obs: model.n_obs,
                options: options.cloned(),
                seed: options.map(|o| o.seed),
                stop_reason: report.and_then(|r| r.stop_reason),
                steps: report.map(|r| r.steps.clone()).unwrap_or_default(),
                warnings: report.map(|r| r.warnings.clone()).unwrap_or_default(),
            },
        }
    }

    /// Rebuilds the fitted model, checking the document for consistency.
    pub fn to_model(&self) -> Result<FittedModel> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidData(format!("unsupported schema version `{}`", self.schema_version)));
        }
        if self.thresholds.len() + 1 != self.k {
            return Err(Error::InvalidData(format!(
                "{} thresholds given for {} categories",
                self.thresholds.len(),
                self.k
            )));
        }
        for (j, v) in self.variables.iter().enumerate() {
            if v.column_index != j {
                return Err(Error::InvalidData(format!("variable `{}` has column index {}", v.name, v.column_index)));
            }
        }
        let mut structure = TreeStructure::new();
        let mut increments = [Vec::new(), Vec::new()];
        for (component, records) in [
            (Component::Location, &self.location_splits),
            (Component::Scale, &self.scale_splits),
        ] {
            for r in records {
                let variable = self
                    .variables
                    .iter()
                    .position(|v| v.name == r.variable)
                    .ok_or_else(|| Error::InvalidData(format!("split on unknown variable `{}`", r.variable)))?;
                structure = structure.with_split(component, r.node_id, variable, r.threshold)?;
                let split = structure.splits(component).last().expect("split just added");
                if split.left_child_id != r.left_child_id
                    || split.right_child_id != r.right_child_id
                    || parent_of(r.node_id) != r.parent
                {
                    return Err(Error::InvalidData(format!("inconsistent node ids at {component} node {}", r.node_id)));
                }
                increments[component as usize].push(r.increment);
            }
        }
        let [location_increments, scale_increments] = increments;
        let params = ModelParams::new(self.thresholds.clone(), location_increments, scale_increments)?;
        Ok(FittedModel {
            structure,
            params,
            link: self.link,
            loglik: self.metadata.loglik,
            n_obs: self.metadata.n_obs,
            k: self.k,
            variables: self.variables.clone(),
            location_nodes: self.location_nodes.clone(),
            scale_nodes: self.scale_nodes.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn escape(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

fn effect_text(effect: f64) -> String {
    let s = format!("{effect:.3}");
    if s == "-0.000" { "0.000".to_string() } else { s }
}

/// Renders one component as a DOT digraph. Internal nodes show the split
/// condition, terminal nodes the aggregate effect and node size.
pub fn export_dot(model: &FittedModel, component: Component) -> String {
    let mut out = String::new();
    writeln!(out, "digraph {component} {{").unwrap();
    writeln!(out, "  node [shape=box, fontname=\"Helvetica\"];").unwrap();
    for split in model.structure.splits(component) {
        let name = &model.variables[split.variable].name;
        writeln!(out, "  n{} [label=\"{} <= {}\"];", split.node_id, escape(name), format_threshold(split.threshold)).unwrap();
    }
    for node in model.terminal_nodes(component) {
        writeln!(
            out,
            "  n{} [shape=ellipse, label=\"{}\\nn = {}\"];",
            node.node_id,
            effect_text(node.effect),
            node.n
        )
        .unwrap();
    }
    for split in model.structure.splits(component) {
        let c = format_threshold(split.threshold);
        writeln!(out, "  n{} -> n{} [label=\"<= {c}\"];", split.node_id, split.left_child_id).unwrap();
        writeln!(out, "  n{} -> n{} [label=\"> {c}\"];", split.node_id, split.right_child_id).unwrap();
    }
    out.push_str("}\n");
    out
}
