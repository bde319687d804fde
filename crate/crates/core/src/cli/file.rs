//! JSON scenario files.
//!
//! Matrices are nested row arrays. Node, channel and row indices are 1-based.
//! A node may supply `P` and `L` to bypass synthesis; `A_bar` is written by
//! `duio design` for reference and ignored on input.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{FusionConfig, StepSizes};
use crate::geometry::{DesignOptions, ObserverDesign};
use crate::graph::{GraphError, Topology};
use crate::numerics::{self, Matrix, NumericsError, Tolerance, Vector};
use crate::scenario::{
    Generator, InputModel, NodeModel, Scenario, ScenarioError, SimConfig, SystemModel,
};

#[derive(Debug, Error)]
pub enum FileError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{field}: {source}")]
    Matrix {
        field: String,
        source: NumericsError,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

pub type Result<T> = std::result::Result<T, FileError>;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    /// Rows of `system.C` observed by this node.
    #[serde(rename = "C_rows", default, skip_serializing_if = "Option::is_none")]
    pub c_rows: Option<Vec<usize>>,
    /// Explicit output block, alternative to `C_rows`.
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
    #[serde(default)]
    pub known_input_cols: Vec<usize>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Rows>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Rows>,
    #[serde(rename = "A_bar", default, skip_serializing_if = "Option::is_none")]
    pub a_bar: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub edges: Vec<[usize; 2]>,
}

fn default_steps() -> usize {
    300
}
fn default_nu() -> usize {
    50
}
fn default_gamma() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_target_radius() -> f64 {
    DesignOptions::default().target_radius
}
fn default_stability_margin() -> f64 {
    DesignOptions::default().stability_margin
}
fn default_explicit_tol() -> f64 {
    5e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_nu")]
    pub nu: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Initial plant state; zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default = "default_target_radius")]
    pub target_radius: f64,
    #[serde(default = "default_stability_margin")]
    pub stability_margin: f64,
    #[serde(default = "default_true")]
    pub enlarge_fixed_modes: bool,
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default = "default_explicit_tol")]
    pub explicit_design_tol: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub system: SystemSection,
    pub nodes: Vec<NodeSection>,
    pub graph: GraphSection,
    pub inputs: Vec<Generator>,
    #[serde(default)]
    pub sim: SimSection,
}

fn matrix(field: impl Into<String>, rows: &Rows, cols_if_empty: usize) -> Result<Matrix> {
    numerics::matrix_from_rows(rows, cols_if_empty).map_err(|source| FileError::Matrix {
        field: field.into(),
        source,
    })
}

fn one_based(what: &str, idx: usize, count: usize) -> Result<usize> {
    if idx == 0 || idx > count {
        return Err(FileError::Invalid(format!(
            "{what} index {idx} outside 1..={count}"
        )));
    }
    Ok(idx - 1)
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| FileError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario files always serialize");
        s.push('\n');
        s
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        let a = matrix("system.A", &self.system.a, 0)?;
        let n = a.nrows();
        let b = matrix("system.B", &self.system.b, 0)?;
        let c_all = self
            .system
            .c
            .as_ref()
            .map(|c| matrix("system.C", c, n))
            .transpose()?;
        let mut nodes = Vec::new();
        let mut explicit = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let label = format!("nodes[{}]", i + 1);
            let c = match (&node.c_rows, &node.c) {
                (Some(rows), None) => {
                    let c_all = c_all.as_ref().ok_or_else(|| {
                        FileError::Invalid(format!("{label}.C_rows needs system.C"))
                    })?;
                    let idx = rows
                        .iter()
                        .map(|&r| one_based(&format!("{label}.C_rows"), r, c_all.nrows()))
                        .collect::<Result<Vec<_>>>()?;
                    c_all.select_rows(&idx)
                }
                (None, Some(c)) => matrix(format!("{label}.C"), c, n)?,
                _ => {
                    return Err(FileError::Invalid(format!(
                        "{label} needs exactly one of C_rows or C"
                    )))
                }
            };
            let known_inputs = node
                .known_input_cols
                .iter()
                .map(|&k| one_based(&format!("{label}.known_input_cols"), k, b.ncols()))
                .collect::<Result<Vec<_>>>()?;
            explicit.push(match (&node.p, &node.l) {
                (Some(p), Some(l)) => Some((
                    matrix(format!("{label}.P"), p, n)?,
                    matrix(format!("{label}.L"), l, c.nrows())?,
                )),
                (None, None) => None,
                _ => {
                    return Err(FileError::Invalid(format!(
                        "{label} must give both P and L or neither"
                    )))
                }
            });
            nodes.push(NodeModel { c, known_inputs });
        }
        let model = SystemModel::new(a, b, nodes)?;
        let topology = Topology::from_one_based(model.node_count(), &self.graph.edges)?;
        let sim = &self.sim;
        let x0 = match &sim.x0 {
            Some(v) => Vector::from_column_slice(v),
            None => Vector::zeros(n),
        };
        let fusion = FusionConfig {
            gamma: sim.gamma,
            nu: sim.nu,
            normalize: sim.normalize,
            alphas: sim
                .alphas
                .clone()
                .map_or(StepSizes::Auto, StepSizes::Explicit),
            warm_start: sim.warm_start,
        };
        let design = DesignOptions {
            target_radius: sim.target_radius,
            stability_margin: sim.stability_margin,
            enlarge_fixed_modes: sim.enlarge_fixed_modes,
            tol: Tolerance::default(),
        };
        let sim = SimConfig {
            steps: sim.steps,
            x0,
            fusion,
            design,
            explicit_design_tol: sim.explicit_design_tol,
        };
        let inputs = InputModel {
            channels: self.inputs.clone(),
        };
        Ok(Scenario::new(model, topology, inputs, explicit, sim)?)
    }

    /// Copy with every node's `P`, `L` and `A_bar` set from `designs`.
    pub fn with_designs(&self, designs: &[ObserverDesign]) -> Self {
        let mut out = self.clone();
        for (node, d) in out.nodes.iter_mut().zip(designs) {
            node.p = Some(numerics::matrix_to_rows(&d.p));
            node.l = Some(numerics::matrix_to_rows(&d.l));
            node.a_bar = Some(numerics::matrix_to_rows(&d.a_bar));
        }
        out
    }
}
