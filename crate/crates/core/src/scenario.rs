//! Plant simulation, input generation and the two-time-scale estimation loop:
//! local observers advance once per sample, then `ν` fusion rounds run
//! over the graph.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{self, FusionConfig, FusionConstants, FusionError, FusionPlan};
use crate::geometry::{
    self, DesignOptions, DesignResiduals, GeometryError, ObserverDesign, Reconstructability,
    SynthesisReport,
};
use crate::graph::Topology;
use crate::numerics::{self, Matrix, Vector};
use crate::observer::{LocalObserver, ObserverError};

/// Number of trailing samples whose median defines the steady-state error.
pub const STEADY_STATE_WINDOW: usize = 50;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("validation failed: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    ValidationFailed(Vec<Violation>),
    #[error("observer synthesis failed for node {node}: {source}")]
    Synthesis { node: usize, source: GeometryError },
    #[error("invalid observer design for node {node}: {source}")]
    InvalidDesign { node: usize, source: GeometryError },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// A failed structural assumption. Node numbers are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    GraphDisconnected {
        components: usize,
    },
    NotJointlyReconstructable {
        rank: usize,
        state_dim: usize,
        kernel: Matrix,
    },
    DesignInvariant {
        node: usize,
        residuals: DesignResiduals,
        tol: f64,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::GraphDisconnected { components } => {
                write!(
                    f,
                    "communication graph is not connected ({components} components)"
                )
            }
            Violation::NotJointlyReconstructable {
                rank, state_dim, ..
            } => write!(
                f,
                "joint reconstructability fails: rank of stacked T_i is {rank} < {state_dim}"
            ),
            Violation::DesignInvariant {
                node,
                residuals,
                tol,
            } => write!(
                f,
                "node {node} design violates its invariants at tol {tol:e} \
                 (|P Bbar| = {:.3e}, invariance = {:.3e}, spectral radius = {:.6})",
                residuals.decoupling, residuals.invariance, residuals.spectral_radius
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel {
    /// Output block `C_i` (`p_i x n`).
    pub c: Matrix,
    /// 0-based input channels this node knows, ascending.
    pub known_inputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: Matrix,
    pub b: Matrix,
    pub nodes: Vec<NodeModel>,
}

impl SystemModel {
    pub fn new(a: Matrix, b: Matrix, mut nodes: Vec<NodeModel>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(ScenarioError::DimensionMismatch(format!(
                "A is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(ScenarioError::DimensionMismatch(format!(
                "B has {} rows, A has {n}",
                b.nrows()
            )));
        }
        if nodes.is_empty() {
            return Err(ScenarioError::InvalidModel(
                "at least one node is required".into(),
            ));
        }
        for (i, node) in nodes.iter_mut().enumerate() {
            if node.c.ncols() != n {
                return Err(ScenarioError::DimensionMismatch(format!(
                    "C_{} has {} columns, A has {n}",
                    i + 1,
                    node.c.ncols()
                )));
            }
            node.known_inputs.sort_unstable();
            node.known_inputs.dedup();
            if let Some(&k) = node.known_inputs.iter().find(|&&k| k >= b.ncols()) {
                return Err(ScenarioError::InvalidModel(format!(
                    "node {} knows input {} but B has {} columns",
                    i + 1,
                    k + 1,
                    b.ncols()
                )));
            }
        }
        for m in [&a, &b] {
            numerics::ensure_finite(m).map_err(|e| ScenarioError::InvalidModel(e.to_string()))?;
        }
        Ok(Self { a, b, nodes })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn unknown_inputs(&self, i: usize) -> Vec<usize> {
        (0..self.input_dim())
            .filter(|k| !self.nodes[i].known_inputs.contains(k))
            .collect()
    }

    /// `B_i`.
    pub fn b_known(&self, i: usize) -> Matrix {
        self.b.select_columns(&self.nodes[i].known_inputs)
    }

    /// `Bbar_i`.
    pub fn b_unknown(&self, i: usize) -> Matrix {
        self.b.select_columns(&self.unknown_inputs(i))
    }

    /// All `C_i` stacked in node order.
    pub fn c_stacked(&self) -> Matrix {
        let mut c = Matrix::zeros(0, self.state_dim());
        for node in &self.nodes {
            c = numerics::vstack(&c, &node.c).expect("column counts checked at construction");
        }
        c
    }
}

pub fn plant_step(model: &SystemModel, x: &Vector, u: &Vector) -> Result<Vector> {
    if x.len() != model.state_dim() || u.len() != model.input_dim() {
        return Err(ScenarioError::DimensionMismatch(format!(
            "x has length {}, u has length {}; expected {} and {}",
            x.len(),
            u.len(),
            model.state_dim(),
            model.input_dim()
        )));
    }
    Ok(&model.a * x + &model.b * u)
}

pub fn measure(model: &SystemModel, x: &Vector, i: usize) -> Result<Vector> {
    if x.len() != model.state_dim() {
        return Err(ScenarioError::DimensionMismatch(format!(
            "x has length {}, expected {}",
            x.len(),
            model.state_dim()
        )));
    }
    let node = model
        .nodes
        .get(i)
        .ok_or_else(|| ScenarioError::InvalidModel(format!("no node {}", i + 1)))?;
    Ok(&node.c * x)
}

/// `(u_i, ubar_i)` with `B u = B_i u_i + Bbar_i ubar_i`.
pub fn partition_input(model: &SystemModel, u: &Vector, i: usize) -> (Vector, Vector) {
    let known = &model.nodes[i].known_inputs;
    let unknown = model.unknown_inputs(i);
    (u.select_rows(known), u.select_rows(&unknown))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sin,
    Cos,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub shape: Shape,
    pub amplitude: f64,
    /// Angular frequency in radians per step (ignored for constants).
    #[serde(default)]
    pub frequency: f64,
}

impl Generator {
    pub fn at(&self, t: usize) -> f64 {
        let phase = self.frequency * t as f64;
        match self.shape {
            Shape::Sin => self.amplitude * phase.sin(),
            Shape::Cos => self.amplitude * phase.cos(),
            Shape::Constant => self.amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputModel {
    pub channels: Vec<Generator>,
}

impl InputModel {
    pub fn at(&self, t: usize) -> Vector {
        Vector::from_iterator(self.channels.len(), self.channels.iter().map(|g| g.at(t)))
    }

    /// Copy with the amplitudes of the given channels multiplied by `factor`.
    pub fn scaled(&self, channels: &[usize], factor: f64) -> Self {
        let mut out = self.clone();
        for &k in channels {
            out.channels[k].amplitude *= factor;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub steps: usize,
    pub x0: Vector,
    pub fusion: FusionConfig,
    pub design: DesignOptions,
    /// Invariant tolerance applied to user-supplied `P`, `L` (typically
    /// typed with a few decimals). Synthesized designs use `design.tol.residual_tol`.
    pub explicit_design_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: SystemModel,
    pub topology: Topology,
    pub inputs: InputModel,
    /// Optional user-supplied `(P, L)` per node.
    pub explicit: Vec<Option<(Matrix, Matrix)>>,
    pub sim: SimConfig,
}

impl Scenario {
    pub fn new(
        model: SystemModel,
        topology: Topology,
        inputs: InputModel,
        explicit: Vec<Option<(Matrix, Matrix)>>,
        sim: SimConfig,
    ) -> Result<Self> {
        let nodes = model.node_count();
        if topology.node_count() != nodes {
            return Err(ScenarioError::InvalidModel(format!(
                "graph has {} nodes, model has {nodes}",
                topology.node_count()
            )));
        }
        if inputs.channels.len() != model.input_dim() {
            return Err(ScenarioError::InvalidModel(format!(
                "{} input generators for {} input channels",
                inputs.channels.len(),
                model.input_dim()
            )));
        }
        if explicit.len() != nodes {
            return Err(ScenarioError::InvalidModel(format!(
                "{} design slots for {nodes} nodes",
                explicit.len()
            )));
        }
        if sim.x0.len() != model.state_dim() {
            return Err(ScenarioError::DimensionMismatch(format!(
                "x0 has length {}, state dimension is {}",
                sim.x0.len(),
                model.state_dim()
            )));
        }
        sim.fusion.validate()?;
        sim.design
            .validate()
            .map_err(|e| ScenarioError::InvalidModel(e.to_string()))?;
        Ok(Self {
            model,
            topology,
            inputs,
            explicit,
            sim,
        })
    }

    pub fn with_fusion(&self, fusion: FusionConfig) -> Self {
        let mut out = self.clone();
        out.sim.fusion = fusion;
        out
    }
}

/// Designs plus every structural check, gathered without failing on the
/// first violation.
#[derive(Debug, Clone)]
pub struct Assessment {
    pub designs: Vec<ObserverDesign>,
    /// `Some` for synthesized nodes.
    pub reports: Vec<Option<SynthesisReport>>,
    pub residuals: Vec<DesignResiduals>,
    pub components: usize,
    pub reconstructability: Reconstructability,
    /// Constants of the un-normalized problem; `None` when an assumption fails.
    pub constants: Option<FusionConstants>,
    pub violations: Vec<Violation>,
}

impl Assessment {
    pub fn t_list(&self) -> Vec<Matrix> {
        self.designs.iter().map(|d| d.t.clone()).collect()
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Builds each node's design (synthesized or from supplied `P`, `L`) and
/// checks connectivity, joint reconstructability and design invariants.
pub fn assess(sc: &Scenario) -> Result<Assessment> {
    let model = &sc.model;
    let opts = &sc.sim.design;
    let a_norm = numerics::spectral_norm(&model.a);
    let mut designs = Vec::new();
    let mut reports = Vec::new();
    let mut residuals = Vec::new();
    let mut violations = Vec::new();
    for (i, node) in model.nodes.iter().enumerate() {
        let bbar = model.b_unknown(i);
        let (design, report, tol) = match &sc.explicit[i] {
            Some((p, l)) => {
                let d = ObserverDesign::from_parts(&model.a, &node.c, p, l, &opts.tol).map_err(
                    |source| ScenarioError::InvalidDesign {
                        node: i + 1,
                        source,
                    },
                )?;
                (d, None, sc.sim.explicit_design_tol)
            }
            None => {
                let (d, r) =
                    geometry::synthesize(&model.a, &node.c, &bbar, opts).map_err(|source| {
                        ScenarioError::Synthesis {
                            node: i + 1,
                            source,
                        }
                    })?;
                (d, Some(r), opts.tol.residual_tol)
            }
        };
        let res = design.residuals(&model.a, &node.c, &bbar);
        if !res.within(tol, a_norm) {
            violations.push(Violation::DesignInvariant {
                node: i + 1,
                residuals: res,
                tol,
            });
        }
        designs.push(design);
        reports.push(report);
        residuals.push(res);
    }
    let components = sc.topology.component_count();
    if components != 1 {
        violations.push(Violation::GraphDisconnected { components });
    }
    let t_list: Vec<Matrix> = designs.iter().map(|d| d.t.clone()).collect();
    let reconstructability = geometry::check_joint_reconstructability(&t_list, &opts.tol)
        .map_err(|e| ScenarioError::InvalidModel(e.to_string()))?;
    if !reconstructability.holds() {
        violations.push(Violation::NotJointlyReconstructable {
            rank: reconstructability.rank,
            state_dim: reconstructability.state_dim,
            kernel: reconstructability.kernel.clone(),
        });
    }
    let constants = if violations
        .iter()
        .any(|v| !matches!(v, Violation::DesignInvariant { .. }))
    {
        None
    } else {
        match fusion::compute_constants(&t_list, &sc.topology, sc.sim.fusion.gamma, &opts.tol) {
            Ok(c) => Some(c),
            Err(FusionError::JointReconstructabilityViolated { .. }) => {
                violations.push(Violation::NotJointlyReconstructable {
                    rank: reconstructability.rank,
                    state_dim: reconstructability.state_dim,
                    kernel: reconstructability.kernel.clone(),
                });
                None
            }
            Err(e) => return Err(e.into()),
        }
    };
    Ok(Assessment {
        designs,
        reports,
        residuals,
        components,
        reconstructability,
        constants,
        violations,
    })
}

/// [`assess`] that turns any violation into an error.
pub fn prepare(sc: &Scenario) -> Result<Assessment> {
    let a = assess(sc)?;
    if !a.passed() {
        return Err(ScenarioError::ValidationFailed(a.violations));
    }
    Ok(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vector,
    /// Last fusion iterate per node.
    pub estimates: Vec<Vector>,
    pub err_last: Vec<f64>,
    /// Error of the fusion iteration average per node.
    pub err_avg: Vec<f64>,
    /// `‖ξ_i − T_i x‖` per node.
    pub xi_err: Vec<f64>,
    /// Averaged-error bound at this step (uses the true `x(t)`).
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub steps: Vec<StepRecord>,
    pub node_count: usize,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

impl RunRecord {
    fn tail(&self) -> &[StepRecord] {
        &self.steps[self.steps.len().saturating_sub(STEADY_STATE_WINDOW)..]
    }

    /// Median of each node's last-iterate error over the final window.
    pub fn steady_state_errors(&self) -> Vec<f64> {
        (0..self.node_count)
            .map(|i| {
                median(
                    &mut self
                        .tail()
                        .iter()
                        .map(|s| s.err_last[i])
                        .collect::<Vec<_>>(),
                )
            })
            .collect()
    }

    pub fn steady_state_max(&self) -> f64 {
        self.steady_state_errors()
            .into_iter()
            .fold(f64::NAN, f64::max)
    }

    pub fn steady_state_avg_errors(&self) -> Vec<f64> {
        (0..self.node_count)
            .map(|i| median(&mut self.tail().iter().map(|s| s.err_avg[i]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn steady_state_bound(&self) -> f64 {
        median(&mut self.tail().iter().map(|s| s.bound).collect::<Vec<_>>())
    }

    /// Writes `t,node,err_last,err_avg,bound`; node 0 carries `‖x(t)‖`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            t: usize,
            node: usize,
            err_last: f64,
            err_avg: f64,
            bound: f64,
        }
        let mut w = csv::Writer::from_writer(out);
        for s in &self.steps {
            let x_norm = s.x.norm();
            w.serialize(Row {
                t: s.t,
                node: 0,
                err_last: x_norm,
                err_avg: x_norm,
                bound: s.bound,
            })?;
            for i in 0..self.node_count {
                w.serialize(Row {
                    t: s.t,
                    node: i + 1,
                    err_last: s.err_last[i],
                    err_avg: s.err_avg[i],
                    bound: s.bound,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the estimation loop on already-built designs.
pub fn simulate(sc: &Scenario, designs: &[ObserverDesign]) -> Result<RunRecord> {
    let model = &sc.model;
    let cfg = &sc.sim.fusion;
    let t_list: Vec<Matrix> = designs.iter().map(|d| d.t.clone()).collect();
    let plan = FusionPlan::new(&t_list, &sc.topology, cfg, &sc.sim.design.tol)?;
    let mut observers: Vec<LocalObserver> = designs
        .iter()
        .enumerate()
        .map(|(i, d)| LocalObserver::new(d.clone(), &model.b_known(i)))
        .collect();
    let nodes = model.node_count();
    let mut x = sc.sim.x0.clone();
    let mut previous: Option<Vec<Vector>> = None;
    let mut steps = Vec::with_capacity(sc.sim.steps);
    for t in 1..=sc.sim.steps {
        let u = sc.inputs.at(t - 1);
        for (i, obs) in observers.iter_mut().enumerate() {
            let y = measure(model, &x, i)?;
            let (u_i, _) = partition_input(model, &u, i);
            obs.step(&y, &u_i)?;
        }
        x = plant_step(model, &x, &u)?;
        let mut xi_list = Vec::with_capacity(nodes);
        let mut xi_err = Vec::with_capacity(nodes);
        for (i, obs) in observers.iter().enumerate() {
            let xi = obs.assemble_xi(&measure(model, &x, i)?);
            xi_err.push((&xi - &t_list[i] * &x).norm());
            xi_list.push(xi);
        }
        let init = if cfg.warm_start {
            previous.as_deref()
        } else {
            None
        };
        let out = plan.run(&xi_list, init)?;
        let err_last = out.last.iter().map(|e| (e - &x).norm()).collect();
        let err_avg = out.average.iter().map(|e| (e - &x).norm()).collect();
        let bound = plan.averaged_error_bound(&x);
        steps.push(StepRecord {
            t,
            x: x.clone(),
            estimates: out.last.clone(),
            err_last,
            err_avg,
            xi_err,
            bound,
        });
        previous = Some(out.last);
    }
    Ok(RunRecord {
        steps,
        node_count: nodes,
    })
}

/// Validates, builds the designs and runs the full estimation loop.
pub fn run_algorithm1(sc: &Scenario) -> Result<RunRecord> {
    let a = prepare(sc)?;
    simulate(sc, &a.designs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub nu: usize,
    pub mode: &'static str,
    pub steady_max: f64,
    pub steady_avg_max: f64,
    pub steady_bound: f64,
    /// Smallest eigenvalue of the un-normalized Hessian.
    pub mu: f64,
}

/// Steady-state summary for each `(ν, mode)` pair on the same scenario.
pub fn compare_modes(
    sc: &Scenario,
    nu_list: &[usize],
    normalize_modes: &[bool],
) -> Result<Vec<ComparisonRow>> {
    let a = prepare(sc)?;
    let mu = a.constants.as_ref().map_or(f64::NAN, |c| c.mu);
    let mut rows = Vec::new();
    for &normalize in normalize_modes {
        for &nu in nu_list {
            let variant = sc.with_fusion(FusionConfig {
                nu,
                normalize,
                ..sc.sim.fusion.clone()
            });
            let rec = simulate(&variant, &a.designs)?;
            rows.push(ComparisonRow {
                nu,
                mode: if normalize { "normalized" } else { "plain" },
                steady_max: rec.steady_state_max(),
                steady_avg_max: rec
                    .steady_state_avg_errors()
                    .into_iter()
                    .fold(f64::NAN, f64::max),
                steady_bound: rec.steady_state_bound(),
                mu,
            });
        }
    }
    Ok(rows)
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
