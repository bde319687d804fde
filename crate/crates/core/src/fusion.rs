//! Graph-constrained linearized ADMM for the distributed least-squares
//! fusion `min_x Σ_i ½‖T_i x − ξ_i‖²`, plus the centralized oracle,
//! Cholesky preconditioning and the averaged-error bound.

use thiserror::Error;

use crate::graph::{GraphError, Topology};
use crate::numerics::{self, Matrix, NumericsError, Tolerance, Vector};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("joint reconstructability violated: min eigenvalue of Σ T_i^T T_i is {mu:e}")]
    JointReconstructabilityViolated { mu: f64 },
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, FusionError>;

#[derive(Debug, Clone, PartialEq, Default)]
pub enum StepSizes {
    /// `α_i = 1 / (K_i + γ d_i)`.
    #[default]
    Auto,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub gamma: f64,
    pub nu: usize,
    pub normalize: bool,
    pub alphas: StepSizes,
    /// Start each time step from the previous estimate instead of zero.
    pub warm_start: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            nu: 50,
            normalize: true,
            alphas: StepSizes::Auto,
            warm_start: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(FusionError::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.nu == 0 {
            return Err(FusionError::InvalidConfig("nu must be at least 1".into()));
        }
        if let StepSizes::Explicit(a) = &self.alphas {
            if let Some(bad) = a.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(FusionError::InvalidConfig(format!(
                    "step size must be positive, got {bad}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFusionState {
    pub x: Vector,
    pub phi: Vector,
    pub psi: Vector,
}

impl NodeFusionState {
    pub fn zeros(n: usize) -> Self {
        Self::starting_at(Vector::zeros(n))
    }

    pub fn starting_at(x: Vector) -> Self {
        let n = x.len();
        Self {
            x,
            phi: Vector::zeros(n),
            psi: Vector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConstants {
    /// `K_i = ‖T_i^T T_i‖`.
    pub lipschitz: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Smallest eigenvalue of `Σ T_i^T T_i`.
    pub mu: f64,
    /// Algebraic connectivity of the graph.
    pub lambda2: f64,
}

fn state_dim(t_list: &[Matrix]) -> Result<usize> {
    let n = t_list
        .first()
        .map(Matrix::ncols)
        .ok_or_else(|| FusionError::DimensionMismatch("no nodes".into()))?;
    for (i, t) in t_list.iter().enumerate() {
        if t.ncols() != n {
            return Err(FusionError::DimensionMismatch(format!(
                "T_{} has {} columns, expected {n}",
                i + 1,
                t.ncols()
            )));
        }
    }
    Ok(n)
}

fn check_sizes(t_list: &[Matrix], xi_list: &[Vector], g: Option<&Topology>) -> Result<usize> {
    let n = state_dim(t_list)?;
    if xi_list.len() != t_list.len() {
        return Err(FusionError::DimensionMismatch(format!(
            "{} measurements for {} nodes",
            xi_list.len(),
            t_list.len()
        )));
    }
    for (i, (t, xi)) in t_list.iter().zip(xi_list).enumerate() {
        if t.nrows() != xi.len() {
            return Err(FusionError::DimensionMismatch(format!(
                "xi_{} has length {}, T_{} has {} rows",
                i + 1,
                xi.len(),
                i + 1,
                t.nrows()
            )));
        }
    }
    if let Some(g) = g {
        if g.node_count() != t_list.len() {
            return Err(FusionError::DimensionMismatch(format!(
                "graph has {} nodes, {} T_i given",
                g.node_count(),
                t_list.len()
            )));
        }
    }
    Ok(n)
}

pub fn hessian(t_list: &[Matrix]) -> Result<Matrix> {
    let n = state_dim(t_list)?;
    let mut h = Matrix::zeros(n, n);
    for t in t_list {
        h += t.transpose() * t;
    }
    Ok(numerics::symmetrize(&h))
}

fn mu_floor(h: &Matrix, tol: &Tolerance) -> f64 {
    tol.rel_rank_tol * numerics::spectral_norm(h).max(1.0)
}

pub fn compute_constants(
    t_list: &[Matrix],
    g: &Topology,
    gamma: f64,
    tol: &Tolerance,
) -> Result<FusionConstants> {
    let n = state_dim(t_list)?;
    if g.node_count() != t_list.len() {
        return Err(FusionError::DimensionMismatch(format!(
            "graph has {} nodes, {} T_i given",
            g.node_count(),
            t_list.len()
        )));
    }
    let h = hessian(t_list)?;
    let mu = if n == 0 {
        0.0
    } else {
        numerics::min_eigenvalue_symmetric(&h, tol)?
    };
    if mu.is_nan() || mu <= mu_floor(&h, tol) {
        return Err(FusionError::JointReconstructabilityViolated { mu });
    }
    let lipschitz: Vec<f64> = t_list
        .iter()
        .map(|t| numerics::spectral_norm(&(t.transpose() * t)))
        .collect();
    let alphas = lipschitz
        .iter()
        .enumerate()
        .map(|(i, k)| 1.0 / (k + gamma * g.degree(i) as f64))
        .collect();
    Ok(FusionConstants {
        lipschitz,
        alphas,
        mu,
        lambda2: g.algebraic_connectivity()?,
    })
}

/// Normal-equation solution `x* = (Σ T_i^T T_i)^{-1} Σ T_i^T ξ_i`.
pub fn centralized_solution(
    t_list: &[Matrix],
    xi_list: &[Vector],
    tol: &Tolerance,
) -> Result<Vector> {
    let n = check_sizes(t_list, xi_list, None)?;
    let h = hessian(t_list)?;
    let mut b = Vector::zeros(n);
    for (t, xi) in t_list.iter().zip(xi_list) {
        b += t.transpose() * xi;
    }
    numerics::solve_spd(&h, &b, tol).map_err(|e| match e {
        NumericsError::NotPositiveDefinite { pivot, .. } => {
            FusionError::JointReconstructabilityViolated { mu: pivot }
        }
        other => other.into(),
    })
}

/// Change of variables `z = S x` with `S^T S = Σ T_i^T T_i`, which turns the
/// aggregate Hessian into the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub s: Matrix,
    pub s_inv: Matrix,
}

impl Normalizer {
    pub fn new(t_list: &[Matrix], tol: &Tolerance) -> Result<Self> {
        let h = hessian(t_list)?;
        let s = numerics::cholesky_upper(&h, tol)?;
        let s_inv = numerics::upper_triangular_inverse(&s)?;
        Ok(Self { s, s_inv })
    }

    /// `T̃_i = T_i S^{-1}`.
    pub fn normalize_t(&self, t_list: &[Matrix]) -> Vec<Matrix> {
        t_list.iter().map(|t| t * &self.s_inv).collect()
    }

    pub fn normalize(&self, x: &Vector) -> Vector {
        &self.s * x
    }

    pub fn denormalize(&self, z: &Vector) -> Vector {
        &self.s_inv * z
    }
}

pub fn build_normalizer(t_list: &[Matrix], tol: &Tolerance) -> Result<Normalizer> {
    Normalizer::new(t_list, tol)
}

/// Right-hand side of the averaged-error bound
/// `(νμ)^{-1/2} (Σ 1/α_i)^{1/2} ‖x‖ + (νλ₂)^{-1/2} (2/γ + ½ Σ (1/α_i) ‖x‖²)`.
pub fn theorem1_bound(
    nu: usize,
    mu: f64,
    lambda2: f64,
    gamma: f64,
    alphas: &[f64],
    x_norm: f64,
) -> f64 {
    let nu = nu as f64;
    let inv_alpha: f64 = alphas.iter().map(|a| 1.0 / a).sum();
    inv_alpha.sqrt() * x_norm / (nu * mu).sqrt()
        + (2.0 / gamma + 0.5 * inv_alpha * x_norm * x_norm) / (nu * lambda2).sqrt()
}

/// Σ over edges of `‖x_i − x_j‖`.
pub fn consensus_residual(xs: &[Vector], g: &Topology) -> f64 {
    g.edges()
        .iter()
        .map(|&(i, j)| (&xs[i] - &xs[j]).norm())
        .sum()
}

fn round_core(
    states: &mut [NodeFusionState],
    grams: &[Matrix],
    txi: &[Vector],
    g: &Topology,
    alphas: &[f64],
    gamma: f64,
) {
    // x-phase reads only iteration-k values.
    let next: Vec<Vector> = states
        .iter()
        .enumerate()
        .map(|(i, st)| {
            let grad_free = &txi[i] - &st.phi - &st.psi;
            &st.x - (&grams[i] * &st.x) * alphas[i] + grad_free * alphas[i]
        })
        .collect();
    for (st, x) in states.iter_mut().zip(next) {
        st.x = x;
    }
    // phi/psi phase reads only iteration-(k+1) x values, neighbors ascending.
    let phis: Vec<Vector> = (0..states.len())
        .map(|i| {
            let mut acc = Vector::zeros(states[i].x.len());
            for &j in g.neighbors(i) {
                acc += &states[i].x - &states[j].x;
            }
            acc * (0.5 * gamma)
        })
        .collect();
    for (st, phi) in states.iter_mut().zip(phis) {
        st.psi += &phi;
        st.phi = phi;
    }
}

/// One synchronous round on the given `T_i` (no normalization applied).
pub fn ladmm_round(
    states: &mut [NodeFusionState],
    t_list: &[Matrix],
    xi_list: &[Vector],
    g: &Topology,
    alphas: &[f64],
    gamma: f64,
) -> Result<()> {
    let n = check_sizes(t_list, xi_list, Some(g))?;
    if states.len() != t_list.len() || alphas.len() != t_list.len() {
        return Err(FusionError::DimensionMismatch(format!(
            "{} states and {} step sizes for {} nodes",
            states.len(),
            alphas.len(),
            t_list.len()
        )));
    }
    if let Some(st) = states
        .iter()
        .find(|s| s.x.len() != n || s.phi.len() != n || s.psi.len() != n)
    {
        return Err(FusionError::DimensionMismatch(format!(
            "state lengths ({}, {}, {}) differ from n = {n}",
            st.x.len(),
            st.phi.len(),
            st.psi.len()
        )));
    }
    let grams: Vec<Matrix> = t_list.iter().map(|t| t.transpose() * t).collect();
    let txi: Vec<Vector> = t_list
        .iter()
        .zip(xi_list)
        .map(|(t, xi)| t.transpose() * xi)
        .collect();
    round_core(states, &grams, &txi, g, alphas, gamma);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// `x_i[ν]` in original coordinates.
    pub last: Vec<Vector>,
    /// `(1/ν) Σ_{k=1}^{ν} x_i[k]` in original coordinates.
    pub average: Vec<Vector>,
}

/// Everything about a fusion problem that does not change between time steps.
#[derive(Debug, Clone)]
pub struct FusionPlan {
    config: FusionConfig,
    topology: Topology,
    t_work: Vec<Matrix>,
    grams: Vec<Matrix>,
    t_work_transposed: Vec<Matrix>,
    alphas: Vec<f64>,
    normalizer: Option<Normalizer>,
    constants: FusionConstants,
}

impl FusionPlan {
    pub fn new(
        t_list: &[Matrix],
        g: &Topology,
        config: &FusionConfig,
        tol: &Tolerance,
    ) -> Result<Self> {
        config.validate()?;
        let original = compute_constants(t_list, g, config.gamma, tol)?;
        let normalizer = if config.normalize {
            Some(Normalizer::new(t_list, tol)?)
        } else {
            None
        };
        let t_work = match &normalizer {
            Some(nz) => nz.normalize_t(t_list),
            None => t_list.to_vec(),
        };
        let constants = if config.normalize {
            let mut c = compute_constants(&t_work, g, config.gamma, tol)?;
            c.lambda2 = original.lambda2;
            c
        } else {
            original
        };
        let alphas = match &config.alphas {
            StepSizes::Auto => constants.alphas.clone(),
            StepSizes::Explicit(a) => {
                if a.len() != t_list.len() {
                    return Err(FusionError::InvalidConfig(format!(
                        "{} step sizes for {} nodes",
                        a.len(),
                        t_list.len()
                    )));
                }
                a.clone()
            }
        };
        Ok(Self {
            config: config.clone(),
            topology: g.clone(),
            grams: t_work.iter().map(|t| t.transpose() * t).collect(),
            t_work_transposed: t_work.iter().map(Matrix::transpose).collect(),
            t_work,
            alphas,
            normalizer,
            constants,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    /// Step sizes actually used (on the normalized `T̃_i` when normalizing).
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Constants of the problem being iterated: with normalization on,
    /// `K_i` and `μ` refer to `T̃_i`.
    pub fn constants(&self) -> &FusionConstants {
        &self.constants
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    /// The matrices the iteration runs on (`T̃_i` when normalizing).
    pub fn working_t(&self) -> &[Matrix] {
        &self.t_work
    }

    /// Bound on `‖(1/ν) Σ_k x_i[k] − x‖` in original coordinates when the
    /// fusion optimum is `x`. With normalization the bound holds for `z = S x`
    /// and is mapped back through `‖S^{-1}‖`.
    pub fn averaged_error_bound(&self, x: &Vector) -> f64 {
        let c = &self.constants;
        match &self.normalizer {
            Some(nz) => {
                let z_norm = nz.normalize(x).norm();
                numerics::spectral_norm(&nz.s_inv)
                    * theorem1_bound(
                        self.config.nu,
                        c.mu,
                        c.lambda2,
                        self.config.gamma,
                        &self.alphas,
                        z_norm,
                    )
            }
            None => theorem1_bound(
                self.config.nu,
                c.mu,
                c.lambda2,
                self.config.gamma,
                &self.alphas,
                x.norm(),
            ),
        }
    }

    /// Runs `ν` rounds. `init` seeds `x_i[0]` (original coordinates);
    /// `None` starts from zero.
    pub fn run(&self, xi_list: &[Vector], init: Option<&[Vector]>) -> Result<FusionOutput> {
        let n = check_sizes(&self.t_work, xi_list, Some(&self.topology))?;
        let mut states: Vec<NodeFusionState> = match init {
            None => (0..xi_list.len())
                .map(|_| NodeFusionState::zeros(n))
                .collect(),
            Some(x0) => {
                if x0.len() != xi_list.len() || x0.iter().any(|x| x.len() != n) {
                    return Err(FusionError::DimensionMismatch(
                        "warm-start vectors do not match the problem".into(),
                    ));
                }
                x0.iter()
                    .map(|x| {
                        NodeFusionState::starting_at(match &self.normalizer {
                            Some(nz) => nz.normalize(x),
                            None => x.clone(),
                        })
                    })
                    .collect()
            }
        };
        let txi: Vec<Vector> = self
            .t_work_transposed
            .iter()
            .zip(xi_list)
            .map(|(tt, xi)| tt * xi)
            .collect();
        let mut sums: Vec<Vector> = (0..states.len()).map(|_| Vector::zeros(n)).collect();
        for _ in 0..self.config.nu {
            round_core(
                &mut states,
                &self.grams,
                &txi,
                &self.topology,
                &self.alphas,
                self.config.gamma,
            );
            for (acc, st) in sums.iter_mut().zip(&states) {
                *acc += &st.x;
            }
        }
        let scale = 1.0 / self.config.nu as f64;
        let back = |v: Vector| match &self.normalizer {
            Some(nz) => nz.denormalize(&v),
            None => v,
        };
        Ok(FusionOutput {
            last: states.into_iter().map(|st| back(st.x)).collect(),
            average: sums.into_iter().map(|s| back(s * scale)).collect(),
        })
    }
}

/// One-shot fusion from zero initial states.
pub fn run_fusion(
    xi_list: &[Vector],
    t_list: &[Matrix],
    g: &Topology,
    config: &FusionConfig,
    tol: &Tolerance,
) -> Result<FusionOutput> {
    FusionPlan::new(t_list, g, config, tol)?.run(xi_list, None)
}
