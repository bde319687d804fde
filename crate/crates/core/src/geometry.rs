//! Geometric synthesis of the per-node unknown-input observers.
//!
//! For node `i` with output map `C_i` and unknown-input map `Bbar_i` the
//! synthesis proceeds as follows:
//!
//! 1. `W*`, the infimal `(C_i, A)`-conditioned-invariant subspace containing
//!    `Im Bbar_i`, from the fixed point `W_0 = Im Bbar`,
//!    `W_{k+1} = Im Bbar + A (W_k ∩ Ker C)`.
//! 2. Every friend `L` of `W*` induces the same *fixed* modes on `X / W*`
//!    (the unobservable part of the induced quotient pair). Fixed modes on or
//!    outside the unit circle (up to `stability_margin`) cannot be moved, so
//!    their invariant subspace is folded into the subspace, giving `W_g`.
//! 3. The canonical projection `P` onto `X / W_g` and a friend gain `L` that
//!    leaves fixed modes alone and moves every assignable mode outside
//!    `target_radius` inside it.
//!
//! The resulting design satisfies `P Bbar = 0` and `Abar P = P (A + L C)`,
//! so the quotient error `s - P x` evolves as `e+ = Abar e` whatever the
//! unknown input does.

use nalgebra::Complex;
use thiserror::Error;

use crate::numerics::{self, Matrix, NumericsError, Tolerance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("subspace is not conditioned invariant (friend residual {residual:.3e})")]
    NotConditionedInvariant { residual: f64 },
    #[error(
        "quotient pair is not detectable: fixed modes {} are not inside the stability region; \
         supply P and L for this node explicitly",
        format_modes(.modes)
    )]
    NotStabilizable { modes: Vec<Complex<f64>> },
    #[error("eigenvalue assignment failed: {0}")]
    PlacementFailed(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("invalid design options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn format_modes(modes: &[Complex<f64>]) -> String {
    let parts: Vec<String> = modes
        .iter()
        .map(|z| format!("{:.4}{:+.4}i (|z|={:.4})", z.re, z.im, z.norm()))
        .collect();
    format!("[{}]", parts.join(", "))
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// A linear subspace of `R^n` held as an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    pub fn zero(ambient_dim: usize) -> Self {
        Self {
            basis: Matrix::zeros(ambient_dim, 0),
        }
    }

    pub fn full(ambient_dim: usize) -> Self {
        Self {
            basis: Matrix::identity(ambient_dim, ambient_dim),
        }
    }

    /// Subspace spanned by the columns of `generators`.
    pub fn span(generators: &Matrix, tol: &Tolerance) -> Self {
        Self {
            basis: numerics::range_basis(generators, tol),
        }
    }

    /// `Ker m` as a subspace of `R^{cols(m)}`.
    pub fn kernel_of(m: &Matrix, tol: &Tolerance) -> Self {
        Self {
            basis: numerics::kernel_basis(m, tol),
        }
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Sum of two subspaces.
    pub fn join(&self, other: &Matrix, tol: &Tolerance) -> Self {
        let stacked = numerics::hstack(&self.basis, other).expect("same ambient dimension");
        Self::span(&stacked, tol)
    }

    /// Distance of the columns of `m` from this subspace (spectral norm).
    pub fn containment_residual(&self, m: &Matrix) -> f64 {
        let proj = &self.basis * (self.basis.transpose() * m);
        numerics::spectral_norm(&(m - proj))
    }

    /// Largest principal angle to `other`, `pi/2` when dimensions differ.
    pub fn max_angle(&self, other: &Subspace) -> f64 {
        numerics::max_principal_angle(&self.basis, &other.basis)
    }
}

/// Options controlling observer synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    /// Assignable quotient eigenvalues with modulus at or above this radius
    /// are moved to `0.9 * target_radius` (keeping their argument).
    pub target_radius: f64,
    /// Modes with modulus at or above `1 - stability_margin` count as unstable.
    pub stability_margin: f64,
    /// Fold unstable fixed quotient modes into the subspace (`W* -> W_g`).
    /// When off, such modes make synthesis fail with `NotStabilizable`.
    pub enlarge_fixed_modes: bool,
    pub tol: Tolerance,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            target_radius: 0.5,
            stability_margin: 1e-3,
            enlarge_fixed_modes: true,
            tol: Tolerance::default(),
        }
    }
}

impl DesignOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.target_radius) {
            return Err(GeometryError::InvalidOptions(format!(
                "target_radius must lie in [0, 1), got {}",
                self.target_radius
            )));
        }
        if !(self.stability_margin >= 0.0 && self.stability_margin < 1.0) {
            return Err(GeometryError::InvalidOptions(format!(
                "stability_margin must lie in [0, 1), got {}",
                self.stability_margin
            )));
        }
        Ok(())
    }

    fn unstable_threshold(&self) -> f64 {
        1.0 - self.stability_margin
    }
}

fn check_dims(a: &Matrix, c: &Matrix, bbar: &Matrix) -> Result<()> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(GeometryError::DimensionMismatch(format!(
            "A must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if c.ncols() != n {
        return Err(GeometryError::DimensionMismatch(format!(
            "C has {} columns, A is {n}x{n}",
            c.ncols()
        )));
    }
    if bbar.nrows() != n {
        return Err(GeometryError::DimensionMismatch(format!(
            "Bbar has {} rows, A is {n}x{n}",
            bbar.nrows()
        )));
    }
    Ok(())
}

/// Infimal `(C, A)`-conditioned-invariant subspace containing `Im bbar`,
/// together with the dimension of every iterate of the recursion.
pub fn infimal_conditioned_invariant_trace(
    a: &Matrix,
    c: &Matrix,
    bbar: &Matrix,
    tol: &Tolerance,
) -> Result<(Subspace, Vec<usize>)> {
    check_dims(a, c, bbar)?;
    let n = a.nrows();
    let mut w = Subspace::span(bbar, tol);
    let mut dims = vec![w.dim()];
    for _ in 0..=n {
        if w.dim() == 0 || w.dim() == n {
            break;
        }
        let v = w.basis();
        let meet = v * numerics::kernel_basis(&(c * v), tol);
        let grown = Subspace::span(&numerics::hstack(bbar, &(a * meet))?, tol);
        let done = grown.dim() == w.dim();
        w = grown;
        dims.push(w.dim());
        if done {
            break;
        }
    }
    Ok((w, dims))
}

pub fn infimal_conditioned_invariant(
    a: &Matrix,
    c: &Matrix,
    bbar: &Matrix,
    tol: &Tolerance,
) -> Result<Subspace> {
    infimal_conditioned_invariant_trace(a, c, bbar, tol).map(|(w, _)| w)
}

/// Orthonormal-row projection `P` with `Ker P = W`.
///
/// Rows are produced by pivoted Gram-Schmidt on the columns of the orthogonal
/// projector `I - W W^T`, so they depend on the subspace and not on the basis
/// chosen for it. Each row is signed so that its largest-magnitude entry is
/// positive.
pub fn canonical_projection(w: &Subspace) -> Matrix {
    let n = w.ambient_dim();
    let q = n - w.dim();
    let v = w.basis();
    let projector = Matrix::identity(n, n) - v * v.transpose();
    let mut residual = projector.clone();
    let mut rows = Matrix::zeros(q, n);
    let mut used = vec![false; n];
    for r in 0..q {
        let mut best = None;
        let mut best_norm = -1.0;
        for (j, taken) in used.iter().enumerate() {
            if *taken {
                continue;
            }
            let norm = residual.column(j).norm();
            if norm > best_norm * (1.0 + 1e-12) {
                best_norm = norm;
                best = Some(j);
            }
        }
        let j = best.expect("complement dimension exceeds column count");
        used[j] = true;
        let mut vec = residual.column(j).into_owned();
        // Re-orthogonalize against accepted rows and W for stability.
        for _ in 0..2 {
            for k in 0..r {
                let row = rows.row(k).transpose();
                vec -= &row * row.dot(&vec);
            }
            vec -= v * (v.transpose() * &vec);
        }
        vec /= vec.norm();
        let pivot = vec
            .iter()
            .fold(0.0_f64, |m, x| if x.abs() > m.abs() { *x } else { m });
        if pivot < 0.0 {
            vec = -vec;
        }
        rows.row_mut(r).copy_from(&vec.transpose());
        for (k, taken) in used.iter().enumerate() {
            if !taken {
                let col = residual.column(k).into_owned();
                residual.set_column(k, &(&col - &vec * vec.dot(&col)));
            }
        }
    }
    rows
}

/// Quotient map `Abar` solving `Abar P = P (A + L C)` through the right
/// pseudo-inverse of the full-row-rank `P`.
pub fn quotient_map(p: &Matrix, a: &Matrix, l: &Matrix, c: &Matrix, tol: &Tolerance) -> Matrix {
    if p.nrows() == 0 {
        return Matrix::zeros(0, 0);
    }
    let closed = a + l * c;
    p * closed * numerics::pseudo_inverse(p, tol)
}

/// Quantities induced on `X / W` by one particular friend of `W`.
struct Quotient {
    p: Matrix,
    friend: Matrix,
    a_bar: Matrix,
    /// Output directions free of the invariance constraint (orthonormal columns).
    free_outputs: Matrix,
    /// `free_outputs^T C P^T`.
    c_bar: Matrix,
}

fn quotient(a: &Matrix, c: &Matrix, w: &Subspace, tol: &Tolerance) -> Result<Quotient> {
    let n = a.nrows();
    let p_out = c.nrows();
    let p = canonical_projection(w);
    let v = w.basis();
    let friend = if w.dim() == 0 {
        Matrix::zeros(n, p_out)
    } else {
        let cv = c * v;
        // P L0 (C V) = -P A V is solvable exactly when W is conditioned invariant.
        -(p.transpose() * (&p * a * v) * numerics::pseudo_inverse(&cv, tol))
    };
    let residual = numerics::spectral_norm(&(&p * (a + &friend * c) * v));
    if residual > tol.residual_tol * (1.0 + numerics::spectral_norm(a)) {
        return Err(GeometryError::NotConditionedInvariant { residual });
    }
    let free_outputs = if w.dim() == 0 {
        Matrix::identity(p_out, p_out)
    } else {
        numerics::orthogonal_complement(&numerics::range_basis(&(c * v), tol), tol)
    };
    let a_bar = &p * (a + &friend * c) * p.transpose();
    let c_bar = free_outputs.transpose() * c * p.transpose();
    Ok(Quotient {
        p,
        friend,
        a_bar,
        free_outputs,
        c_bar,
    })
}

/// Unobservable subspace of `(a, c)` as orthonormal columns.
fn unobservable_subspace(a: &Matrix, c: &Matrix, tol: &Tolerance) -> Matrix {
    let q = a.nrows();
    if c.nrows() == 0 {
        return Matrix::identity(q, q);
    }
    let scale = numerics::spectral_norm(a).max(1.0);
    let mut block = c.clone();
    let mut stacked = Matrix::zeros(0, q);
    for _ in 0..q {
        stacked = numerics::vstack(&stacked, &block).expect("same column count");
        block = (&block * a) / scale;
    }
    numerics::kernel_basis(&stacked, tol)
}

/// Orthonormal basis of the invariant subspace of `m` belonging to the
/// eigenvalues picked by `select` (counted with multiplicity). Computed as the
/// kernel of the real polynomial that vanishes on the selected eigenvalues.
fn invariant_subspace(m: &Matrix, select: impl Fn(Complex<f64>) -> bool) -> Matrix {
    let q = m.nrows();
    let eig = numerics::eigenvalues(m);
    let picked: Vec<Complex<f64>> = eig.iter().copied().filter(|z| select(*z)).collect();
    if picked.is_empty() {
        return Matrix::zeros(q, 0);
    }
    if picked.len() == q {
        return Matrix::identity(q, q);
    }
    let scale = numerics::spectral_norm(m).max(1e-300);
    let ident = Matrix::identity(q, q);
    let mut poly = ident.clone();
    let mut i = 0;
    let mut sorted = picked.clone();
    sorted.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    while i < sorted.len() {
        let z = sorted[i];
        if z.im.abs() > 1e-12 * scale.max(1.0) && i + 1 < sorted.len() {
            // Conjugate pair: (m - z)(m - conj z) = m^2 - 2 Re z m + |z|^2.
            let factor = (m * m - m * (2.0 * z.re) + &ident * z.norm_sqr()) / (scale * scale);
            poly = factor * poly;
            i += 2;
        } else {
            poly = (m - &ident * z.re) / scale * poly;
            i += 1;
        }
    }
    numerics::range_basis(
        &numerics::smallest_right_singular(&poly, picked.len()),
        &Tolerance::default(),
    )
}

/// Monic real polynomial with the given roots, highest degree first
/// (`[1, c_{k-1}, ..., c_0]`).
fn real_polynomial(roots: &[Complex<f64>]) -> Vec<f64> {
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c * r;
        }
        coeffs = next;
    }
    coeffs.iter().map(|c| c.re).collect()
}

fn generic_vector(len: usize, seed: usize) -> Vec<f64> {
    (0..len)
        .map(|i| (1.3 * (i + 1) as f64 * (seed + 1) as f64 + 0.7).sin())
        .collect()
}

/// Output-injection gain `G` placing `eig(f + G h)` at `desired`.
///
/// Dual of single-input pole placement: the output channels are mixed into
/// one (`h^T w`) and Ackermann's formula is applied to `(f^T, h^T w)`. When
/// `f` is not cyclic a deterministic pre-injection is applied first.
fn place_observer_poles(f: &Matrix, h: &Matrix, desired: &[Complex<f64>]) -> Result<Matrix> {
    let b = f.nrows();
    let r = h.nrows();
    if r == 0 {
        return Err(GeometryError::PlacementFailed(
            "no free output channels".into(),
        ));
    }
    let coeffs = real_polynomial(desired);
    let ac = f.transpose();
    let bc = h.transpose();
    let scale = numerics::spectral_norm(&ac).max(1.0) / numerics::spectral_norm(&bc).max(1e-12);

    let mut mixers: Vec<Vec<f64>> = (0..r)
        .map(|j| (0..r).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    mixers.push(vec![1.0; r]);
    mixers.extend((0..4).map(|s| generic_vector(r, s)));

    for pre in 0..3 {
        let pre_gain = if pre == 0 {
            Matrix::zeros(r, b)
        } else {
            Matrix::from_vec(r, b, generic_vector(r * b, 10 + pre)) * (0.5 * scale)
        };
        let a_pre = &ac - &bc * &pre_gain;
        let mut best: Option<(f64, Matrix, crate::Vector)> = None;
        for w in &mixers {
            let w = crate::Vector::from_vec(w.clone());
            let bw = &bc * &w;
            let mut ctrb = Matrix::zeros(b, b);
            let mut col = bw.clone();
            for k in 0..b {
                ctrb.set_column(k, &col);
                col = &a_pre * col;
            }
            let sv = numerics::singular_values(&ctrb);
            let rcond = match (sv.first(), sv.last()) {
                (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
                _ => 0.0,
            };
            if best.as_ref().is_none_or(|(c, _, _)| rcond > *c) {
                best = Some((rcond, ctrb, w));
            }
        }
        let Some((rcond, ctrb, w)) = best else {
            continue;
        };
        if rcond < 1e-12 {
            continue;
        }
        // phi(a_pre) by Horner.
        let mut phi = Matrix::zeros(b, b);
        for &c in &coeffs {
            phi = &phi * &a_pre + Matrix::identity(b, b) * c;
        }
        let Some(inv) = ctrb.try_inverse() else {
            continue;
        };
        let last = inv.row(b - 1).into_owned();
        let k_row = last * phi;
        let gain = &pre_gain + &w * k_row;
        return Ok(-gain.transpose());
    }
    Err(GeometryError::PlacementFailed(
        "no output mixing makes the pair cyclic and observable".into(),
    ))
}

/// Friend gain `L` of `w` with `(A + L C) w ⊆ w` whose quotient map has its
/// assignable eigenvalues inside `target_radius`. Eigenvalues already inside
/// are left in place; fixed modes are left in place and must be stable.
pub fn friend_gain(a: &Matrix, c: &Matrix, w: &Subspace, opts: &DesignOptions) -> Result<Matrix> {
    opts.validate()?;
    check_dims(a, c, &Matrix::zeros(a.nrows(), 0))?;
    let tol = &opts.tol;
    let qt = quotient(a, c, w, tol)?;
    let q = qt.p.nrows();
    if q == 0 {
        return Ok(qt.friend);
    }

    let unobs = unobservable_subspace(&qt.a_bar, &qt.c_bar, tol);
    let fixed = unobs.transpose() * &qt.a_bar * &unobs;
    let unstable: Vec<Complex<f64>> = numerics::eigenvalues(&fixed)
        .into_iter()
        .filter(|z| z.norm() >= opts.unstable_threshold())
        .collect();
    if !unstable.is_empty() {
        return Err(GeometryError::NotStabilizable { modes: unstable });
    }

    let observable = numerics::orthogonal_complement(&unobs, tol);
    if observable.ncols() == 0 {
        return Ok(qt.friend);
    }
    let a_oo = observable.transpose() * &qt.a_bar * &observable;
    let c_o = &qt.c_bar * &observable;
    let bad = |z: Complex<f64>| z.norm() >= opts.target_radius;
    let moved = invariant_subspace(&a_oo, bad);
    if moved.ncols() == 0 {
        return Ok(qt.friend);
    }
    let t_bb = moved.transpose() * &a_oo * &moved;
    let desired: Vec<Complex<f64>> = numerics::eigenvalues(&t_bb)
        .into_iter()
        .map(|z| {
            let m = z.norm();
            if m == 0.0 {
                z
            } else {
                z * (0.9 * opts.target_radius / m)
            }
        })
        .collect();
    let g_b = place_observer_poles(&t_bb, &(&c_o * &moved), &desired)?;
    let g = &observable * &moved * g_b;
    let gain = &qt.friend + qt.p.transpose() * g * qt.free_outputs.transpose();

    let a_bar = quotient_map(&qt.p, a, &gain, c, tol);
    let radius = numerics::spectral_radius(&a_bar);
    if radius >= 1.0 {
        return Err(GeometryError::PlacementFailed(format!(
            "closed quotient map has spectral radius {radius:.6}"
        )));
    }
    Ok(gain)
}

/// A synthesized or user-supplied node observer.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverDesign {
    /// Canonical projection onto the quotient (`q x n`, orthonormal rows when synthesized).
    pub p: Matrix,
    /// Output-injection gain (`n x p_i`).
    pub l: Matrix,
    /// Induced quotient map (`q x q`).
    pub a_bar: Matrix,
    /// `[P; C_i]`.
    pub t: Matrix,
}

/// Invariant residuals of a design against its plant data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignResiduals {
    /// `|P Bbar|`.
    pub decoupling: f64,
    /// `|Abar P - P (A + L C)|`.
    pub invariance: f64,
    pub spectral_radius: f64,
}

impl DesignResiduals {
    /// True when `|P Bbar| <= tol`, `|Abar P - P(A + LC)| <= tol (1 + |A|)`
    /// and the quotient map is Schur stable.
    pub fn within(&self, tol: f64, a_norm: f64) -> bool {
        self.decoupling <= tol
            && self.invariance <= tol * (1.0 + a_norm)
            && self.spectral_radius < 1.0
    }
}

impl ObserverDesign {
    /// Assembles a design from `P` and `L`, deriving `Abar` and `T`.
    ///
    /// An all-zero `P` is the trivial quotient and is normalized to zero rows.
    pub fn from_parts(
        a: &Matrix,
        c: &Matrix,
        p: &Matrix,
        l: &Matrix,
        tol: &Tolerance,
    ) -> Result<Self> {
        let n = a.nrows();
        check_dims(a, c, &Matrix::zeros(n, 0))?;
        if p.ncols() != n {
            return Err(GeometryError::DimensionMismatch(format!(
                "P has {} columns, expected {n}",
                p.ncols()
            )));
        }
        if l.shape() != (n, c.nrows()) {
            return Err(GeometryError::DimensionMismatch(format!(
                "L is {}x{}, expected {n}x{}",
                l.nrows(),
                l.ncols(),
                c.nrows()
            )));
        }
        let p = if numerics::max_abs(p) == 0.0 {
            Matrix::zeros(0, n)
        } else {
            p.clone()
        };
        if numerics::numerical_rank(&p, tol) != p.nrows() {
            return Err(GeometryError::InvalidDesign(format!(
                "P ({}x{}) does not have full row rank",
                p.nrows(),
                p.ncols()
            )));
        }
        let a_bar = quotient_map(&p, a, l, c, tol);
        let t = numerics::vstack(&p, c)?;
        Ok(Self {
            p,
            l: l.clone(),
            a_bar,
            t,
        })
    }

    pub fn quotient_dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn residuals(&self, a: &Matrix, c: &Matrix, bbar: &Matrix) -> DesignResiduals {
        let decoupling = if bbar.ncols() == 0 || self.p.nrows() == 0 {
            0.0
        } else {
            numerics::spectral_norm(&(&self.p * bbar))
        };
        let invariance =
            numerics::spectral_norm(&(&self.a_bar * &self.p - &self.p * (a + &self.l * c)));
        DesignResiduals {
            decoupling,
            invariance,
            spectral_radius: numerics::spectral_radius(&self.a_bar),
        }
    }
}

/// Diagnostics produced alongside a synthesized design.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisReport {
    /// Dimension of the infimal conditioned-invariant subspace `W*`.
    pub infimal_dim: usize,
    /// Dimension after folding in unstable fixed modes (`W_g`).
    pub enlarged_dim: usize,
    /// Unstable fixed modes that were folded in.
    pub folded_modes: Vec<Complex<f64>>,
}

/// Full node synthesis: `W*`, enlargement to `W_g`, projection and friend gain.
pub fn synthesize(
    a: &Matrix,
    c: &Matrix,
    bbar: &Matrix,
    opts: &DesignOptions,
) -> Result<(ObserverDesign, SynthesisReport)> {
    opts.validate()?;
    check_dims(a, c, bbar)?;
    let tol = &opts.tol;
    let n = a.nrows();
    let w_star = infimal_conditioned_invariant(a, c, bbar, tol)?;
    let mut w = w_star.clone();
    let mut folded = Vec::new();
    if opts.enlarge_fixed_modes {
        for _ in 0..=n {
            if w.dim() == n {
                break;
            }
            let qt = quotient(a, c, &w, tol)?;
            let unobs = unobservable_subspace(&qt.a_bar, &qt.c_bar, tol);
            if unobs.ncols() == 0 {
                break;
            }
            let fixed = unobs.transpose() * &qt.a_bar * &unobs;
            let threshold = opts.unstable_threshold();
            let unstable = invariant_subspace(&fixed, |z| z.norm() >= threshold);
            if unstable.ncols() == 0 {
                break;
            }
            folded.extend(numerics::eigenvalues(
                &(unstable.transpose() * &fixed * &unstable),
            ));
            w = w.join(&(qt.p.transpose() * &unobs * unstable), tol);
        }
    }
    let l = friend_gain(a, c, &w, opts)?;
    let p = canonical_projection(&w);
    let design = ObserverDesign::from_parts(a, c, &p, &l, tol)?;
    let report = SynthesisReport {
        infimal_dim: w_star.dim(),
        enlarged_dim: w.dim(),
        folded_modes: folded,
    };
    Ok((design, report))
}

pub fn build_design(
    a: &Matrix,
    c: &Matrix,
    bbar: &Matrix,
    opts: &DesignOptions,
) -> Result<ObserverDesign> {
    synthesize(a, c, bbar, opts).map(|(d, _)| d)
}

/// Outcome of the joint reconstructability check on the stacked `T_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstructability {
    pub rank: usize,
    pub state_dim: usize,
    /// Orthonormal basis of `∩ Ker T_i` (empty when the check passes).
    pub kernel: Matrix,
}

impl Reconstructability {
    pub fn holds(&self) -> bool {
        self.rank == self.state_dim
    }
}

pub fn check_joint_reconstructability(
    t_list: &[Matrix],
    tol: &Tolerance,
) -> Result<Reconstructability> {
    let n = t_list.first().map_or(0, Matrix::ncols);
    let mut stacked = Matrix::zeros(0, n);
    for (i, t) in t_list.iter().enumerate() {
        if t.ncols() != n {
            return Err(GeometryError::DimensionMismatch(format!(
                "T_{} has {} columns, expected {n}",
                i + 1,
                t.ncols()
            )));
        }
        stacked = numerics::vstack(&stacked, t)?;
    }
    let rank = numerics::numerical_rank(&stacked, tol);
    Ok(Reconstructability {
        rank,
        state_dim: n,
        kernel: numerics::kernel_basis(&stacked, tol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn mat(r: usize, c: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(r, c, data)
    }

    #[test]
    fn empty_bbar_gives_zero_subspace() {
        let a = Matrix::identity(3, 3) * 0.5;
        let c = mat(1, 3, &[1.0, 0.0, 0.0]);
        let w = infimal_conditioned_invariant(&a, &c, &Matrix::zeros(3, 0), &tol()).unwrap();
        assert_eq!(w.dim(), 0);
    }

    #[test]
    fn full_measurement_stops_growth() {
        let a = mat(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let bbar = mat(3, 1, &[1.0, 1.0, 0.0]);
        let w = infimal_conditioned_invariant(&a, &Matrix::identity(3, 3), &bbar, &tol()).unwrap();
        assert_eq!(w.dim(), 1);
        assert!(w.max_angle(&Subspace::span(&bbar, &tol())) < 1e-12);
    }

    #[test]
    fn chain_grows_through_unmeasured_states() {
        // Shift chain x1 -> x2 -> x3 with only x3 measured: the disturbance on
        // x1 spreads into x2 before it becomes visible.
        let a = mat(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let c = mat(1, 3, &[0.0, 0.0, 1.0]);
        let bbar = mat(3, 1, &[1.0, 0.0, 0.0]);
        let (w, dims) = infimal_conditioned_invariant_trace(&a, &c, &bbar, &tol()).unwrap();
        assert_eq!(w.dim(), 3);
        assert_eq!(dims, vec![1, 2, 3]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = Matrix::identity(3, 3);
        let c = Matrix::identity(2, 2);
        assert!(matches!(
            infimal_conditioned_invariant(&a, &c, &Matrix::zeros(3, 0), &tol()),
            Err(GeometryError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn projection_of_zero_and_axis_subspaces() {
        let p = canonical_projection(&Subspace::zero(3));
        assert!(numerics::max_abs(&(&p * p.transpose() - Matrix::identity(3, 3))) < 1e-14);
        assert_eq!(p.shape(), (3, 3));

        let e1 = Subspace::span(&mat(3, 1, &[1.0, 0.0, 0.0]), &tol());
        let p = canonical_projection(&e1);
        assert_eq!(p.shape(), (2, 3));
        assert!(p.column(0).norm() < 1e-14);
        assert!(numerics::max_abs(&(&p * p.transpose() - Matrix::identity(2, 2))) < 1e-14);
        assert_eq!(canonical_projection(&Subspace::full(4)).shape(), (0, 4));
    }

    #[test]
    fn projection_sign_convention() {
        let w = Subspace::span(&mat(3, 1, &[1.0, -1.0, 0.3]), &tol());
        let p = canonical_projection(&w);
        for row in p.row_iter() {
            let big = row
                .iter()
                .fold(0.0_f64, |m, x| if x.abs() > m.abs() { *x } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn deadbeat_scalar_gain() {
        let a = mat(1, 1, &[0.5]);
        let c = mat(1, 1, &[1.0]);
        let opts = DesignOptions {
            target_radius: 0.0,
            ..DesignOptions::default()
        };
        let l = friend_gain(&a, &c, &Subspace::zero(1), &opts).unwrap();
        assert_abs_diff_eq!(l[(0, 0)], -0.5, epsilon = 1e-12);
        let d = ObserverDesign::from_parts(&a, &c, &Matrix::identity(1, 1), &l, &tol()).unwrap();
        assert!(d.a_bar[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn stable_plant_needs_no_gain() {
        let a = mat(2, 2, &[0.3, 0.1, 0.0, 0.2]);
        let c = mat(1, 2, &[1.0, 0.0]);
        let l = friend_gain(&a, &c, &Subspace::zero(2), &DesignOptions::default()).unwrap();
        assert_eq!(l, Matrix::zeros(2, 1));
    }

    #[test]
    fn full_measurement_design() {
        let a = mat(2, 2, &[1.1, 0.4, -0.3, 0.9]);
        let c = Matrix::identity(2, 2);
        let d = build_design(&a, &c, &Matrix::zeros(2, 0), &DesignOptions::default()).unwrap();
        assert_eq!(d.p.shape(), (2, 2));
        assert!(numerics::max_abs(&(&d.p * d.p.transpose() - Matrix::identity(2, 2))) < 1e-14);
        assert!(numerics::spectral_radius(&d.a_bar) < 0.5);
        assert_eq!(d.t.shape(), (4, 2));
    }

    #[test]
    fn unobservable_unstable_mode_is_rejected_without_enlargement() {
        let a = mat(1, 1, &[2.0]);
        let c = mat(1, 1, &[0.0]);
        let opts = DesignOptions {
            enlarge_fixed_modes: false,
            ..DesignOptions::default()
        };
        match build_design(&a, &c, &Matrix::zeros(1, 0), &opts) {
            Err(GeometryError::NotStabilizable { modes }) => {
                assert_eq!(modes.len(), 1);
                assert_abs_diff_eq!(modes[0].re, 2.0, epsilon = 1e-12);
            }
            other => panic!("expected NotStabilizable, got {other:?}"),
        }
        // With enlargement the mode is folded away and the node keeps only y.
        let (d, report) =
            synthesize(&a, &c, &Matrix::zeros(1, 0), &DesignOptions::default()).unwrap();
        assert_eq!(d.quotient_dim(), 0);
        assert_eq!(report.enlarged_dim, 1);
    }

    #[test]
    fn repeated_eigenvalues_are_placed() {
        // A = 0.9 I is not cyclic; two outputs are needed and the
        // single-channel reduction must go through pre-injection.
        let a = Matrix::identity(3, 3) * 0.9;
        let c = mat(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let d = build_design(&a, &c, &Matrix::zeros(3, 0), &DesignOptions::default()).unwrap();
        assert!(numerics::spectral_radius(&d.a_bar) < 0.5);

        let a = mat(2, 2, &[0.95, 0.0, 0.0, 0.95]);
        let c = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let d = build_design(&a, &c, &Matrix::zeros(2, 0), &DesignOptions::default()).unwrap();
        assert!(numerics::spectral_radius(&d.a_bar) < 0.5);
    }

    #[test]
    fn good_eigenvalues_stay_in_place() {
        // Eigenvalues 1.2 and 0.1: only the first is moved.
        let a = mat(2, 2, &[1.2, 0.0, 0.0, 0.1]);
        let c = mat(1, 2, &[1.0, 1.0]);
        let d = build_design(&a, &c, &Matrix::zeros(2, 0), &DesignOptions::default()).unwrap();
        let mut mods: Vec<f64> = numerics::eigenvalues(&d.a_bar)
            .iter()
            .map(|z| z.norm())
            .collect();
        mods.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(mods[0], 0.1, epsilon = 1e-9);
        assert_abs_diff_eq!(mods[1], 0.45, epsilon = 1e-9);
    }

    #[test]
    fn disturbance_decoupled_design() {
        // Disturbance enters x2, which is not measured by this node.
        let a = mat(3, 3, &[0.9, 0.2, 0.0, 0.0, 0.8, 0.1, 0.3, 0.0, 1.05]);
        let c = mat(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let bbar = mat(3, 1, &[0.0, 1.0, 0.0]);
        let d = build_design(&a, &c, &bbar, &DesignOptions::default()).unwrap();
        let r = d.residuals(&a, &c, &bbar);
        assert!(r.within(1e-8, numerics::spectral_norm(&a)), "{r:?}");
    }

    #[test]
    fn explicit_zero_row_projection_is_normalized() {
        let a = Matrix::identity(2, 2);
        let c = mat(1, 2, &[1.0, 0.0]);
        let d =
            ObserverDesign::from_parts(&a, &c, &Matrix::zeros(1, 2), &Matrix::zeros(2, 1), &tol())
                .unwrap();
        assert_eq!(d.quotient_dim(), 0);
        assert_eq!(d.t, c);
        assert!(matches!(
            ObserverDesign::from_parts(
                &a,
                &c,
                &mat(2, 2, &[1.0, 0.0, 2.0, 0.0]),
                &Matrix::zeros(2, 1),
                &tol()
            ),
            Err(GeometryError::InvalidDesign(_))
        ));
    }

    #[test]
    fn joint_reconstructability_examples() {
        let ok = check_joint_reconstructability(&[Matrix::identity(3, 3)], &tol()).unwrap();
        assert!(ok.holds());
        assert_eq!(ok.kernel.ncols(), 0);

        let e1 = mat(1, 2, &[1.0, 0.0]);
        let blind = check_joint_reconstructability(&[e1.clone(), e1], &tol()).unwrap();
        assert!(!blind.holds());
        assert_eq!(blind.kernel.ncols(), 1);
        assert_abs_diff_eq!(blind.kernel[(1, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    fn square(n: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-1.0_f64..1.0, n * n).prop_map(move |d| Matrix::from_vec(n, n, d))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn recursion_is_monotone_and_short(
            a in square(5),
            c in proptest::collection::vec(-1.0_f64..1.0, 10),
            b in proptest::collection::vec(-1.0_f64..1.0, 5),
        ) {
            let c = Matrix::from_vec(2, 5, c);
            let b = Matrix::from_vec(5, 1, b);
            let (w, dims) = infimal_conditioned_invariant_trace(&a, &c, &b, &tol()).unwrap();
            prop_assert!(dims.windows(2).all(|p| p[0] <= p[1]));
            prop_assert!(dims.len() <= 5 + 1);
            // Contains Im Bbar and is conditioned invariant.
            prop_assert!(w.containment_residual(&b) < 1e-8);
            let v = w.basis();
            let meet = v * numerics::kernel_basis(&(&c * v), &tol());
            prop_assert!(w.containment_residual(&(&a * meet)) < 1e-8);
        }

        #[test]
        fn rebasing_bbar_leaves_subspace_unchanged(
            a in square(5),
            c in proptest::collection::vec(-1.0_f64..1.0, 5),
            b in proptest::collection::vec(-1.0_f64..1.0, 10),
            angle in 0.0_f64..std::f64::consts::TAU,
        ) {
            let c = Matrix::from_vec(1, 5, c);
            let b = Matrix::from_vec(5, 2, b);
            let rot = Matrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
            let w1 = infimal_conditioned_invariant(&a, &c, &b, &tol()).unwrap();
            let w2 = infimal_conditioned_invariant(&a, &c, &(&b * rot), &tol()).unwrap();
            prop_assert_eq!(w1.dim(), w2.dim());
            prop_assert!(w1.max_angle(&w2) < 1e-8);
        }

        #[test]
        fn synthesized_designs_meet_invariants(
            a in square(4),
            c in proptest::collection::vec(-1.0_f64..1.0, 8),
            b in proptest::collection::vec(-1.0_f64..1.0, 4),
        ) {
            let a = a * 1.3;
            let c = Matrix::from_vec(2, 4, c);
            let b = Matrix::from_vec(4, 1, b);
            let d = build_design(&a, &c, &b, &DesignOptions::default()).unwrap();
            let r = d.residuals(&a, &c, &b);
            prop_assert!(r.within(1e-8, numerics::spectral_norm(&a)), "{:?}", r);
        }
    }
}
