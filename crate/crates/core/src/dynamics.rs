//! Mechanical Lagrangians, affine velocity constraints, and the unique
//! d'Alembert-consistent dynamics on the constraint manifold.
//!
//! A system is defined in a local chart by
//!
//! ```text
//! L(q, q̇, t) = ½ q̇ᵀ M(q,t) q̇ + b(q,t)·q̇ − V(q,t)
//! S(q,t) q̇ + s(q,t) = 0
//! ```
//!
//! with `M` symmetric positive definite and `S` full row rank. The reaction
//! force is an element of `range Sᵀ` (ideal constraints), which pins down the
//! accelerations and multipliers through one saddle-point solve per state.
//!
//! The linear part `ker S` of the constraint is assumed nonintegrable in the
//! interesting applications; that property is not checked here.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::linalg;

/// Boxed coefficient field over `(q, t)` valued in matrices.
pub type MatrixField = Box<dyn Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;
/// Boxed coefficient field over `(q, t)` valued in vectors.
pub type VectorField = Box<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
/// Boxed coefficient field over `(q, t)` valued in scalars.
pub type ScalarFn = Box<dyn Fn(&DVector<f64>, f64) -> f64 + Send + Sync>;
/// Shared reduced-state projection hook.
pub type ReducedStateFn = Arc<dyn Fn(&VelocityState) -> DVector<f64> + Send + Sync>;

/// Kinematic state `(q, q̇, t)` in a local chart.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub t: f64,
}

impl VelocityState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>, t: f64) -> Result<Self> {
        if q.len() != qdot.len() {
            return Err(CoreError::DimensionMismatch {
                expected: q.len(),
                got: qdot.len(),
                context: "velocity state q vs qdot",
            });
        }
        if q.len() < 2 {
            return Err(CoreError::InvalidInput(format!(
                "configuration dimension must be at least 2, got {}",
                q.len()
            )));
        }
        if !q.iter().chain(qdot.iter()).all(|x| x.is_finite()) || !t.is_finite() {
            return Err(CoreError::NonFiniteState);
        }
        Ok(Self { q, qdot, t })
    }

    pub fn from_slices(q: &[f64], qdot: &[f64], t: f64) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(q),
            DVector::from_column_slice(qdot),
            t,
        )
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

/// Defines a mechanical Lagrangian through its three coefficient fields.
///
/// The `*_dq`/`*_dt` hooks may return analytic derivatives; when they return
/// `None` the caller falls back to central finite differences with step
/// `max(1e-6, 1e-6 |x|)`.
pub trait LagrangianDef: Send + Sync {
    fn dim(&self) -> usize;
    fn mass_matrix(&self, q: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn linear_term(&self, q: &DVector<f64>, t: f64) -> DVector<f64>;
    fn potential(&self, q: &DVector<f64>, t: f64) -> f64;

    fn mass_matrix_dq(&self, _q: &DVector<f64>, _t: f64, _i: usize) -> Option<DMatrix<f64>> {
        None
    }
    fn mass_matrix_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        None
    }
    /// Jacobian `J[i][j] = ∂b_i/∂q_j`.
    fn linear_term_jacobian(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        None
    }
    fn linear_term_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        None
    }
    fn potential_gradient(&self, _q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        None
    }
}

struct FnLagrangian {
    n: usize,
    mass: MatrixField,
    linear: VectorField,
    potential: ScalarFn,
}

impl LagrangianDef for FnLagrangian {
    fn dim(&self) -> usize {
        self.n
    }
    fn mass_matrix(&self, q: &DVector<f64>, t: f64) -> DMatrix<f64> {
        (self.mass)(q, t)
    }
    fn linear_term(&self, q: &DVector<f64>, t: f64) -> DVector<f64> {
        (self.linear)(q, t)
    }
    fn potential(&self, q: &DVector<f64>, t: f64) -> f64 {
        (self.potential)(q, t)
    }
}

/// A mechanical Lagrangian `L = ½ q̇ᵀM q̇ + b·q̇ − V`.
#[derive(Clone)]
pub struct MechanicalLagrangian {
    def: Arc<dyn LagrangianDef>,
}

impl fmt::Debug for MechanicalLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MechanicalLagrangian(n = {})", self.dim())
    }
}

impl MechanicalLagrangian {
    pub fn new(def: Arc<dyn LagrangianDef>) -> Self {
        Self { def }
    }

    /// Build from plain closures; derivatives fall back to finite differences.
    pub fn from_fns(
        n: usize,
        mass: impl Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
        linear: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
        potential: impl Fn(&DVector<f64>, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(Arc::new(FnLagrangian {
            n,
            mass: Box::new(mass),
            linear: Box::new(linear),
            potential: Box::new(potential),
        }))
    }

    /// Constant mass matrix, no linear term, no potential.
    pub fn kinetic(mass: DMatrix<f64>) -> Self {
        let n = mass.nrows();
        Self::from_fns(
            n,
            move |_, _| mass.clone(),
            move |_, _| DVector::zeros(n),
            |_, _| 0.0,
        )
    }

    pub fn dim(&self) -> usize {
        self.def.dim()
    }

    pub fn mass_matrix(&self, q: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.def.mass_matrix(q, t)
    }

    pub fn linear_term(&self, q: &DVector<f64>, t: f64) -> DVector<f64> {
        self.def.linear_term(q, t)
    }

    pub fn potential(&self, q: &DVector<f64>, t: f64) -> f64 {
        self.def.potential(q, t)
    }

    pub fn lagrangian(&self, state: &VelocityState) -> Result<f64> {
        self.check_dim(state)?;
        let m = self.def.mass_matrix(&state.q, state.t);
        let b = self.def.linear_term(&state.q, state.t);
        let v = self.def.potential(&state.q, state.t);
        Ok(0.5 * state.qdot.dot(&(&m * &state.qdot)) + b.dot(&state.qdot) - v)
    }

    /// Energy `E = ⟨p, q̇⟩ − L = ½ q̇ᵀ M q̇ + V`; the linear term cancels.
    pub fn energy(&self, state: &VelocityState) -> Result<f64> {
        self.check_dim(state)?;
        let m = self.def.mass_matrix(&state.q, state.t);
        let v = self.def.potential(&state.q, state.t);
        Ok(0.5 * state.qdot.dot(&(&m * &state.qdot)) + v)
    }

    /// Momentum covector `p = ∂L/∂q̇ = M q̇ + b`.
    pub fn momentum(&self, state: &VelocityState) -> Result<DVector<f64>> {
        self.check_dim(state)?;
        let m = self.def.mass_matrix(&state.q, state.t);
        let b = self.def.linear_term(&state.q, state.t);
        Ok(&m * &state.qdot + b)
    }

    /// Symmetry and positive-definiteness check of `M` at one state.
    pub fn validate_at(&self, q: &DVector<f64>, t: f64) -> Result<()> {
        let m = self.def.mass_matrix(q, t);
        let scale = m.amax().max(1e-300);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(CoreError::InvalidInput(format!(
                "mass matrix asymmetric: |M - M^T| = {asym:.3e}"
            )));
        }
        if m.clone().cholesky().is_none() {
            return Err(CoreError::InvalidInput(
                "mass matrix not positive definite".into(),
            ));
        }
        Ok(())
    }

    fn check_dim(&self, state: &VelocityState) -> Result<()> {
        if state.dim() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: state.dim(),
                context: "lagrangian vs state",
            });
        }
        Ok(())
    }

    pub(crate) fn mass_matrix_dq(&self, q: &DVector<f64>, t: f64, i: usize) -> DMatrix<f64> {
        self.def
            .mass_matrix_dq(q, t, i)
            .unwrap_or_else(|| central_diff_matrix(q, i, |qq| self.def.mass_matrix(qq, t)))
    }

    pub(crate) fn mass_matrix_dt(&self, q: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.def.mass_matrix_dt(q, t).unwrap_or_else(|| {
            let h = linalg::fd_step(t);
            (self.def.mass_matrix(q, t + h) - self.def.mass_matrix(q, t - h)) / (2.0 * h)
        })
    }

    pub(crate) fn linear_term_jacobian(&self, q: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.def.linear_term_jacobian(q, t).unwrap_or_else(|| {
            let n = self.dim();
            let mut jac = DMatrix::zeros(n, n);
            for j in 0..n {
                let col = central_diff_vector(q, j, |qq| self.def.linear_term(qq, t));
                jac.set_column(j, &col);
            }
            jac
        })
    }

    pub(crate) fn linear_term_dt(&self, q: &DVector<f64>, t: f64) -> DVector<f64> {
        self.def.linear_term_dt(q, t).unwrap_or_else(|| {
            let h = linalg::fd_step(t);
            (self.def.linear_term(q, t + h) - self.def.linear_term(q, t - h)) / (2.0 * h)
        })
    }

    pub(crate) fn potential_gradient(&self, q: &DVector<f64>, t: f64) -> DVector<f64> {
        self.def.potential_gradient(q, t).unwrap_or_else(|| {
            let n = self.dim();
            DVector::from_fn(n, |i, _| {
                let h = linalg::fd_step(q[i]);
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += h;
                qm[i] -= h;
                (self.def.potential(&qp, t) - self.def.potential(&qm, t)) / (2.0 * h)
            })
        })
    }

    /// The generalized force entering `M q̈ = f + Sᵀλ`: curvature terms of `M`,
    /// the gyroscopic curl of `b`, explicit time dependence, and `−∇V`.
    pub(crate) fn force_vector(&self, state: &VelocityState) -> DVector<f64> {
        let n = self.dim();
        let q = &state.q;
        let qd = &state.qdot;
        let t = state.t;

        let mut f = DVector::zeros(n);
        // Convective mass terms: ½ q̇ᵀ(∂_i M)q̇ − ((Σ_k ∂_k M q̇_k) q̇)_i.
        let mut m_conv = DMatrix::zeros(n, n);
        for k in 0..n {
            let dmk = self.mass_matrix_dq(q, t, k);
            f[k] += 0.5 * qd.dot(&(&dmk * qd));
            m_conv += dmk * qd[k];
        }
        f -= &m_conv * qd;
        // Explicit time dependence of M.
        f -= self.mass_matrix_dt(q, t) * qd;
        // Gyroscopic curl of b: (J^T - J) q̇, and ∂_t b.
        let jb = self.linear_term_jacobian(q, t);
        f += (jb.transpose() - &jb) * qd;
        f -= self.linear_term_dt(q, t);
        // Potential gradient.
        f -= self.potential_gradient(q, t);
        f
    }
}

fn central_diff_matrix(
    q: &DVector<f64>,
    i: usize,
    eval: impl Fn(&DVector<f64>) -> DMatrix<f64>,
) -> DMatrix<f64> {
    let h = linalg::fd_step(q[i]);
    let mut qp = q.clone();
    let mut qm = q.clone();
    qp[i] += h;
    qm[i] -= h;
    (eval(&qp) - eval(&qm)) / (2.0 * h)
}

fn central_diff_vector(
    q: &DVector<f64>,
    i: usize,
    eval: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> DVector<f64> {
    let h = linalg::fd_step(q[i]);
    let mut qp = q.clone();
    let mut qm = q.clone();
    qp[i] += h;
    qm[i] -= h;
    (eval(&qp) - eval(&qm)) / (2.0 * h)
}

/// Defines an affine constraint `S(q,t) q̇ + s(q,t) = 0`.
pub trait ConstraintDef: Send + Sync {
    /// Configuration dimension n.
    fn dim(&self) -> usize;
    /// Number of constraint rows k.
    fn rows(&self) -> usize;
    fn matrix(&self, q: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn offset(&self, q: &DVector<f64>, t: f64) -> DVector<f64>;

    fn matrix_dq(&self, _q: &DVector<f64>, _t: f64, _i: usize) -> Option<DMatrix<f64>> {
        None
    }
    fn matrix_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        None
    }
    /// Jacobian `J[a][j] = ∂s_a/∂q_j`.
    fn offset_jacobian(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        None
    }
    fn offset_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        None
    }
}

struct FnConstraint {
    n: usize,
    k: usize,
    matrix: MatrixField,
    offset: VectorField,
}

impl ConstraintDef for FnConstraint {
    fn dim(&self) -> usize {
        self.n
    }
    fn rows(&self) -> usize {
        self.k
    }
    fn matrix(&self, q: &DVector<f64>, t: f64) -> DMatrix<f64> {
        (self.matrix)(q, t)
    }
    fn offset(&self, q: &DVector<f64>, t: f64) -> DVector<f64> {
        (self.offset)(q, t)
    }
}

/// An affine constraint on velocities; `s ≡ 0` is the linear case.
#[derive(Clone)]
pub struct AffineConstraint {
    def: Arc<dyn ConstraintDef>,
}

impl fmt::Debug for AffineConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "AffineConstraint(k = {}, n = {})",
            self.rows(),
            self.dim()
        )
    }
}

impl AffineConstraint {
    pub fn new(def: Arc<dyn ConstraintDef>) -> Self {
        Self { def }
    }

    pub fn from_fns(
        n: usize,
        k: usize,
        matrix: impl Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
        offset: impl Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::new(Arc::new(FnConstraint {
            n,
            k,
            matrix: Box::new(matrix),
            offset: Box::new(offset),
        }))
    }

    /// Constant coefficient rows and offset.
    pub fn constant(matrix: DMatrix<f64>, offset: DVector<f64>) -> Self {
        let n = matrix.ncols();
        let k = matrix.nrows();
        Self::from_fns(n, k, move |_, _| matrix.clone(), move |_, _| offset.clone())
    }

    /// Empty constraint (unconstrained system).
    pub fn none(n: usize) -> Self {
        Self::from_fns(
            n,
            0,
            move |_, _| DMatrix::zeros(0, n),
            move |_, _| DVector::zeros(0),
        )
    }

    pub fn dim(&self) -> usize {
        self.def.dim()
    }

    pub fn rows(&self) -> usize {
        self.def.rows()
    }

    pub fn matrix(&self, q: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.def.matrix(q, t)
    }

    pub fn offset(&self, q: &DVector<f64>, t: f64) -> DVector<f64> {
        self.def.offset(q, t)
    }

    /// `S(q,t) q̇ + s(q,t)`; zero iff the state lies on the constraint fiber.
    pub fn residual(&self, state: &VelocityState) -> Result<DVector<f64>> {
        self.check_dim(state.dim())?;
        let s_mat = self.def.matrix(&state.q, state.t);
        let s_off = self.def.offset(&state.q, state.t);
        Ok(&s_mat * &state.qdot + s_off)
    }

    /// Minimum-Euclidean-norm `ξ` with `S ξ = −s`. Any other representative
    /// differs from this one by an element of `ker S`.
    pub fn representative_xi(&self, q: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let s_mat = self.def.matrix(q, t);
        let s_off = self.def.offset(q, t);
        linalg::min_norm_solve(&s_mat, &(-s_off))
    }

    /// Orthonormal basis of `ker S(q,t)` as matrix columns.
    pub fn kernel_basis(&self, q: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        linalg::kernel_basis(&self.def.matrix(q, t))
    }

    /// Euclidean projection of `v` onto the affine fiber `{S w + s = 0}`.
    pub fn project_to_fiber(
        &self,
        q: &DVector<f64>,
        t: f64,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let xi = self.representative_xi(q, t)?;
        let kernel = self.kernel_basis(q, t)?;
        Ok(&xi + &kernel * (kernel.transpose() * v))
    }

    pub(crate) fn matrix_dq(&self, q: &DVector<f64>, t: f64, i: usize) -> DMatrix<f64> {
        self.def
            .matrix_dq(q, t, i)
            .unwrap_or_else(|| central_diff_matrix(q, i, |qq| self.def.matrix(qq, t)))
    }

    pub(crate) fn matrix_dt(&self, q: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.def.matrix_dt(q, t).unwrap_or_else(|| {
            let h = linalg::fd_step(t);
            (self.def.matrix(q, t + h) - self.def.matrix(q, t - h)) / (2.0 * h)
        })
    }

    pub(crate) fn offset_jacobian(&self, q: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.def.offset_jacobian(q, t).unwrap_or_else(|| {
            let k = self.rows();
            let n = self.dim();
            let mut jac = DMatrix::zeros(k, n);
            for j in 0..n {
                let col = central_diff_vector(q, j, |qq| self.def.offset(qq, t));
                jac.set_column(j, &col);
            }
            jac
        })
    }

    pub(crate) fn offset_dt(&self, q: &DVector<f64>, t: f64) -> DVector<f64> {
        self.def.offset_dt(q, t).unwrap_or_else(|| {
            let h = linalg::fd_step(t);
            (self.def.offset(q, t + h) - self.def.offset(q, t - h)) / (2.0 * h)
        })
    }

    /// Right-hand side of the differentiated constraint,
    /// `S q̈ = −(∂_q S·q̇)q̇ − ∂_t S q̇ − ∂_q s·q̇ − ∂_t s`.
    pub(crate) fn acceleration_rhs(&self, state: &VelocityState) -> DVector<f64> {
        let n = self.dim();
        let q = &state.q;
        let qd = &state.qdot;
        let t = state.t;
        let mut s_conv = DMatrix::zeros(self.rows(), n);
        for k in 0..n {
            s_conv += self.matrix_dq(q, t, k) * qd[k];
        }
        let mut g = -(&s_conv * qd);
        g -= self.matrix_dt(q, t) * qd;
        g -= self.offset_jacobian(q, t) * qd;
        g -= self.offset_dt(q, t);
        g
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: n,
                context: "constraint vs state",
            });
        }
        Ok(())
    }
}

/// Chart bookkeeping: which coordinates are angles (wrapped only for
/// reporting) and which belong to the flat spin pseudo-coordinate block.
///
/// The spin block represents orientation through a fictitious coordinate
/// `ψ ∈ ℝ³` with `ψ̇ = ω` (spatial angular velocity); this is exact for
/// isotropic inertia, and nothing in `M`, `V`, `S`, `s` may depend on `ψ`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChartMeta {
    pub angle_coords: Vec<usize>,
    pub spin_coords: Vec<usize>,
}

/// A named scalar function of kinematic states (first integrals, energies).
#[derive(Clone)]
pub struct ScalarField {
    name: String,
    f: Arc<dyn Fn(&VelocityState) -> f64 + Send + Sync>,
}

impl ScalarField {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&VelocityState) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, state: &VelocityState) -> f64 {
        (self.f)(state)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField({})", self.name)
    }
}

/// Numeric tolerances for the dynamics evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsOptions {
    /// Maximum admissible `‖S q̇ + s‖` before `eval_dynamics` refuses a state.
    pub off_manifold_tol: f64,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        Self {
            off_manifold_tol: 1e-8,
        }
    }
}

/// Output of one dynamics evaluation.
#[derive(Debug, Clone)]
pub struct DynamicsOutput {
    pub qddot: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Reaction covector `Sᵀλ`; annihilates `ker S`.
    pub reaction: DVector<f64>,
}

/// A Lagrangian plus an affine constraint in a shared chart.
#[derive(Clone)]
pub struct NonholonomicSystem {
    lagrangian: MechanicalLagrangian,
    constraint: AffineConstraint,
    chart: ChartMeta,
    integrals: Vec<ScalarField>,
    options: DynamicsOptions,
    reduced: Option<ReducedStateFn>,
}

impl fmt::Debug for NonholonomicSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "NonholonomicSystem(n = {}, k = {}, integrals = {})",
            self.dim(),
            self.constraint.rows(),
            self.integrals.len()
        )
    }
}

impl NonholonomicSystem {
    pub fn new(lagrangian: MechanicalLagrangian, constraint: AffineConstraint) -> Result<Self> {
        if lagrangian.dim() != constraint.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: lagrangian.dim(),
                got: constraint.dim(),
                context: "lagrangian vs constraint",
            });
        }
        Ok(Self {
            lagrangian,
            constraint,
            chart: ChartMeta::default(),
            integrals: Vec::new(),
            options: DynamicsOptions::default(),
            reduced: None,
        })
    }

    pub fn with_chart(mut self, chart: ChartMeta) -> Self {
        self.chart = chart;
        self
    }

    pub fn with_options(mut self, options: DynamicsOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_reduced_state(
        mut self,
        reduced: impl Fn(&VelocityState) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.reduced = Some(Arc::new(reduced));
        self
    }

    /// External registration hook for first integrals supplied by the user
    /// (e.g. integrals known from the literature but not computed here).
    pub fn register_integral(&mut self, field: ScalarField) {
        self.integrals.push(field);
    }

    pub fn with_integrals(mut self, fields: Vec<ScalarField>) -> Self {
        self.integrals = fields;
        self
    }

    pub fn dim(&self) -> usize {
        self.lagrangian.dim()
    }

    pub fn constraint_rows(&self) -> usize {
        self.constraint.rows()
    }

    pub fn lagrangian(&self) -> &MechanicalLagrangian {
        &self.lagrangian
    }

    pub fn constraint(&self) -> &AffineConstraint {
        &self.constraint
    }

    pub fn chart(&self) -> &ChartMeta {
        &self.chart
    }

    pub fn options(&self) -> &DynamicsOptions {
        &self.options
    }

    pub fn integrals(&self) -> &[ScalarField] {
        &self.integrals
    }

    pub fn integral(&self, name: &str) -> Option<&ScalarField> {
        self.integrals.iter().find(|f| f.name() == name)
    }

    /// Reduced-state projection for periodicity analysis; defaults to the
    /// full `(q, q̇)` vector when no projection is installed.
    pub fn reduced_state(&self, state: &VelocityState) -> DVector<f64> {
        match &self.reduced {
            Some(f) => f(state),
            None => {
                let n = state.dim();
                let mut z = DVector::zeros(2 * n);
                z.rows_mut(0, n).copy_from(&state.q);
                z.rows_mut(n, n).copy_from(&state.qdot);
                z
            }
        }
    }

    /// Accelerations, multipliers and reaction covector at `state`.
    ///
    /// The state must satisfy the constraint to within
    /// [`DynamicsOptions::off_manifold_tol`].
    pub fn eval_dynamics(&self, state: &VelocityState) -> Result<DynamicsOutput> {
        if self.constraint.rows() > 0 {
            let residual = self.constraint.residual(state)?;
            let norm = residual.norm();
            let scale = 1.0 + state.qdot.norm();
            if norm > self.options.off_manifold_tol * scale {
                return Err(CoreError::OffManifold {
                    residual: norm,
                    tol: self.options.off_manifold_tol * scale,
                });
            }
        }
        self.eval_dynamics_extended(state)
    }

    /// The smooth off-fiber extension of the dynamics: the same saddle-point
    /// solve without the residual precondition. Integrator stages evaluate
    /// this, since Runge–Kutta stage values legitimately leave the fiber by
    /// the order of the local truncation error.
    pub fn eval_dynamics_extended(&self, state: &VelocityState) -> Result<DynamicsOutput> {
        if state.dim() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: state.dim(),
                context: "system vs state",
            });
        }
        let m = self.lagrangian.mass_matrix(&state.q, state.t);
        let s_mat = self.constraint.matrix(&state.q, state.t);
        if !(m.iter().all(|v| v.is_finite()) && s_mat.iter().all(|v| v.is_finite())) {
            return Err(CoreError::NonFiniteState);
        }
        let f = self.lagrangian.force_vector(state);
        let g = self.constraint.acceleration_rhs(state);
        let (qddot, lambda) = linalg::saddle_solve(&m, &s_mat, &f, &g)?;
        let reaction = s_mat.transpose() * &lambda;
        debug_assert!(
            (&s_mat * &qddot - &g).amax() <= 1e-9 * (1.0 + g.amax() + qddot.amax()),
            "differentiated constraint violated by saddle solution"
        );
        Ok(DynamicsOutput {
            qddot,
            lambda,
            reaction,
        })
    }

    /// Closest point to `qdot` on the affine fiber in the mass-matrix metric:
    /// `w = v − M⁻¹Sᵀ (S M⁻¹ Sᵀ)⁻¹ (S v + s)`.
    pub fn project_velocity(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        t: f64,
    ) -> Result<DVector<f64>> {
        let k = self.constraint.rows();
        if k == 0 {
            return Ok(qdot.clone());
        }
        let m = self.lagrangian.mass_matrix(q, t);
        let s_mat = self.constraint.matrix(q, t);
        let s_off = self.constraint.offset(q, t);
        let chol = m.cholesky().ok_or(CoreError::DegenerateSaddle)?;
        let minv_st = chol.solve(&s_mat.transpose());
        let schur = &s_mat * &minv_st;
        let viol = &s_mat * qdot + s_off;
        let mu = schur
            .lu()
            .solve(&viol)
            .ok_or(CoreError::SingularConstraint { ratio: 0.0 })?;
        Ok(qdot - minv_st * mu)
    }

    /// First-order right-hand side `d/dt (q, q̇)` together with the
    /// multiplier data, for use by integrators. Evaluates the off-fiber
    /// extension; drift control is the integrator's responsibility.
    pub fn rhs(&self, state: &VelocityState) -> Result<(DVector<f64>, DynamicsOutput)> {
        let out = self.eval_dynamics_extended(state)?;
        let n = self.dim();
        let mut deriv = DVector::zeros(2 * n);
        deriv.rows_mut(0, n).copy_from(&state.qdot);
        deriv.rows_mut(n, n).copy_from(&out.qddot);
        Ok((deriv, out))
    }
}
