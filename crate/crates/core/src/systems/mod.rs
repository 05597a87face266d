//! Concrete system presets: the sphere rolling on a rotating table and the
//! sphere rolling inside a rotating surface of revolution, together with
//! their symmetry data (generators, sampled group actions, rotating-frame
//! maps) and rotating-frame twins.
//!
//! Both presets use a five-dimensional chart `q = (position, ψ)` where `ψ` is
//! the flat spin pseudo-coordinate with `ψ̇ = ω`, the spatial angular
//! velocity. This is exact for a homogeneous sphere (isotropic inertia):
//! the spin block of the mass matrix is `ca²·I₃` and nothing depends on `ψ`
//! itself, so the flat Euler–Lagrange equations reproduce the spatial angular
//! momentum balance `ca² ω̇ = torque`.
//!
//! One consequence is handled explicitly here. Rotating-frame constructions
//! act on the spin block through the physical velocity map `ω ↦ H ω + Ω e_z`,
//! which is not the coordinate lift of any point transformation of `ψ`: the
//! preset rotating maps therefore carry tangent data chosen for physical
//! consistency, and the rotating-frame twins include the gyroscopic term
//! `½ ca² Ω (e_z × ψ)·ω` in the linear coefficient, which the naive frozen
//! substitution `q̇ ↦ q̇ + Y(q)` misses. With both in place the twin dynamics
//! is exactly conjugate to the inertial dynamics on the physical variables.

pub mod profile;

pub use profile::{ProfilePoint, SurfaceProfile, AXIS_MARGIN};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector3};

use crate::dynamics::{
    AffineConstraint, ChartMeta, ConstraintDef, LagrangianDef, MechanicalLagrangian,
    NonholonomicSystem, ScalarField, VelocityState,
};
use crate::error::{CoreError, Result};
use crate::frames::{ActionSample, GroupGenerator, TimeDependentMap};

type ConfigVecFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type ConfigMatFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type ConfigScalarFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// Diagonal mass coefficients and their radial derivatives.
type DiagonalMassFn = Arc<dyn Fn(&DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync>;

fn rot2(theta: f64) -> (f64, f64) {
    (theta.cos(), theta.sin())
}

/// Apply the z-rotation by `theta` to the coordinate pair `(i, j)` of `v`.
fn rotate_pair(v: &mut DVector<f64>, i: usize, j: usize, theta: f64) {
    let (c, s) = rot2(theta);
    let (x, y) = (v[i], v[j]);
    v[i] = c * x - s * y;
    v[j] = s * x + c * y;
}

/// Block-diagonal z-rotation acting on the position pair `(0,1)` and/or the
/// spin pair `(2,3)`; the z spin component is untouched.
fn block_rotation5(theta: f64, rotate_xy: bool, rotate_spin: bool) -> DMatrix<f64> {
    let (c, s) = rot2(theta);
    let mut m = DMatrix::identity(5, 5);
    if rotate_xy {
        m[(0, 0)] = c;
        m[(0, 1)] = -s;
        m[(1, 0)] = s;
        m[(1, 1)] = c;
    }
    if rotate_spin {
        m[(2, 2)] = c;
        m[(2, 3)] = -s;
        m[(3, 2)] = s;
        m[(3, 3)] = c;
    }
    m
}

// ---------------------------------------------------------------------------
// Sphere on a rotating table.
// ---------------------------------------------------------------------------

/// Parameters of the sphere-on-turntable system: sphere radius `a`, inertia
/// coefficient `c` (`2/5` for a solid homogeneous sphere, inertia `c a²` per
/// unit mass), table rate `omega`.
#[derive(Debug, Clone, Copy)]
pub struct TurntableParams {
    pub a: f64,
    pub c: f64,
    pub omega: f64,
}

impl Default for TurntableParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            c: 0.4,
            omega: 1.0,
        }
    }
}

impl TurntableParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !(self.c > 0.0) || !self.omega.is_finite() {
            return Err(CoreError::InvalidInput(
                "turntable needs a > 0, c > 0, finite omega".into(),
            ));
        }
        Ok(())
    }

    /// `ν = Ω / (1 + c)`, the coefficient of the reduced spin equations.
    pub fn nu(&self) -> f64 {
        self.omega / (1.0 + self.c)
    }

    /// Angular frequency of the reduced flow, `Ω − ν = cΩ/(1+c)`; every
    /// non-equilibrium reduced orbit is a circle traversed at this rate.
    pub fn reduced_frequency(&self) -> f64 {
        self.omega - self.nu()
    }

    /// Period of the reduced flow, `2π(1+c)/(cΩ)`.
    pub fn reduced_period(&self) -> f64 {
        std::f64::consts::TAU / self.reduced_frequency().abs()
    }
}

struct TurntableLagrangian {
    ca2: f64,
}

impl LagrangianDef for TurntableLagrangian {
    fn dim(&self) -> usize {
        5
    }
    fn mass_matrix(&self, _q: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 1.0, self.ca2, self.ca2, self.ca2,
        ]))
    }
    fn linear_term(&self, _q: &DVector<f64>, _t: f64) -> DVector<f64> {
        DVector::zeros(5)
    }
    fn potential(&self, _q: &DVector<f64>, _t: f64) -> f64 {
        0.0
    }
    fn mass_matrix_dq(&self, _q: &DVector<f64>, _t: f64, _i: usize) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(5, 5))
    }
    fn mass_matrix_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(5, 5))
    }
    fn linear_term_jacobian(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(5, 5))
    }
    fn linear_term_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        Some(DVector::zeros(5))
    }
    fn potential_gradient(&self, _q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        Some(DVector::zeros(5))
    }
}

/// Rolling rows `ẋ = a ω_y − Ω y`, `ẏ = −a ω_x + Ω x`.
struct TurntableConstraint {
    a: f64,
    omega: f64,
}

impl ConstraintDef for TurntableConstraint {
    fn dim(&self) -> usize {
        5
    }
    fn rows(&self) -> usize {
        2
    }
    fn matrix(&self, _q: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            5,
            &[
                1.0, 0.0, 0.0, -self.a, 0.0, //
                0.0, 1.0, self.a, 0.0, 0.0,
            ],
        )
    }
    fn offset(&self, q: &DVector<f64>, _t: f64) -> DVector<f64> {
        DVector::from_vec(vec![self.omega * q[1], -self.omega * q[0]])
    }
    fn matrix_dq(&self, _q: &DVector<f64>, _t: f64, _i: usize) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(2, 5))
    }
    fn matrix_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(2, 5))
    }
    fn offset_jacobian(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(2, 5);
        j[(0, 1)] = self.omega;
        j[(1, 0)] = -self.omega;
        Some(j)
    }
    fn offset_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        Some(DVector::zeros(2))
    }
}

fn turntable_chart() -> ChartMeta {
    ChartMeta {
        angle_coords: vec![],
        spin_coords: vec![2, 3, 4],
    }
}

/// Build the turntable system with its standard first-integral suite:
/// `omega_z`, the two spin offsets `a ω_{x,y} − ν {x,y}`, the shifted moving
/// energy `E − Ω²(x²+y²) + Ωa(xω_x + yω_y)`, the moving energy
/// `E − Ω(xẏ − yẋ + ca²ω_z)`, and the plain energy.
pub fn build_turntable(p: &TurntableParams) -> Result<NonholonomicSystem> {
    p.validate()?;
    let ca2 = p.c * p.a * p.a;
    let lagrangian = MechanicalLagrangian::new(Arc::new(TurntableLagrangian { ca2 }));
    let constraint = AffineConstraint::new(Arc::new(TurntableConstraint {
        a: p.a,
        omega: p.omega,
    }));
    lagrangian.validate_at(&DVector::zeros(5), 0.0)?;

    let nu = p.nu();
    let (a, omega) = (p.a, p.omega);
    let energy = {
        let l = lagrangian.clone();
        ScalarField::new("energy", move |st: &VelocityState| {
            l.energy(st).expect("dimensions fixed")
        })
    };
    let integrals = vec![
        energy.clone(),
        ScalarField::new("omega_z", |st: &VelocityState| st.qdot[4]),
        ScalarField::new("spin_offset_x", move |st: &VelocityState| {
            a * st.qdot[2] - nu * st.q[0]
        }),
        ScalarField::new("spin_offset_y", move |st: &VelocityState| {
            a * st.qdot[3] - nu * st.q[1]
        }),
        {
            let l = lagrangian.clone();
            ScalarField::new("moving_energy_shifted", move |st: &VelocityState| {
                let e = l.energy(st).expect("dimensions fixed");
                e - omega * omega * (st.q[0] * st.q[0] + st.q[1] * st.q[1])
                    + omega * a * (st.q[0] * st.qdot[2] + st.q[1] * st.qdot[3])
            })
        },
        {
            let l = lagrangian.clone();
            ScalarField::new("moving_energy", move |st: &VelocityState| {
                let e = l.energy(st).expect("dimensions fixed");
                let j = omega * (st.q[0] * st.qdot[1] - st.q[1] * st.qdot[0] + ca2 * st.qdot[4]);
                e - j
            })
        },
    ];

    Ok(NonholonomicSystem::new(lagrangian, constraint)?
        .with_chart(turntable_chart())
        .with_integrals(integrals)
        .with_reduced_state(|st: &VelocityState| {
            DVector::from_vec(vec![st.q[0], st.q[1], st.qdot[2], st.qdot[3], st.qdot[4]])
        }))
}

/// Closed-form reduced right-hand side `(ẋ, ẏ, ω̇)`. Independent of the
/// multiplier solve; reads only `(x, y, ω)` from the state.
pub fn turntable_reduced_rhs(p: &TurntableParams, state: &VelocityState) -> DVector<f64> {
    let (x, y) = (state.q[0], state.q[1]);
    let (wx, wy) = (state.qdot[2], state.qdot[3]);
    let nu = p.nu();
    let xdot = p.a * wy - p.omega * y;
    let ydot = -p.a * wx + p.omega * x;
    DVector::from_vec(vec![xdot, ydot, nu / p.a * xdot, nu / p.a * ydot, 0.0])
}

/// On-fiber state from `(x, y, ω)` with `ψ = 0`.
pub fn turntable_state(p: &TurntableParams, x: f64, y: f64, omega_spin: [f64; 3]) -> VelocityState {
    let qdot = vec![
        p.a * omega_spin[1] - p.omega * y,
        -p.a * omega_spin[0] + p.omega * x,
        omega_spin[0],
        omega_spin[1],
        omega_spin[2],
    ];
    VelocityState::from_slices(&[x, y, 0.0, 0.0, 0.0], &qdot, 0.0).expect("finite inputs")
}

/// Generator of the simultaneous-rotation symmetry with parameter `eta`:
/// `Y_η = (−ηy, ηx, 0, 0, η)`, attached to its honest chart flow (rotation of
/// the position pair, translation of the spin pseudo-coordinate).
pub fn turntable_generator(eta: f64) -> GroupGenerator {
    GroupGenerator::new(move |q: &DVector<f64>| {
        DVector::from_vec(vec![-eta * q[1], eta * q[0], 0.0, 0.0, eta])
    })
    .with_flow(TimeDependentMap::new(
        5,
        move |u, t| {
            let mut q = u.clone();
            rotate_pair(&mut q, 0, 1, eta * t);
            q[4] += eta * t;
            q
        },
        move |_, t| block_rotation5(eta * t, true, false),
        move |u, t| {
            let mut q = u.clone();
            rotate_pair(&mut q, 0, 1, eta * t);
            DVector::from_vec(vec![-eta * q[1], eta * q[0], 0.0, 0.0, eta])
        },
        move |q, t| {
            let mut u = q.clone();
            rotate_pair(&mut u, 0, 1, -eta * t);
            u[4] -= eta * t;
            u
        },
    ))
}

/// Sampled elements of the lifted rotation action. The configuration map
/// rotates position and spin bookkeeping; the tangent map rotates both the
/// position velocity and the spatial angular velocity, which is the
/// physically lifted action on the right-trivialized velocities.
pub fn turntable_action_samples(thetas: &[f64]) -> Vec<ActionSample> {
    thetas
        .iter()
        .map(|&theta| {
            ActionSample::new(
                format!("rotation({theta:.4})"),
                move |q: &DVector<f64>| {
                    let mut out = q.clone();
                    rotate_pair(&mut out, 0, 1, theta);
                    rotate_pair(&mut out, 2, 3, theta);
                    out
                },
                move |_q: &DVector<f64>| block_rotation5(theta, true, true),
            )
        })
        .collect()
}

/// The rotating-frame map of the turntable at the table rate. Carries the
/// physical tangent data: the velocity map rotates the spatial angular
/// velocity and the frame velocity supplies the spin offset `Ω e_z`; see the
/// module docs for why this is not the coordinate lift of the forward map on
/// the pseudo-coordinate block.
pub fn turntable_rotating_map(p: &TurntableParams) -> TimeDependentMap {
    let omega = p.omega;
    TimeDependentMap::new(
        5,
        move |u, t| {
            let mut q = u.clone();
            rotate_pair(&mut q, 0, 1, omega * t);
            rotate_pair(&mut q, 2, 3, omega * t);
            q
        },
        move |_, t| block_rotation5(omega * t, true, true),
        move |u, t| {
            let (c, s) = rot2(omega * t);
            let qx = c * u[0] - s * u[1];
            let qy = s * u[0] + c * u[1];
            DVector::from_vec(vec![-omega * qy, omega * qx, 0.0, 0.0, omega])
        },
        move |q, t| {
            let mut u = q.clone();
            rotate_pair(&mut u, 0, 1, -omega * t);
            rotate_pair(&mut u, 2, 3, -omega * t);
            u
        },
    )
}

/// Velocity-linear coefficient of a rotating-frame twin: a position-block
/// part plus the spin gyroscopic vector potential `½κ e_z×ψ + κ e_z` with
/// `κ = ca²Ω`.
struct GyroLinearTerm {
    base: ConfigVecFn,
    base_jacobian: ConfigMatFn,
    kappa: f64,
}

impl GyroLinearTerm {
    fn eval(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut b = (self.base)(q);
        b[2] += -0.5 * self.kappa * q[3];
        b[3] += 0.5 * self.kappa * q[2];
        b[4] += self.kappa;
        b
    }

    fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut j = (self.base_jacobian)(q);
        j[(2, 3)] += -0.5 * self.kappa;
        j[(3, 2)] += 0.5 * self.kappa;
        j
    }
}

/// Time-independent mechanical data of a rotating-frame twin; all
/// derivatives analytic. The mass matrix is diagonal, either constant or a
/// function of `q[0]` alone.
struct TwinLagrangian {
    mass: DVector<f64>,
    mass_of_q: Option<DiagonalMassFn>,
    linear: GyroLinearTerm,
    potential: ConfigScalarFn,
    potential_gradient: ConfigVecFn,
}

impl LagrangianDef for TwinLagrangian {
    fn dim(&self) -> usize {
        5
    }
    fn mass_matrix(&self, q: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        match &self.mass_of_q {
            Some(f) => DMatrix::from_diagonal(&f(q).0),
            None => DMatrix::from_diagonal(&self.mass),
        }
    }
    fn linear_term(&self, q: &DVector<f64>, _t: f64) -> DVector<f64> {
        self.linear.eval(q)
    }
    fn potential(&self, q: &DVector<f64>, _t: f64) -> f64 {
        (self.potential)(q)
    }
    fn mass_matrix_dq(&self, q: &DVector<f64>, _t: f64, i: usize) -> Option<DMatrix<f64>> {
        match &self.mass_of_q {
            Some(f) if i == 0 => Some(DMatrix::from_diagonal(&f(q).1)),
            _ => Some(DMatrix::zeros(5, 5)),
        }
    }
    fn mass_matrix_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(5, 5))
    }
    fn linear_term_jacobian(&self, q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        Some(self.linear.jacobian(q))
    }
    fn linear_term_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        Some(DVector::zeros(5))
    }
    fn potential_gradient(&self, q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        Some((self.potential_gradient)(q))
    }
}

/// Rotating-frame twin of the turntable: same mass matrix, linear constraint
/// (the table-rate offset cancels against the symmetry generator), linear
/// term `M Y_Ω + ½ca²Ω e_z×ψ`, centrifugal potential `−½Ω²(x²+y²) − ½ca²Ω²`.
/// Its plain energy is conserved and equals the moving energy of the
/// inertial system on corresponding states.
pub fn turntable_rotating_frame_twin(p: &TurntableParams) -> Result<NonholonomicSystem> {
    p.validate()?;
    let ca2 = p.c * p.a * p.a;
    let omega = p.omega;
    let kappa = ca2 * omega;
    let lagrangian = MechanicalLagrangian::new(Arc::new(TwinLagrangian {
        mass: DVector::from_vec(vec![1.0, 1.0, ca2, ca2, ca2]),
        mass_of_q: None,
        linear: GyroLinearTerm {
            base: Box::new(move |q: &DVector<f64>| {
                DVector::from_vec(vec![-omega * q[1], omega * q[0], 0.0, 0.0, 0.0])
            }),
            base_jacobian: Box::new(move |_q| {
                let mut j = DMatrix::zeros(5, 5);
                j[(0, 1)] = -omega;
                j[(1, 0)] = omega;
                j
            }),
            kappa,
        },
        potential: Box::new(move |q: &DVector<f64>| {
            -0.5 * omega * omega * (q[0] * q[0] + q[1] * q[1]) - 0.5 * ca2 * omega * omega
        }),
        potential_gradient: Box::new(move |q: &DVector<f64>| {
            DVector::from_vec(vec![
                -omega * omega * q[0],
                -omega * omega * q[1],
                0.0,
                0.0,
                0.0,
            ])
        }),
    }));
    let constraint = AffineConstraint::new(Arc::new(TurntableConstraint { a: p.a, omega: 0.0 }));
    let energy = {
        let l = lagrangian.clone();
        ScalarField::new("energy", move |st: &VelocityState| {
            l.energy(st).expect("dimensions fixed")
        })
    };
    Ok(NonholonomicSystem::new(lagrangian, constraint)?
        .with_chart(turntable_chart())
        .with_integrals(vec![energy])
        .with_reduced_state(|st: &VelocityState| {
            DVector::from_vec(vec![st.q[0], st.q[1], st.qdot[2], st.qdot[3], st.qdot[4]])
        }))
}

// ---------------------------------------------------------------------------
// Sphere rolling inside a rotating surface of revolution.
// ---------------------------------------------------------------------------

/// Parameters of the rotating-surface system. `profile` describes the center
/// surface; `omega` is the surface rotation rate about the vertical axis and
/// `gravity` the downward acceleration.
#[derive(Debug, Clone)]
pub struct SurfaceParams {
    pub profile: SurfaceProfile,
    pub a: f64,
    pub c: f64,
    pub omega: f64,
    pub gravity: f64,
}

impl SurfaceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !(self.c > 0.0) || !self.omega.is_finite() || !(self.gravity >= 0.0) {
            return Err(CoreError::InvalidInput(
                "surface system needs a > 0, c > 0, finite omega, gravity >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Geometry of the center surface `r(u, φ) = (ρ cos φ, ρ sin φ, ζ)` at one
/// point: position, tangent basis, contact-oriented unit normal, metric, and
/// second derivatives of the embedding.
#[derive(Debug, Clone)]
pub struct SurfaceGeometry {
    pub r: Vector3<f64>,
    pub r_u: Vector3<f64>,
    pub r_phi: Vector3<f64>,
    /// Unit normal pointing from the center toward the contact point.
    pub normal: Vector3<f64>,
    pub metric: Matrix2<f64>,
    pub r_uu: Vector3<f64>,
    pub r_uphi: Vector3<f64>,
    pub r_phiphi: Vector3<f64>,
}

/// Evaluate the embedded geometry of a profile at `(u, φ)`.
///
/// The normal is oriented so that `center + a·normal` lies on the physical
/// cup: downward-outward for a bowl traversed from inside.
pub fn surface_geometry(profile: &SurfaceProfile, u: f64, phi: f64) -> Result<SurfaceGeometry> {
    let p = profile.eval(u)?;
    let (c, s) = rot2(phi);
    let e = p.metric_e();
    let se = e.sqrt();
    Ok(SurfaceGeometry {
        r: Vector3::new(p.rho * c, p.rho * s, p.zeta),
        r_u: Vector3::new(p.rho_d * c, p.rho_d * s, p.zeta_d),
        r_phi: Vector3::new(-p.rho * s, p.rho * c, 0.0),
        normal: Vector3::new(p.zeta_d * c, p.zeta_d * s, -p.rho_d) / se,
        metric: Matrix2::new(e, 0.0, 0.0, p.rho * p.rho),
        r_uu: Vector3::new(p.rho_dd * c, p.rho_dd * s, p.zeta_dd),
        r_uphi: Vector3::new(-p.rho_d * s, p.rho_d * c, 0.0),
        r_phiphi: Vector3::new(-p.rho * c, -p.rho * s, 0.0),
    })
}

struct SurfaceLagrangian {
    profile: SurfaceProfile,
    ca2: f64,
    gravity: f64,
}

impl LagrangianDef for SurfaceLagrangian {
    fn dim(&self) -> usize {
        5
    }
    fn mass_matrix(&self, q: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        let p = self.profile.eval_raw(q[0]);
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            p.metric_e(),
            p.rho * p.rho,
            self.ca2,
            self.ca2,
            self.ca2,
        ]))
    }
    fn linear_term(&self, _q: &DVector<f64>, _t: f64) -> DVector<f64> {
        DVector::zeros(5)
    }
    fn potential(&self, q: &DVector<f64>, _t: f64) -> f64 {
        self.gravity * self.profile.eval_raw(q[0]).zeta
    }
    fn mass_matrix_dq(&self, q: &DVector<f64>, _t: f64, i: usize) -> Option<DMatrix<f64>> {
        if i != 0 {
            return Some(DMatrix::zeros(5, 5));
        }
        let p = self.profile.eval_raw(q[0]);
        let mut d = DMatrix::zeros(5, 5);
        d[(0, 0)] = p.metric_e_d();
        d[(1, 1)] = 2.0 * p.rho * p.rho_d;
        Some(d)
    }
    fn mass_matrix_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(5, 5))
    }
    fn linear_term_jacobian(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(5, 5))
    }
    fn linear_term_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        Some(DVector::zeros(5))
    }
    fn potential_gradient(&self, q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        let p = self.profile.eval_raw(q[0]);
        let mut g = DVector::zeros(5);
        g[0] = self.gravity * p.zeta_d;
        Some(g)
    }
}

/// Rolling constraint of the rotating surface, projected on the two tangent
/// directions of the center surface. With `sE = √E`, the rows over
/// `(u̇, φ̇, ω)` are
///
/// ```text
/// row_u: E u̇ + a·sE·(sinφ ω_x − cosφ ω_y) = 0
/// row_φ: ρ² φ̇ + (aρρ'/sE)(cosφ ω_x + sinφ ω_y) + (aρζ'/sE) ω_z
///        − Ωρ(ρ + aζ'/sE) = 0
/// ```
///
/// The normal component of the contact-velocity match vanishes identically
/// and is asserted in tests rather than carried as a third row.
struct SurfaceConstraint {
    profile: SurfaceProfile,
    a: f64,
    omega: f64,
}

impl ConstraintDef for SurfaceConstraint {
    fn dim(&self) -> usize {
        5
    }
    fn rows(&self) -> usize {
        2
    }
    fn matrix(&self, q: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        let p = self.profile.eval_raw(q[0]);
        let (c, s) = rot2(q[1]);
        let e = p.metric_e();
        let se = e.sqrt();
        let g1 = p.rho * p.rho_d / se;
        let g2 = p.rho * p.zeta_d / se;
        DMatrix::from_row_slice(
            2,
            5,
            &[
                e,
                0.0,
                self.a * se * s,
                -self.a * se * c,
                0.0,
                //
                0.0,
                p.rho * p.rho,
                self.a * g1 * c,
                self.a * g1 * s,
                self.a * g2,
            ],
        )
    }
    fn offset(&self, q: &DVector<f64>, _t: f64) -> DVector<f64> {
        let p = self.profile.eval_raw(q[0]);
        let se = p.metric_e().sqrt();
        let contact_radius = p.rho + self.a * p.zeta_d / se;
        DVector::from_vec(vec![0.0, -self.omega * p.rho * contact_radius])
    }
    fn matrix_dq(&self, q: &DVector<f64>, _t: f64, i: usize) -> Option<DMatrix<f64>> {
        if i > 1 {
            return Some(DMatrix::zeros(2, 5));
        }
        let p = self.profile.eval_raw(q[0]);
        let (c, s) = rot2(q[1]);
        let e = p.metric_e();
        let se = e.sqrt();
        let ed = p.metric_e_d();
        let sed = ed / (2.0 * se);
        let g1 = p.rho * p.rho_d / se;
        let g1d = (p.rho_d * p.rho_d + p.rho * p.rho_dd) / se - p.rho * p.rho_d * sed / e;
        let g2d = (p.rho_d * p.zeta_d + p.rho * p.zeta_dd) / se - p.rho * p.zeta_d * sed / e;
        let mut d = DMatrix::zeros(2, 5);
        if i == 0 {
            d[(0, 0)] = ed;
            d[(0, 2)] = self.a * sed * s;
            d[(0, 3)] = -self.a * sed * c;
            d[(1, 1)] = 2.0 * p.rho * p.rho_d;
            d[(1, 2)] = self.a * g1d * c;
            d[(1, 3)] = self.a * g1d * s;
            d[(1, 4)] = self.a * g2d;
        } else {
            d[(0, 2)] = self.a * se * c;
            d[(0, 3)] = self.a * se * s;
            d[(1, 2)] = -self.a * g1 * s;
            d[(1, 3)] = self.a * g1 * c;
        }
        Some(d)
    }
    fn matrix_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(2, 5))
    }
    fn offset_jacobian(&self, q: &DVector<f64>, _t: f64) -> Option<DMatrix<f64>> {
        let p = self.profile.eval_raw(q[0]);
        let e = p.metric_e();
        let se = e.sqrt();
        let sed = p.metric_e_d() / (2.0 * se);
        let contact_radius = p.rho + self.a * p.zeta_d / se;
        let contact_radius_d = p.rho_d + self.a * (p.zeta_dd / se - p.zeta_d * sed / e);
        let mut j = DMatrix::zeros(2, 5);
        j[(1, 0)] = -self.omega * (p.rho_d * contact_radius + p.rho * contact_radius_d);
        Some(j)
    }
    fn offset_dt(&self, _q: &DVector<f64>, _t: f64) -> Option<DVector<f64>> {
        Some(DVector::zeros(2))
    }
}

fn surface_chart() -> ChartMeta {
    ChartMeta {
        angle_coords: vec![1],
        spin_coords: vec![2, 3, 4],
    }
}

fn surface_reduced_state(st: &VelocityState) -> DVector<f64> {
    DVector::from_vec(vec![st.q[0], st.qdot[0], st.qdot[1], st.qdot[4]])
}

/// Build the rotating-surface system with the energy and the moving energy
/// `E − Ω(ρ²φ̇ + ca²ω_z)` registered as named integrals.
pub fn build_rotating_surface(p: &SurfaceParams) -> Result<NonholonomicSystem> {
    p.validate()?;
    let ca2 = p.c * p.a * p.a;
    let lagrangian = MechanicalLagrangian::new(Arc::new(SurfaceLagrangian {
        profile: p.profile.clone(),
        ca2,
        gravity: p.gravity,
    }));
    let constraint = AffineConstraint::new(Arc::new(SurfaceConstraint {
        profile: p.profile.clone(),
        a: p.a,
        omega: p.omega,
    }));
    let (lo, hi) = p.profile.domain();
    let probe = if hi.is_finite() {
        0.5 * (lo + hi)
    } else {
        lo + 1.0
    };
    lagrangian.validate_at(&DVector::from_vec(vec![probe, 0.0, 0.0, 0.0, 0.0]), 0.0)?;

    let energy = {
        let l = lagrangian.clone();
        ScalarField::new("energy", move |st: &VelocityState| {
            l.energy(st).expect("dimensions fixed")
        })
    };
    let moving = {
        let l = lagrangian.clone();
        let profile = p.profile.clone();
        let omega = p.omega;
        ScalarField::new("moving_energy", move |st: &VelocityState| {
            let e = l.energy(st).expect("dimensions fixed");
            let rho = profile.eval_raw(st.q[0]).rho;
            e - omega * (rho * rho * st.qdot[1] + ca2 * st.qdot[4])
        })
    };
    Ok(NonholonomicSystem::new(lagrangian, constraint)?
        .with_chart(surface_chart())
        .with_integrals(vec![energy, moving])
        .with_reduced_state(surface_reduced_state))
}

/// On-fiber state of the surface system from `(u, φ, u̇, φ̇, ω_z)` with
/// `ψ = 0`: the in-plane spin components are solved from the two constraint
/// rows. Fails off the profile domain or where the meridian is horizontal
/// (`ρ' = 0`), where the rows do not determine the spin.
pub fn surface_state(
    p: &SurfaceParams,
    u: f64,
    phi: f64,
    udot: f64,
    phidot: f64,
    omega_z: f64,
) -> Result<VelocityState> {
    let pt = p.profile.eval(u)?;
    let (c, s) = rot2(phi);
    let e = pt.metric_e();
    let se = e.sqrt();
    let g1 = pt.rho * pt.rho_d / se;
    let g2 = pt.rho * pt.zeta_d / se;
    if g1.abs() < 1e-12 {
        return Err(CoreError::InvalidInput(
            "cannot complete spin components where rho' = 0".into(),
        ));
    }
    let contact_radius = pt.rho + p.a * pt.zeta_d / se;
    // alpha = sinφ ω_x − cosφ ω_y, beta = cosφ ω_x + sinφ ω_y.
    let alpha = -se * udot / p.a;
    let beta = (p.omega * pt.rho * contact_radius - pt.rho * pt.rho * phidot - p.a * g2 * omega_z)
        / (p.a * g1);
    let omega_x = s * alpha + c * beta;
    let omega_y = -c * alpha + s * beta;
    VelocityState::from_slices(
        &[u, phi, 0.0, 0.0, 0.0],
        &[udot, phidot, omega_x, omega_y, omega_z],
        0.0,
    )
}

/// S¹ generator of the surface system: `Y_η = (0, η, 0, 0, η)`, with its
/// honest chart flow (azimuth shift plus spin translation).
pub fn surface_generator(eta: f64) -> GroupGenerator {
    GroupGenerator::new(move |_q: &DVector<f64>| DVector::from_vec(vec![0.0, eta, 0.0, 0.0, eta]))
        .with_flow(TimeDependentMap::new(
            5,
            move |u, t| {
                let mut q = u.clone();
                q[1] += eta * t;
                q[4] += eta * t;
                q
            },
            move |_, _| DMatrix::identity(5, 5),
            move |_, _| DVector::from_vec(vec![0.0, eta, 0.0, 0.0, eta]),
            move |q, t| {
                let mut u = q.clone();
                u[1] -= eta * t;
                u[4] -= eta * t;
                u
            },
        ))
}

/// Sampled elements of the lifted S¹ action on the surface chart.
pub fn surface_action_samples(thetas: &[f64]) -> Vec<ActionSample> {
    thetas
        .iter()
        .map(|&theta| {
            ActionSample::new(
                format!("azimuth({theta:.4})"),
                move |q: &DVector<f64>| {
                    let mut out = q.clone();
                    out[1] += theta;
                    rotate_pair(&mut out, 2, 3, theta);
                    out
                },
                move |_q: &DVector<f64>| block_rotation5(theta, false, true),
            )
        })
        .collect()
}

/// Rotating-frame map of the surface system (azimuth shift at the surface
/// rate; physical tangent data on the spin block, see the module docs).
pub fn surface_rotating_map(p: &SurfaceParams) -> TimeDependentMap {
    let omega = p.omega;
    TimeDependentMap::new(
        5,
        move |u, t| {
            let mut q = u.clone();
            q[1] += omega * t;
            rotate_pair(&mut q, 2, 3, omega * t);
            q
        },
        move |_, t| block_rotation5(omega * t, false, true),
        move |_, _| DVector::from_vec(vec![0.0, omega, 0.0, 0.0, omega]),
        move |q, t| {
            let mut u = q.clone();
            u[1] -= omega * t;
            rotate_pair(&mut u, 2, 3, -omega * t);
            u
        },
    )
}

/// Rotating-frame twin of the surface system: the constraint loses its
/// offset, the linear term becomes `M Y_Ω + ½ca²Ω e_z×ψ`, and the potential
/// gains the centrifugal well `−½Ω²ρ(u)² − ½ca²Ω²`.
pub fn surface_rotating_frame_twin(p: &SurfaceParams) -> Result<NonholonomicSystem> {
    p.validate()?;
    let ca2 = p.c * p.a * p.a;
    let omega = p.omega;
    let kappa = ca2 * omega;
    let gravity = p.gravity;
    let profile_m = p.profile.clone();
    let profile_b = p.profile.clone();
    let profile_bj = p.profile.clone();
    let profile_v = p.profile.clone();
    let profile_vg = p.profile.clone();
    let lagrangian = MechanicalLagrangian::new(Arc::new(TwinLagrangian {
        mass: DVector::zeros(5),
        mass_of_q: Some(Arc::new(move |q: &DVector<f64>| {
            let pt = profile_m.eval_raw(q[0]);
            (
                DVector::from_vec(vec![pt.metric_e(), pt.rho * pt.rho, ca2, ca2, ca2]),
                DVector::from_vec(vec![
                    pt.metric_e_d(),
                    2.0 * pt.rho * pt.rho_d,
                    0.0,
                    0.0,
                    0.0,
                ]),
            )
        })),
        linear: GyroLinearTerm {
            base: Box::new(move |q: &DVector<f64>| {
                let pt = profile_b.eval_raw(q[0]);
                DVector::from_vec(vec![0.0, pt.rho * pt.rho * omega, 0.0, 0.0, 0.0])
            }),
            base_jacobian: Box::new(move |q: &DVector<f64>| {
                let pt = profile_bj.eval_raw(q[0]);
                let mut j = DMatrix::zeros(5, 5);
                j[(1, 0)] = 2.0 * pt.rho * pt.rho_d * omega;
                j
            }),
            kappa,
        },
        potential: Box::new(move |q: &DVector<f64>| {
            let pt = profile_v.eval_raw(q[0]);
            gravity * pt.zeta - 0.5 * omega * omega * pt.rho * pt.rho - 0.5 * ca2 * omega * omega
        }),
        potential_gradient: Box::new(move |q: &DVector<f64>| {
            let pt = profile_vg.eval_raw(q[0]);
            let mut g = DVector::zeros(5);
            g[0] = gravity * pt.zeta_d - omega * omega * pt.rho * pt.rho_d;
            g
        }),
    }));
    let constraint = AffineConstraint::new(Arc::new(SurfaceConstraint {
        profile: p.profile.clone(),
        a: p.a,
        omega: 0.0,
    }));
    let energy = {
        let l = lagrangian.clone();
        ScalarField::new("energy", move |st: &VelocityState| {
            l.energy(st).expect("dimensions fixed")
        })
    };
    Ok(NonholonomicSystem::new(lagrangian, constraint)?
        .with_chart(surface_chart())
        .with_integrals(vec![energy])
        .with_reduced_state(surface_reduced_state))
}

// ---------------------------------------------------------------------------
// Preset dispatcher.
// ---------------------------------------------------------------------------

/// The two shipped presets behind one dispatching handle.
#[derive(Debug, Clone)]
pub enum SystemPreset {
    Turntable(TurntableParams),
    RotatingSurface(SurfaceParams),
}

impl SystemPreset {
    pub fn build(&self) -> Result<NonholonomicSystem> {
        match self {
            Self::Turntable(p) => build_turntable(p),
            Self::RotatingSurface(p) => build_rotating_surface(p),
        }
    }

    pub fn rotation_rate(&self) -> f64 {
        match self {
            Self::Turntable(p) => p.omega,
            Self::RotatingSurface(p) => p.omega,
        }
    }

    pub fn rotating_map(&self) -> TimeDependentMap {
        match self {
            Self::Turntable(p) => turntable_rotating_map(p),
            Self::RotatingSurface(p) => surface_rotating_map(p),
        }
    }

    pub fn generator(&self, eta: f64) -> GroupGenerator {
        match self {
            Self::Turntable(_) => turntable_generator(eta),
            Self::RotatingSurface(_) => surface_generator(eta),
        }
    }

    pub fn action_samples(&self, thetas: &[f64]) -> Vec<ActionSample> {
        match self {
            Self::Turntable(_) => turntable_action_samples(thetas),
            Self::RotatingSurface(_) => surface_action_samples(thetas),
        }
    }

    /// The system rewritten in coordinates co-rotating with the surface.
    pub fn rotating_frame_twin(&self) -> Result<NonholonomicSystem> {
        match self {
            Self::Turntable(p) => turntable_rotating_frame_twin(p),
            Self::RotatingSurface(p) => surface_rotating_frame_twin(p),
        }
    }

    /// Dynamically meaningful components of a state: the two position
    /// coordinates and all five velocities. The spin pseudo-coordinate values
    /// are bookkeeping and are excluded from trajectory comparisons.
    pub fn dynamical_components(&self, st: &VelocityState) -> DVector<f64> {
        DVector::from_vec(vec![
            st.q[0], st.q[1], st.qdot[0], st.qdot[1], st.qdot[2], st.qdot[3], st.qdot[4],
        ])
    }
}
