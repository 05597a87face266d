//! Numerical integration of nonholonomic vector fields with constraint-drift
//! control, plus attitude reconstruction on SO(3).
//!
//! Two methods are provided: a fixed-step classical RK4 and an adaptive
//! Dormand–Prince 5(4) pair with fourth-order continuous output. After each
//! accepted step the velocity can be re-projected onto the constraint fiber
//! in the mass-matrix metric; drift stabilization by feedback terms is
//! deliberately not offered, so conserved-quantity measurements stay clean.

use nalgebra::{DVector, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::dynamics::{DynamicsOutput, NonholonomicSystem, VelocityState};
use crate::error::{CoreError, Result};

/// Integration method selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Classical fixed-step fourth-order Runge–Kutta.
    Rk4 { step: f64 },
    /// Adaptive Dormand–Prince 5(4) with dense output.
    Dp54 { rtol: f64, atol: f64 },
}

/// Velocity re-projection policy applied after accepted steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    None,
    EveryStep,
    EveryK(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorOptions {
    pub method: Method,
    pub projection: Projection,
    pub max_steps: usize,
    /// Keep per-step interpolation coefficients (DP54 only).
    pub dense: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            method: Method::Dp54 {
                rtol: 1e-10,
                atol: 1e-12,
            },
            projection: Projection::EveryStep,
            max_steps: 50_000_000,
            dense: true,
        }
    }
}

impl IntegratorOptions {
    /// Tight tolerances used by the conservation measurements.
    pub fn acceptance() -> Self {
        Self {
            method: Method::Dp54 {
                rtol: 1e-12,
                atol: 1e-14,
            },
            ..Self::default()
        }
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.method = Method::Dp54 { rtol, atol };
        self
    }
}

/// One Dormand–Prince step's interpolation data.
#[derive(Debug, Clone)]
struct DenseSegment {
    t0: f64,
    h: f64,
    rcont: [DVector<f64>; 5],
}

impl DenseSegment {
    fn eval(&self, t: f64) -> DVector<f64> {
        let theta = (t - self.t0) / self.h;
        let th1 = 1.0 - theta;
        &self.rcont[0]
            + (&self.rcont[1]
                + (&self.rcont[2] + (&self.rcont[3] + &self.rcont[4] * th1) * theta) * th1)
                * theta
    }
}

/// Time-stamped integration output: states, multipliers, residuals, and the
/// dense interpolant when the adaptive method produced one.
#[derive(Debug, Clone)]
pub struct Trajectory {
    n: usize,
    pub times: Vec<f64>,
    pub states: Vec<VelocityState>,
    pub multipliers: Vec<DVector<f64>>,
    /// Constraint residual norms `‖S q̇ + s‖` at the stored nodes.
    pub residuals: Vec<f64>,
    dense: Option<Vec<DenseSegment>>,
    /// Node derivatives, kept for Hermite interpolation when no dense output.
    derivs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn state(&self, idx: usize) -> &VelocityState {
        &self.states[idx]
    }

    pub fn last_state(&self) -> &VelocityState {
        self.states.last().unwrap()
    }

    pub fn has_dense_output(&self) -> bool {
        self.dense.is_some()
    }

    /// Interpolated state at `t` (clamped to the covered span). Uses the
    /// continuous Dormand–Prince extension when present, otherwise cubic
    /// Hermite interpolation on the stored nodes.
    pub fn sample(&self, t: f64) -> VelocityState {
        let t = t.clamp(self.start_time(), self.end_time());
        let seg = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => {
                if i == self.times.len() - 1 && i > 0 {
                    i - 1
                } else {
                    return self.states[i].clone();
                }
            }
            Err(i) => i.saturating_sub(1).min(self.times.len().saturating_sub(2)),
        };
        let y = if let Some(dense) = &self.dense {
            dense[seg].eval(t)
        } else {
            self.hermite(seg, t)
        };
        self.unpack(y, t)
    }

    fn hermite(&self, seg: usize, t: f64) -> DVector<f64> {
        let t0 = self.times[seg];
        let t1 = self.times[seg + 1];
        let h = t1 - t0;
        let theta = (t - t0) / h;
        let y0 = pack(&self.states[seg]);
        let y1 = pack(&self.states[seg + 1]);
        let d0 = &self.derivs[seg];
        let d1 = &self.derivs[seg + 1];
        let h00 = (1.0 + 2.0 * theta) * (1.0 - theta) * (1.0 - theta);
        let h10 = theta * (1.0 - theta) * (1.0 - theta);
        let h01 = theta * theta * (3.0 - 2.0 * theta);
        let h11 = theta * theta * (theta - 1.0);
        y0 * h00 + d0 * (h10 * h) + y1 * h01 + d1 * (h11 * h)
    }

    fn unpack(&self, y: DVector<f64>, t: f64) -> VelocityState {
        let n = self.n;
        VelocityState {
            q: y.rows(0, n).into_owned(),
            qdot: y.rows(n, n).into_owned(),
            t,
        }
    }

    /// CSV export with full round-trip precision (17 significant digits).
    /// Header: `t,q0..,qd0..,lambda0..,residual`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.n;
        let k = self.multipliers.first().map_or(0, |l| l.len());
        let mut header = String::from("t");
        for i in 0..n {
            header.push_str(&format!(",q{i}"));
        }
        for i in 0..n {
            header.push_str(&format!(",qd{i}"));
        }
        for i in 0..k {
            header.push_str(&format!(",lambda{i}"));
        }
        header.push_str(",residual");
        writeln!(w, "{header}")?;
        for i in 0..self.len() {
            let mut row = format!("{:.16e}", self.times[i]);
            for v in self.states[i].q.iter().chain(self.states[i].qdot.iter()) {
                row.push_str(&format!(",{v:.16e}"));
            }
            for v in self.multipliers[i].iter() {
                row.push_str(&format!(",{v:.16e}"));
            }
            row.push_str(&format!(",{:.16e}", self.residuals[i]));
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    /// Versioned little-endian binary export: magic `NHTJ`, format version,
    /// dimensions, then rows of `t, q, qdot, lambda, residual` as f64.
    pub fn write_binary<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let k = self.multipliers.first().map_or(0, |l| l.len());
        w.write_all(b"NHTJ")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(k as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for i in 0..self.len() {
            w.write_all(&self.times[i].to_le_bytes())?;
            for v in self.states[i].q.iter().chain(self.states[i].qdot.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in self.multipliers[i].iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&self.residuals[i].to_le_bytes())?;
        }
        Ok(())
    }

    /// Build a trajectory from externally supplied samples (no dense output).
    pub fn from_samples(states: Vec<VelocityState>, derivs: Vec<DVector<f64>>) -> Self {
        assert!(!states.is_empty());
        assert_eq!(states.len(), derivs.len());
        let n = states[0].dim();
        let times = states.iter().map(|s| s.t).collect();
        let k = 0;
        let count = states.len();
        Self {
            n,
            times,
            states,
            multipliers: vec![DVector::zeros(k); count],
            residuals: vec![0.0; count],
            dense: None,
            derivs,
        }
    }
}

fn pack(state: &VelocityState) -> DVector<f64> {
    let n = state.dim();
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(&state.q);
    y.rows_mut(n, n).copy_from(&state.qdot);
    y
}

struct Eval {
    deriv: DVector<f64>,
    output: DynamicsOutput,
    residual: f64,
}

fn eval_rhs(sys: &NonholonomicSystem, y: &DVector<f64>, t: f64) -> Result<Eval> {
    let n = sys.dim();
    if !y.iter().all(|v| v.is_finite()) {
        return Err(CoreError::Diverged { t });
    }
    let state = VelocityState {
        q: y.rows(0, n).into_owned(),
        qdot: y.rows(n, n).into_owned(),
        t,
    };
    let residual = if sys.constraint_rows() > 0 {
        sys.constraint().residual(&state)?.norm()
    } else {
        0.0
    };
    let (deriv, output) = sys.rhs(&state)?;
    Ok(Eval {
        deriv,
        output,
        residual,
    })
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Integrate the nonholonomic flow of `sys` from `init` over `t_span`.
///
/// When projection is enabled the initial velocity is projected onto the
/// fiber first; otherwise off-fiber initial data is rejected by the dynamics
/// evaluation itself.
pub fn integrate(
    sys: &NonholonomicSystem,
    init: &VelocityState,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(CoreError::InvalidInput(format!(
            "integration span must be increasing, got [{t0}, {t1}]"
        )));
    }
    let mut init = init.clone();
    init.t = t0;
    if opts.projection != Projection::None {
        init.qdot = sys.project_velocity(&init.q, &init.qdot, init.t)?;
    } else if sys.constraint_rows() > 0 {
        let residual = sys.constraint().residual(&init)?.norm();
        let tol = sys.options().off_manifold_tol * (1.0 + init.qdot.norm());
        if residual > tol {
            return Err(CoreError::OffManifold { residual, tol });
        }
    }
    match opts.method {
        Method::Rk4 { step } => integrate_rk4(sys, &init, t1, step, opts),
        Method::Dp54 { rtol, atol } => integrate_dp54(sys, &init, t1, rtol, atol, opts),
    }
}

fn should_project(projection: Projection, step_index: usize) -> bool {
    match projection {
        Projection::None => false,
        Projection::EveryStep => true,
        Projection::EveryK(k) => k > 0 && step_index.is_multiple_of(k),
    }
}

fn integrate_rk4(
    sys: &NonholonomicSystem,
    init: &VelocityState,
    t1: f64,
    step: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    if !(step > 0.0) {
        return Err(CoreError::InvalidInput("rk4 step must be positive".into()));
    }
    let n = sys.dim();
    let mut y = pack(init);
    let mut t = init.t;
    let mut traj = Trajectory {
        n,
        times: Vec::new(),
        states: Vec::new(),
        multipliers: Vec::new(),
        residuals: Vec::new(),
        dense: None,
        derivs: Vec::new(),
    };
    let mut steps = 0usize;
    loop {
        let ev = eval_rhs(sys, &y, t)?;
        traj.times.push(t);
        traj.states.push(VelocityState {
            q: y.rows(0, n).into_owned(),
            qdot: y.rows(n, n).into_owned(),
            t,
        });
        traj.multipliers.push(ev.output.lambda.clone());
        traj.residuals.push(ev.residual);
        traj.derivs.push(ev.deriv.clone());
        if t >= t1 - 1e-14 * t1.abs().max(1.0) {
            break;
        }
        if steps >= opts.max_steps {
            return Err(CoreError::MaxStepsExceeded {
                max_steps: opts.max_steps,
                t,
            });
        }
        let h = step.min(t1 - t);
        let k1 = ev.deriv;
        let k2 = eval_rhs(sys, &(&y + &k1 * (0.5 * h)), t + 0.5 * h)?.deriv;
        let k3 = eval_rhs(sys, &(&y + &k2 * (0.5 * h)), t + 0.5 * h)?.deriv;
        let k4 = eval_rhs(sys, &(&y + &k3 * h), t + h)?.deriv;
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t += h;
        steps += 1;
        if should_project(opts.projection, steps) {
            let q = y.rows(0, n).into_owned();
            let qd = y.rows(n, n).into_owned();
            let projected = sys.project_velocity(&q, &qd, t)?;
            y.rows_mut(n, n).copy_from(&projected);
        }
    }
    Ok(traj)
}

fn error_norm(
    err: &DVector<f64>,
    y0: &DVector<f64>,
    y1: &DVector<f64>,
    rtol: f64,
    atol: f64,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..err.len() {
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / err.len() as f64).sqrt()
}

fn integrate_dp54(
    sys: &NonholonomicSystem,
    init: &VelocityState,
    t1: f64,
    rtol: f64,
    atol: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(CoreError::InvalidInput(
            "rtol and atol must be positive".into(),
        ));
    }
    let n = sys.dim();
    let mut y = pack(init);
    let mut t = init.t;

    let mut traj = Trajectory {
        n,
        times: Vec::new(),
        states: Vec::new(),
        multipliers: Vec::new(),
        residuals: Vec::new(),
        dense: opts.dense.then(Vec::new),
        derivs: Vec::new(),
    };

    let ev0 = eval_rhs(sys, &y, t)?;
    traj.times.push(t);
    traj.states.push(init.clone());
    traj.multipliers.push(ev0.output.lambda.clone());
    traj.residuals.push(ev0.residual);
    traj.derivs.push(ev0.deriv.clone());

    let mut k1 = ev0.deriv;
    let mut h = 1e-4 * (1.0 + y.norm()) / (1.0 + k1.norm());
    h = h.min((t1 - t) * 0.1).max(1e-10);

    let mut accepted = 0usize;
    let mut attempts = 0usize;
    loop {
        if t >= t1 - 1e-14 * t1.abs().max(1.0) {
            break;
        }
        if attempts >= opts.max_steps {
            return Err(CoreError::MaxStepsExceeded {
                max_steps: opts.max_steps,
                t,
            });
        }
        attempts += 1;
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(CoreError::StepUnderflow { t, h });
        }
        h = h.min(t1 - t);

        let mut ks: Vec<DVector<f64>> = Vec::with_capacity(7);
        ks.push(k1.clone());
        let mut failed_stage = false;
        for stage in 1..6 {
            let mut yi = y.clone();
            for (j, kj) in ks.iter().enumerate() {
                let a = A[stage - 1][j];
                if a != 0.0 {
                    yi += kj * (a * h);
                }
            }
            match eval_rhs(sys, &yi, t + C[stage] * h) {
                Ok(e) => ks.push(e.deriv),
                Err(CoreError::Diverged { .. }) | Err(CoreError::NonFiniteState) => {
                    failed_stage = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failed_stage {
            // Midstage left the admissible region; retry smaller.
            h *= 0.25;
            continue;
        }
        let mut y1 = y.clone();
        for (j, kj) in ks.iter().enumerate() {
            let a = A[5][j];
            if a != 0.0 {
                y1 += kj * (a * h);
            }
        }
        let ev7 = match eval_rhs(sys, &y1, t + h) {
            Ok(e) => e,
            Err(CoreError::Diverged { .. }) | Err(CoreError::NonFiniteState) => {
                h *= 0.25;
                continue;
            }
            Err(e) => return Err(e),
        };
        ks.push(ev7.deriv.clone());

        let mut err = DVector::zeros(2 * n);
        for (j, kj) in ks.iter().enumerate() {
            if E[j] != 0.0 {
                err += kj * (E[j] * h);
            }
        }
        let norm = error_norm(&err, &y, &y1, rtol, atol);
        if !norm.is_finite() {
            return Err(CoreError::Diverged { t });
        }
        if norm <= 1.0 {
            // Accept.
            if let Some(dense) = traj.dense.as_mut() {
                let ydiff = &y1 - &y;
                let bspl = &ks[0] * h - &ydiff;
                let r4 = &ydiff - &ks[6] * h - &bspl;
                let mut r5 = DVector::zeros(2 * n);
                for (j, kj) in ks.iter().enumerate() {
                    if D[j] != 0.0 {
                        r5 += kj * (D[j] * h);
                    }
                }
                dense.push(DenseSegment {
                    t0: t,
                    h,
                    rcont: [y.clone(), ydiff, bspl, r4, r5],
                });
            }
            t += h;
            y = y1;
            accepted += 1;
            if should_project(opts.projection, accepted) {
                let q = y.rows(0, n).into_owned();
                let qd = y.rows(n, n).into_owned();
                let projected = sys.project_velocity(&q, &qd, t)?;
                y.rows_mut(n, n).copy_from(&projected);
            }
            // Node record; also serves as the next step's first stage.
            let ev = eval_rhs(sys, &y, t)?;
            // Accumulated drift is reported, never clamped, but a blown-up
            // fiber distance aborts the run.
            if ev.residual > 1e-3 * (1.0 + y.rows(n, n).norm()) {
                return Err(CoreError::OffManifold {
                    residual: ev.residual,
                    tol: 1e-3 * (1.0 + y.rows(n, n).norm()),
                });
            }
            traj.times.push(t);
            traj.states.push(VelocityState {
                q: y.rows(0, n).into_owned(),
                qdot: y.rows(n, n).into_owned(),
                t,
            });
            traj.multipliers.push(ev.output.lambda.clone());
            traj.residuals.push(ev.residual);
            traj.derivs.push(ev.deriv.clone());
            k1 = ev.deriv;

            let fac = (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0);
            h *= fac;
        } else {
            let fac = (0.9 * norm.powf(-0.2)).clamp(0.2, 1.0);
            h *= fac;
        }
    }
    Ok(traj)
}

/// Unit-quaternion attitude path `R(t)`.
#[derive(Debug, Clone)]
pub struct AttitudePath {
    pub times: Vec<f64>,
    pub quaternions: Vec<UnitQuaternion<f64>>,
}

impl AttitudePath {
    pub fn rotation(&self, idx: usize) -> Rotation3<f64> {
        self.quaternions[idx].to_rotation_matrix()
    }

    pub fn last_rotation(&self) -> Rotation3<f64> {
        self.quaternions.last().unwrap().to_rotation_matrix()
    }
}

/// Integrate the spatial kinematic equation `Ṙ = ω̂ R` as a quaternion ODE
/// with per-step renormalization.
///
/// `omega` supplies the spatial angular velocity at arbitrary times (for
/// example out of a dense trajectory); `step` must resolve the rotation rate,
/// `step · max‖ω‖ < 0.5`.
pub fn reconstruct_attitude(
    omega: &dyn Fn(f64) -> Vector3<f64>,
    t_span: (f64, f64),
    step: f64,
    r0: UnitQuaternion<f64>,
) -> Result<AttitudePath> {
    let (t0, t1) = t_span;
    if !(t1 >= t0) || !(step > 0.0) {
        return Err(CoreError::InvalidInput(
            "attitude reconstruction needs t1 >= t0 and step > 0".into(),
        ));
    }
    let deriv = |q: &Quaternion<f64>, t: f64| -> Result<Quaternion<f64>> {
        let w = omega(t);
        if step * w.norm() >= 0.5 {
            return Err(CoreError::UndersampledOmega {
                product: step * w.norm(),
            });
        }
        let wq = Quaternion::new(0.0, w.x, w.y, w.z);
        Ok(wq * q * 0.5)
    };
    let steps = ((t1 - t0) / step).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut quats = Vec::with_capacity(steps + 1);
    let mut q = *r0.quaternion();
    let mut t = t0;
    times.push(t);
    quats.push(UnitQuaternion::from_quaternion(q));
    for _ in 0..steps {
        let h = step.min(t1 - t);
        if h <= 0.0 {
            break;
        }
        let k1 = deriv(&q, t)?;
        let k2 = deriv(&(q + k1 * (0.5 * h)), t + 0.5 * h)?;
        let k3 = deriv(&(q + k2 * (0.5 * h)), t + 0.5 * h)?;
        let k4 = deriv(&(q + k3 * h), t + h)?;
        q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        q = q.normalize();
        t += h;
        times.push(t);
        quats.push(UnitQuaternion::from_quaternion(q));
    }
    Ok(AttitudePath {
        times,
        quaternions: quats,
    })
}

/// Convenience: spatial angular velocity reader for systems whose chart uses
/// the flat spin pseudo-coordinate block.
pub fn spin_rate_of<'a>(
    traj: &'a Trajectory,
    spin_coords: &[usize],
) -> impl Fn(f64) -> Vector3<f64> + 'a {
    let idx: Vec<usize> = spin_coords.to_vec();
    move |t: f64| {
        let st = traj.sample(t);
        Vector3::new(st.qdot[idx[0]], st.qdot[idx[1]], st.qdot[idx[2]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AffineConstraint, MechanicalLagrangian};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn free_particle() -> NonholonomicSystem {
        NonholonomicSystem::new(
            MechanicalLagrangian::kinetic(DMatrix::identity(2, 2)),
            AffineConstraint::none(2),
        )
        .unwrap()
    }

    #[test]
    fn rk4_exact_on_free_particle() {
        let sys = free_particle();
        let init = VelocityState::from_slices(&[0.0, 1.0], &[2.0, -0.5], 0.0).unwrap();
        let opts = IntegratorOptions {
            method: Method::Rk4 { step: 0.125 },
            projection: Projection::None,
            ..Default::default()
        };
        let traj = integrate(&sys, &init, (0.0, 2.0), &opts).unwrap();
        let end = traj.last_state();
        assert_relative_eq!(end.q[0], 4.0, max_relative = 1e-14);
        assert_relative_eq!(end.q[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(end.qdot[0], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn dp54_harmonic_oscillator_accuracy_and_dense_output() {
        // q̈ = −q via V = ½‖q‖².
        let l = MechanicalLagrangian::from_fns(
            2,
            |_, _| DMatrix::identity(2, 2),
            |_, _| DVector::zeros(2),
            |q, _| 0.5 * q.norm_squared(),
        );
        let sys = NonholonomicSystem::new(l, AffineConstraint::none(2)).unwrap();
        let init = VelocityState::from_slices(&[1.0, 0.0], &[0.0, 1.0], 0.0).unwrap();
        let opts = IntegratorOptions {
            projection: Projection::None,
            ..IntegratorOptions::acceptance()
        };
        let traj = integrate(&sys, &init, (0.0, 2.0 * std::f64::consts::PI), &opts).unwrap();
        let end = traj.last_state();
        assert!((end.q[0] - 1.0).abs() < 1e-9);
        assert!(end.q[1].abs() < 1e-9);
        // Dense output against the analytic solution at off-node times.
        for &t in &[0.3, 1.7, 4.0, 6.0] {
            let st = traj.sample(t);
            assert!((st.q[0] - t.cos()).abs() < 1e-9, "dense q0 at t={t}");
            assert!((st.q[1] - t.sin()).abs() < 1e-9, "dense q1 at t={t}");
        }
    }

    #[test]
    fn dense_output_is_continuous_across_steps() {
        let l = MechanicalLagrangian::from_fns(
            2,
            |_, _| DMatrix::identity(2, 2),
            |_, _| DVector::zeros(2),
            |q, _| 0.5 * q.norm_squared(),
        );
        let sys = NonholonomicSystem::new(l, AffineConstraint::none(2)).unwrap();
        let init = VelocityState::from_slices(&[1.0, 0.0], &[0.0, 1.0], 0.0).unwrap();
        let opts = IntegratorOptions {
            projection: Projection::None,
            method: Method::Dp54 {
                rtol: 1e-10,
                atol: 1e-12,
            },
            ..Default::default()
        };
        let traj = integrate(&sys, &init, (0.0, 5.0), &opts).unwrap();
        let dense = traj.dense.as_ref().unwrap();
        for w in dense.windows(2) {
            let t_join = w[1].t0;
            let left = w[0].eval(t_join);
            let right = w[1].eval(t_join);
            assert!((left - right).amax() < 1e-9, "jump at t = {t_join}");
        }
    }

    #[test]
    fn attitude_constant_omega_is_axis_rotation() {
        let omega = |_t: f64| Vector3::new(0.0, 0.0, 1.0);
        let path = reconstruct_attitude(
            &omega,
            (0.0, std::f64::consts::PI),
            1e-3,
            UnitQuaternion::identity(),
        )
        .unwrap();
        let r = path.last_rotation();
        let expected = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
        assert!((r.matrix() - expected.matrix()).amax() < 1e-10);
        // Quaternion is (w,x,y,z) = (0,0,0,1) up to sign.
        let q = path.quaternions.last().unwrap();
        assert!(q.w.abs() < 1e-10);
        assert!((q.k.abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn attitude_zero_omega_is_constant() {
        let omega = |_t: f64| Vector3::zeros();
        let r0 = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.7);
        let path = reconstruct_attitude(&omega, (0.0, 3.0), 0.01, r0).unwrap();
        for q in &path.quaternions {
            assert!(
                (q.to_rotation_matrix().matrix() - r0.to_rotation_matrix().matrix()).amax() < 1e-14
            );
        }
    }

    #[test]
    fn attitude_finite_difference_recovers_omega() {
        // Time-varying omega; check ω̂ = Ṙ Rᵀ by finite differences.
        let omega = |t: f64| Vector3::new(0.3 * t.sin(), 0.5, 0.2 * t.cos());
        let path =
            reconstruct_attitude(&omega, (0.0, 2.0), 2e-4, UnitQuaternion::identity()).unwrap();
        let idx = path.times.len() / 2;
        let h = path.times[idx + 1] - path.times[idx];
        let r_prev = path.rotation(idx - 1);
        let r_next = path.rotation(idx + 1);
        let r_mid = path.rotation(idx);
        let rdot = (r_next.matrix() - r_prev.matrix()) / (2.0 * h);
        let what = rdot * r_mid.matrix().transpose();
        let w = omega(path.times[idx]);
        assert!((what[(2, 1)] - w.x).abs() < 1e-5);
        assert!((what[(0, 2)] - w.y).abs() < 1e-5);
        assert!((what[(1, 0)] - w.z).abs() < 1e-5);
        // Orthogonality after renormalized integration.
        let r = path.last_rotation();
        let err = (r.matrix() * r.matrix().transpose()
            - DMatrix::identity(3, 3)
                .fixed_view::<3, 3>(0, 0)
                .into_owned())
        .amax();
        assert!(err < 1e-10);
    }

    #[test]
    fn max_steps_is_enforced() {
        let sys = free_particle();
        let init = VelocityState::from_slices(&[0.0, 1.0], &[2.0, -0.5], 0.0).unwrap();
        let opts = IntegratorOptions {
            method: Method::Rk4 { step: 1e-3 },
            projection: Projection::None,
            max_steps: 10,
            dense: false,
        };
        assert!(matches!(
            integrate(&sys, &init, (0.0, 1.0), &opts),
            Err(CoreError::MaxStepsExceeded { .. })
        ));
    }

    #[test]
    fn binary_export_layout() {
        let sys = free_particle();
        let init = VelocityState::from_slices(&[0.0, 1.0], &[2.0, -0.5], 0.0).unwrap();
        let opts = IntegratorOptions {
            method: Method::Rk4 { step: 0.25 },
            projection: Projection::None,
            ..Default::default()
        };
        let traj = integrate(&sys, &init, (0.0, 1.0), &opts).unwrap();
        let mut buf = Vec::new();
        traj.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"NHTJ");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let n = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
        assert_eq!((n, k, count), (2, 0, traj.len()));
        assert_eq!(buf.len(), 24 + count * (1 + 2 * n + k + 1) * 8);
        // First payload value is t0.
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 0.0);
    }

    #[test]
    fn attitude_undersampled_errors() {
        let omega = |_t: f64| Vector3::new(0.0, 0.0, 100.0);
        let res = reconstruct_attitude(&omega, (0.0, 1.0), 0.01, UnitQuaternion::identity());
        assert!(matches!(res, Err(CoreError::UndersampledOmega { .. })));
    }
}
