//! Quantitative verification of conservation claims on trajectories: drift
//! of first integrals, energy-rate identities, reaction-annihilator
//! membership, period detection, reconstruction frequencies, and functional
//! independence of integral families.

use nalgebra::{DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{NonholonomicSystem, ScalarField, VelocityState};
use crate::error::{CoreError, Result};
use crate::integrate::{reconstruct_attitude, Trajectory};

/// Drift statistics of one scalar field along a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct IntegralDrift {
    pub name: String,
    pub initial: f64,
    /// `max_t |I(t) − I(0)|` over the stored samples.
    pub max_abs_deviation: f64,
    /// Absolute deviation divided by `max(|I(0)|, 1)`.
    pub relative_drift: f64,
    /// Least-squares slope of `I(t) − I(0)` against `t`.
    pub drift_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub integrals: Vec<IntegralDrift>,
    pub samples: usize,
    pub t_span: (f64, f64),
}

impl DriftReport {
    pub fn entry(&self, name: &str) -> Option<&IntegralDrift> {
        self.integrals.iter().find(|e| e.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Exact max-deviation statistics of the given fields over the trajectory's
/// stored samples.
pub fn drift_report(traj: &Trajectory, integrals: &[ScalarField]) -> DriftReport {
    let entries = integrals
        .iter()
        .map(|field| {
            let initial = field.eval(traj.state(0));
            let mut max_dev: f64 = 0.0;
            let mut sum_t = 0.0;
            let mut sum_tt = 0.0;
            let mut sum_d = 0.0;
            let mut sum_td = 0.0;
            let n = traj.len() as f64;
            for i in 0..traj.len() {
                let dev = field.eval(traj.state(i)) - initial;
                let t = traj.times[i] - traj.times[0];
                max_dev = max_dev.max(dev.abs());
                sum_t += t;
                sum_tt += t * t;
                sum_d += dev;
                sum_td += t * dev;
            }
            let denom = n * sum_tt - sum_t * sum_t;
            let drift_rate = if denom.abs() > 0.0 {
                (n * sum_td - sum_t * sum_d) / denom
            } else {
                0.0
            };
            IntegralDrift {
                name: field.name().to_string(),
                initial,
                max_abs_deviation: max_dev,
                relative_drift: max_dev / initial.abs().max(1.0),
                drift_rate,
            }
        })
        .collect();
    DriftReport {
        integrals: entries,
        samples: traj.len(),
        t_span: (traj.start_time(), traj.end_time()),
    }
}

/// Write per-sample drift curves `I(t) − I(0)` as CSV for plotting:
/// `t,<name1>,<name2>,…` with full round-trip precision.
pub fn write_drift_curves<W: std::io::Write>(
    mut w: W,
    traj: &Trajectory,
    integrals: &[ScalarField],
) -> std::io::Result<()> {
    let mut header = String::from("t");
    for field in integrals {
        header.push(',');
        header.push_str(field.name());
    }
    writeln!(w, "{header}")?;
    let init: Vec<f64> = integrals.iter().map(|f| f.eval(traj.state(0))).collect();
    for i in 0..traj.len() {
        let mut row = format!("{:.16e}", traj.times[i]);
        for (field, i0) in integrals.iter().zip(&init) {
            row.push_str(&format!(",{:.16e}", field.eval(traj.state(i)) - i0));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Energy-rate diagnostics along a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyRateReport {
    /// `max_t |dE/dt − ⟨reaction, ξ₀⟩|`.
    pub max_reaction_discrepancy: f64,
    /// `max_t |dE/dt − closed_form|` when a closed form was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_closed_form_discrepancy: Option<f64>,
    pub max_abs_rate: f64,
    pub samples: usize,
}

impl EnergyRateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Compare the finite-difference energy rate along `traj` with the reaction
/// power `⟨reaction, ξ₀(q)⟩` (equal to `⟨reaction, q̇⟩` on the fiber), and
/// optionally with a closed-form rate.
///
/// The energy derivative is taken by a fourth-order central stencil on the
/// trajectory's interpolant, so the trajectory should carry dense output.
pub fn energy_rate_check(
    sys: &NonholonomicSystem,
    traj: &Trajectory,
    closed_form: Option<&ScalarField>,
    n_samples: usize,
) -> Result<EnergyRateReport> {
    let (t0, t1) = (traj.start_time(), traj.end_time());
    let h = 2e-3 * (t1 - t0).min(1.0);
    let mut max_reaction = 0.0_f64;
    let mut max_closed: Option<f64> = closed_form.map(|_| 0.0);
    let mut max_rate = 0.0_f64;
    let energy = |t: f64| -> Result<f64> {
        let st = traj.sample(t);
        sys.lagrangian().energy(&st)
    };
    for i in 0..n_samples {
        let t = t0 + (t1 - t0) * (i as f64 + 0.5) / n_samples as f64;
        if t - 2.0 * h < t0 || t + 2.0 * h > t1 {
            continue;
        }
        // Fourth-order five-point stencil.
        let de = (-energy(t + 2.0 * h)? + 8.0 * energy(t + h)? - 8.0 * energy(t - h)?
            + energy(t - 2.0 * h)?)
            / (12.0 * h);
        let st = traj.sample(t);
        let out = sys.eval_dynamics(&st)?;
        let xi = sys.constraint().representative_xi(&st.q, st.t)?;
        let pairing = out.reaction.dot(&xi);
        max_reaction = max_reaction.max((de - pairing).abs());
        max_rate = max_rate.max(de.abs());
        if let (Some(worst), Some(cf)) = (max_closed.as_mut(), closed_form) {
            *worst = worst.max((de - cf.eval(&st)).abs());
        }
    }
    Ok(EnergyRateReport {
        max_reaction_discrepancy: max_reaction,
        max_closed_form_discrepancy: max_closed,
        max_abs_rate: max_rate,
        samples: n_samples,
    })
}

/// Outcome of a reaction-annihilator membership test at one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    /// True iff the covector field value pairs to zero with every reaction
    /// exerted over the sampled fiber velocities.
    pub is_member: bool,
    pub max_pairing: f64,
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
}

/// Samples fiber velocities at configuration `q` (components uniform in
/// `[−1,1]ⁿ` before projection onto the affine fiber), computes the exerted
/// reactions, and reports whether `y_value` annihilates all of them.
pub fn reaction_annihilator_membership(
    sys: &NonholonomicSystem,
    q: &DVector<f64>,
    t: f64,
    y_value: &DVector<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<MembershipReport> {
    let n = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_pairing = 0.0_f64;
    let mut scale = 0.0_f64;
    for _ in 0..n_samples {
        let raw = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let qdot = sys.constraint().project_to_fiber(q, t, &raw)?;
        let state = VelocityState {
            q: q.clone(),
            qdot,
            t,
        };
        let out = sys.eval_dynamics(&state)?;
        max_pairing = max_pairing.max(out.reaction.dot(y_value).abs());
        scale = scale.max(out.reaction.norm() * y_value.norm());
    }
    let tolerance = 1e-9 * scale.max(1.0);
    Ok(MembershipReport {
        is_member: max_pairing <= tolerance,
        max_pairing,
        samples: n_samples,
        seed,
        tolerance,
    })
}

/// Section and thresholds for period detection.
#[derive(Debug, Clone, Serialize)]
pub struct SectionSpec {
    /// Full-state return threshold, relative to the reduced-state scale.
    pub return_tol: f64,
    /// Time refinement tolerance for the crossing solve.
    pub time_tol: f64,
    /// Crossings are searched on this sampling resolution.
    pub scan_dt: f64,
}

impl Default for SectionSpec {
    fn default() -> Self {
        Self {
            return_tol: 1e-6,
            time_tol: 1e-10,
            scan_dt: 1e-2,
        }
    }
}

/// A detected reduced period.
#[derive(Debug, Clone, Serialize)]
pub struct PeriodEstimate {
    pub period: f64,
    /// `‖z(T) − z(0)‖` in the reduced state.
    pub return_residual: f64,
    /// Whether the residual beat the configured threshold.
    pub periodic: bool,
    /// Same-direction section crossings examined before success.
    pub crossings_examined: usize,
    /// Degenerate case: the initial reduced velocity was numerically zero.
    pub fixed_point: bool,
    pub section: SectionSpec,
}

impl PeriodEstimate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Locate the first return to the hyperplane through the initial reduced
/// state with normal along the initial reduced velocity, refine the crossing
/// time on the interpolant, and verify the full reduced state returns.
///
/// `reduced` extracts the reduced state used both for the section and for
/// the return test; trajectories of systems with an installed reduced-state
/// hook can pass `|st| sys.reduced_state(st)`.
pub fn detect_period(
    traj: &Trajectory,
    reduced: &dyn Fn(&VelocityState) -> DVector<f64>,
    spec: &SectionSpec,
) -> Result<PeriodEstimate> {
    let t0 = traj.start_time();
    let t1 = traj.end_time();
    let z0 = reduced(&traj.sample(t0));
    let scale = z0.norm().max(1.0);

    // Section normal along the initial reduced velocity.
    let hd = 1e-6;
    let zdot0 = (reduced(&traj.sample(t0 + hd)) - &z0) / hd;
    if zdot0.norm() < 1e-10 * scale {
        return Ok(PeriodEstimate {
            period: 0.0,
            return_residual: 0.0,
            periodic: true,
            crossings_examined: 0,
            fixed_point: true,
            section: spec.clone(),
        });
    }
    let normal = zdot0.normalize();
    let g = |t: f64| -> f64 { normal.dot(&(reduced(&traj.sample(t)) - &z0)) };
    let gdot = |t: f64| -> f64 {
        let h = 1e-6;
        (g(t + h) - g(t - h)) / (2.0 * h)
    };

    let mut crossings = 0usize;
    let mut t_prev = t0 + spec.scan_dt;
    let mut g_prev = g(t_prev);
    let mut t = t_prev + spec.scan_dt;
    while t <= t1 {
        let g_now = g(t);
        if g_prev < 0.0 && g_now >= 0.0 {
            // Same-direction crossing bracketed in [t_prev, t]; bisect, then
            // polish with Newton steps on the interpolant.
            let (mut lo, mut hi) = (t_prev, t);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if g(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < spec.time_tol {
                    break;
                }
            }
            let mut tc = 0.5 * (lo + hi);
            for _ in 0..4 {
                let gd = gdot(tc);
                if gd.abs() < 1e-12 {
                    break;
                }
                let step = g(tc) / gd;
                tc -= step;
                if step.abs() < spec.time_tol {
                    break;
                }
            }
            crossings += 1;
            let residual = (reduced(&traj.sample(tc)) - &z0).norm();
            if residual <= spec.return_tol * scale {
                return Ok(PeriodEstimate {
                    period: tc - t0,
                    return_residual: residual,
                    periodic: true,
                    crossings_examined: crossings,
                    fixed_point: false,
                    section: spec.clone(),
                });
            }
        }
        t_prev = t;
        g_prev = g_now;
        t += spec.scan_dt;
    }
    Err(CoreError::PeriodNotDetected { horizon: t1 - t0 })
}

/// Group-phase advances over one reduced period and the resulting torus
/// dimension estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionFrequencies {
    pub reduced_period: f64,
    pub reduced_frequency: f64,
    /// Advance of the azimuthal phase coordinate per period, when the system
    /// has one outside its reduced state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_advance: Option<f64>,
    /// Rotation angle of the relative attitude element per period.
    pub attitude_advance: f64,
    /// `1 +` number of phase advances incommensurate with a full turn.
    pub torus_dimension: usize,
    /// Labels phases classified as resonant by the rational-approximation
    /// heuristic (denominators up to 64, tolerance 1e-6). Heuristic only:
    /// resonance can lower the true torus dimension.
    pub resonant_phases: Vec<String>,
}

impl ReconstructionFrequencies {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Continued-fraction test: is `x` within `tol` of a rational `p/q` with
/// `q <= max_den`?
fn is_rational(x: f64, max_den: u64, tol: f64) -> bool {
    let a = x.abs().fract();
    if a < tol || (1.0 - a) < tol {
        return true;
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1i64, 1i64, 0i64);
    let mut value = a;
    for _ in 0..32 {
        let ai = value.floor() as i64;
        let p2 = ai * p1 + p0;
        let q2 = ai * q1 + q0;
        if q2 as u64 > max_den {
            break;
        }
        if (a - p2 as f64 / q2 as f64).abs() < tol {
            return true;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let frac = value - ai as f64;
        if frac.abs() < 1e-15 {
            break;
        }
        value = 1.0 / frac;
    }
    false
}

/// Integrate the attitude over one verified reduced period and extract the
/// group-phase advances: the azimuthal coordinate shift (when `phase_coord`
/// names one) and the rotation angle of the relative attitude element.
pub fn reconstruction_frequencies(
    sys: &NonholonomicSystem,
    traj: &Trajectory,
    period: &PeriodEstimate,
    phase_coord: Option<usize>,
) -> Result<ReconstructionFrequencies> {
    if period.fixed_point {
        return Ok(ReconstructionFrequencies {
            reduced_period: 0.0,
            reduced_frequency: 0.0,
            phase_advance: phase_coord.map(|_| 0.0),
            attitude_advance: 0.0,
            torus_dimension: 1,
            resonant_phases: vec![],
        });
    }
    if !period.periodic {
        return Err(CoreError::InvalidInput(
            "reconstruction requires a verified periodic reduced orbit".into(),
        ));
    }
    let t0 = traj.start_time();
    let t_end = t0 + period.period;
    if t_end > traj.end_time() + 1e-9 {
        return Err(CoreError::InvalidInput(
            "trajectory does not cover one reduced period".into(),
        ));
    }

    let spin = sys.chart().spin_coords.clone();
    if spin.len() != 3 {
        return Err(CoreError::InvalidInput(
            "attitude reconstruction needs a 3-component spin block".into(),
        ));
    }
    let mut max_omega = 0.0_f64;
    for i in 0..traj.len() {
        let st = traj.state(i);
        let w = Vector3::new(st.qdot[spin[0]], st.qdot[spin[1]], st.qdot[spin[2]]);
        max_omega = max_omega.max(w.norm());
    }
    let step = (0.3 / max_omega.max(1e-6))
        .min(period.period / 200.0)
        .min(5e-3);
    let omega_fn = crate::integrate::spin_rate_of(traj, &spin);
    let attitude = reconstruct_attitude(&omega_fn, (t0, t_end), step, UnitQuaternion::identity())?;

    // Relative attitude element over one period, conjugated back by the
    // azimuthal shift when the symmetry group contains one.
    let phase_advance = phase_coord.map(|idx| {
        let a = traj.sample(t0).q[idx];
        let b = traj.sample(t_end).q[idx];
        b - a
    });
    let r_end = attitude.last_rotation();
    let relative = match phase_advance {
        Some(dtheta) => {
            let back = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), -dtheta);
            back * r_end
        }
        None => r_end,
    };
    let attitude_advance = relative.angle();

    let tau = std::f64::consts::TAU;
    let mut torus_dimension = 1usize;
    let mut resonant = Vec::new();
    let mut classify = |label: &str, advance: f64| {
        if is_rational(advance / tau, 64, 1e-6) {
            resonant.push(label.to_string());
        } else {
            torus_dimension += 1;
        }
    };
    if let Some(dtheta) = phase_advance {
        classify("azimuthal_phase", dtheta);
    }
    classify("attitude_phase", attitude_advance);

    Ok(ReconstructionFrequencies {
        reduced_period: period.period,
        reduced_frequency: tau / period.period,
        phase_advance,
        attitude_advance,
        torus_dimension,
        resonant_phases: resonant,
    })
}

/// Rank of the Jacobian of `integrals` with respect to the parameterization
/// `chart: z ↦ state`, evaluated at `z0` by central differences with the
/// given step. Retries once with a widened step if the finite differences
/// disagree between step sizes, then errors.
pub fn integral_rank(
    integrals: &[ScalarField],
    chart: &dyn Fn(&DVector<f64>) -> VelocityState,
    z0: &DVector<f64>,
    fd_step: f64,
) -> Result<usize> {
    let jac = |h: f64| -> nalgebra::DMatrix<f64> {
        let m = integrals.len();
        let d = z0.len();
        let mut out = nalgebra::DMatrix::zeros(m, d);
        for j in 0..d {
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            zp[j] += h;
            zm[j] -= h;
            let sp = chart(&zp);
            let sm = chart(&zm);
            for (i, field) in integrals.iter().enumerate() {
                out[(i, j)] = (field.eval(&sp) - field.eval(&sm)) / (2.0 * h);
            }
        }
        out
    };
    let rank_of = |m: &nalgebra::DMatrix<f64>| -> usize {
        let svd = m.clone().svd(false, false);
        let smax = svd.singular_values.max();
        if smax <= 0.0 {
            return 0;
        }
        svd.singular_values
            .iter()
            .filter(|&&s| s > 1e-8 * smax)
            .count()
    };
    let j1 = jac(fd_step);
    let j2 = jac(2.0 * fd_step);
    let scale = j1.amax().max(1e-12);
    let deviation = (&j1 - &j2).amax() / scale;
    if deviation < 0.05 {
        return Ok(rank_of(&j1));
    }
    let j3 = jac(10.0 * fd_step);
    let j4 = jac(20.0 * fd_step);
    let scale = j3.amax().max(1e-12);
    let deviation2 = (&j3 - &j4).amax() / scale;
    if deviation2 < 0.05 {
        return Ok(rank_of(&j3));
    }
    Err(CoreError::UnstableFiniteDifferences {
        deviation: deviation.min(deviation2),
    })
}
