//! Execution of the `run`, `check`, and `sweep` commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use nonholo::analysis::{
    detect_period, drift_report, energy_rate_check, reconstruction_frequencies, SectionSpec,
};
use nonholo::dynamics::ScalarField;
use nonholo::frames::{check_lifted_symmetry, check_moving_frame, SampleSpec};
use nonholo::integrate::integrate;
use nonholo::systems::SystemPreset;
use nonholo::VelocityState;

use crate::scenario::Scenario;

/// Numerical-failure marker used to select exit code 3 over 2.
#[derive(Debug)]
pub struct NumericalFailure(pub anyhow::Error);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn numerical<E: Into<anyhow::Error>>(e: E) -> anyhow::Error {
    anyhow::Error::new(NumericalFailure(e.into()))
}

#[derive(Debug, Serialize)]
struct SettingsEcho {
    method: String,
    rtol: Option<f64>,
    atol: Option<f64>,
    step: Option<f64>,
    t_end: f64,
    projection: String,
    seed: u64,
}

fn settings_echo(
    scenario: &Scenario,
    opts: &nonholo::IntegratorOptions,
    seed: u64,
) -> SettingsEcho {
    let (method, rtol, atol, step) = match opts.method {
        nonholo::Method::Dp54 { rtol, atol } => ("dp54".into(), Some(rtol), Some(atol), None),
        nonholo::Method::Rk4 { step } => ("rk4".into(), None, None, Some(step)),
    };
    SettingsEcho {
        method,
        rtol,
        atol,
        step,
        t_end: scenario.integrator.t_end,
        projection: format!("{:?}", opts.projection),
        seed,
    }
}

pub struct RunOverrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub quiet: bool,
}

/// Execute the scenario analyses and write the artifacts. Returns the paths
/// written.
pub fn run_scenario(
    scenario_path: &Path,
    out_dir: &Path,
    overrides: &RunOverrides,
) -> Result<Vec<PathBuf>> {
    let scenario = Scenario::load(scenario_path)?;
    let seed = overrides.seed.unwrap_or(scenario.seed);
    let preset = scenario.preset(None)?;
    let sys = preset.build().map_err(numerical)?;
    let init = scenario.initial_state(&preset, None).map_err(|e| {
        match e.downcast_ref::<nonholo::CoreError>() {
            Some(_) => numerical(e),
            None => e,
        }
    })?;
    let opts = scenario.integrator_options(overrides.tol)?;

    let traj =
        integrate(&sys, &init, (0.0, scenario.integrator.t_end), &opts).map_err(numerical)?;

    let mut analyses = serde_json::Map::new();
    let mut drift_fields: Option<Vec<ScalarField>> = None;
    for spec in &scenario.analysis {
        match spec.kind.as_str() {
            "drift" => {
                let fields: Vec<ScalarField> = match &spec.integrals {
                    Some(names) => names
                        .iter()
                        .map(|n| {
                            sys.integral(n)
                                .cloned()
                                .ok_or_else(|| anyhow!("unknown integral {n:?}"))
                        })
                        .collect::<Result<_>>()?,
                    None => sys.integrals().to_vec(),
                };
                let report = drift_report(&traj, &fields);
                analyses.insert("drift".into(), serde_json::to_value(&report)?);
                drift_fields = Some(fields);
            }
            "period" => {
                let mut section = SectionSpec::default();
                if let Some(tol) = spec.return_tol {
                    section.return_tol = tol;
                }
                let reduced = |st: &VelocityState| sys.reduced_state(st);
                let est = detect_period(&traj, &reduced, &section).map_err(numerical)?;
                analyses.insert("period".into(), serde_json::to_value(&est)?);
            }
            "energy-rate" => {
                let samples = spec.samples.unwrap_or(400);
                let report = energy_rate_check(&sys, &traj, None, samples).map_err(numerical)?;
                analyses.insert("energy_rate".into(), serde_json::to_value(&report)?);
            }
            "frequencies" => {
                let reduced = |st: &VelocityState| sys.reduced_state(st);
                let est =
                    detect_period(&traj, &reduced, &SectionSpec::default()).map_err(numerical)?;
                let phase = match &preset {
                    SystemPreset::Turntable(_) => None,
                    SystemPreset::RotatingSurface(_) => Some(1),
                };
                let freq =
                    reconstruction_frequencies(&sys, &traj, &est, phase).map_err(numerical)?;
                analyses.insert("frequencies".into(), serde_json::to_value(&freq)?);
            }
            other => bail!("unknown analysis kind {other:?}"),
        }
    }

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    let mut written = Vec::new();

    if let Some(name) = &scenario.output.trajectory {
        let path = out_dir.join(name);
        let file = BufWriter::new(File::create(&path)?);
        traj.write_csv(file)?;
        written.push(path);
    }
    if let Some(name) = &scenario.output.binary {
        let path = out_dir.join(name);
        let file = BufWriter::new(File::create(&path)?);
        traj.write_binary(file)?;
        written.push(path);
    }
    if let Some(fields) = &drift_fields {
        // Plot-ready drift curves next to the summary statistics.
        let path = out_dir.join("drift.csv");
        let file = BufWriter::new(File::create(&path)?);
        nonholo::analysis::write_drift_curves(file, &traj, fields)?;
        written.push(path);
    }

    // Angles are kept unwrapped during integration; wrap them only here.
    let final_state = traj.last_state();
    let mut final_q: Vec<f64> = final_state.q.iter().copied().collect();
    for &idx in &sys.chart().angle_coords {
        final_q[idx] = wrap_angle(final_q[idx]);
    }
    let report = json!({
        "scenario": scenario_path.display().to_string(),
        "settings": settings_echo(&scenario, &opts, seed),
        "system": scenario.system,
        "initial": {
            "q": init.q.iter().copied().collect::<Vec<f64>>(),
            "qdot": init.qdot.iter().copied().collect::<Vec<f64>>(),
        },
        "final": {
            "t": final_state.t,
            "q_wrapped": final_q,
            "qdot": final_state.qdot.iter().copied().collect::<Vec<f64>>(),
        },
        "steps": traj.len(),
        "analyses": serde_json::Value::Object(analyses),
    });
    let report_path = out_dir.join(&scenario.output.report);
    let mut file = BufWriter::new(File::create(&report_path)?);
    serde_json::to_writer_pretty(&mut file, &report)?;
    file.write_all(b"\n")?;
    written.push(report_path);

    if !overrides.quiet {
        for p in &written {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(written)
}

/// Run the moving-frame or lifted-symmetry hypothesis checks. Returns true
/// iff every hypothesis held, plus the report path.
pub fn check_hypotheses(
    scenario_path: &Path,
    out_dir: &Path,
    overrides: &RunOverrides,
) -> Result<(bool, PathBuf)> {
    let scenario = Scenario::load(scenario_path)?;
    let seed = overrides.seed.unwrap_or(scenario.seed);
    let preset = scenario.preset(None)?;
    let sys = preset.build().map_err(numerical)?;
    let frame = scenario
        .frame
        .clone()
        .ok_or_else(|| anyhow!("check needs a [frame] block"))?;

    let mut spec = SampleSpec {
        seed,
        ..SampleSpec::default()
    };
    if let Some(n) = frame.n_points {
        spec.n_points = n;
    }
    if let Some(fr) = frame.fiber_restricted {
        spec.fiber_restricted = fr;
    }
    if matches!(preset, SystemPreset::RotatingSurface(_)) {
        // Keep sampled configurations on the profile chart.
        spec.box_lo = 0.3;
        spec.box_hi = 2.0;
    }

    let report = match frame.eta {
        Some(eta) => {
            let actions = preset.action_samples(&[0.37, 1.1, 2.5, -0.8]);
            check_lifted_symmetry(&sys, &actions, &preset.generator(eta), &spec)
        }
        None => {
            let map = match frame.kind.as_str() {
                "rotating" => preset.rotating_map(),
                "identity" => nonholo::TimeDependentMap::identity(sys.dim()),
                "generator-flow" => preset
                    .generator(preset.rotation_rate())
                    .flow
                    .expect("preset generators carry flows"),
                other => bail!("unknown frame kind {other:?}"),
            };
            check_moving_frame(&sys, &map, &spec)
        }
    };

    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("hypotheses.json");
    std::fs::write(&path, report.to_json())?;
    if !overrides.quiet {
        for check in &report.checks {
            eprintln!(
                "{}: {} (worst residual {:.3e})",
                check.name,
                if check.passed { "pass" } else { "FAIL" },
                check.worst_residual
            );
        }
        eprintln!("wrote {}", path.display());
    }
    Ok((report.all_passed, path))
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    index: usize,
    omega: f64,
    position: f64,
    seed: u64,
    status: String,
    period: Option<f64>,
    return_residual: Option<f64>,
    torus_dimension: Option<usize>,
    energy_drift: Option<f64>,
    moving_energy_drift: Option<f64>,
}

/// Run the sweep grid; each row is independent and failures are recorded
/// per-row. Returns the aggregate CSV path and the number of failed rows.
pub fn run_sweep(
    scenario_path: &Path,
    out_dir: &Path,
    overrides: &RunOverrides,
) -> Result<(PathBuf, usize)> {
    let scenario = Scenario::load(scenario_path)?;
    let seed = overrides.seed.unwrap_or(scenario.seed);
    let sweep = scenario
        .sweep
        .clone()
        .ok_or_else(|| anyhow!("sweep needs a [sweep] block"))?;

    let base_position = match scenario.system.preset.as_str() {
        "turntable" => scenario.initial.x,
        _ => scenario.initial.u,
    };
    let omegas = sweep.omega.unwrap_or_else(|| vec![scenario.system.omega]);
    let positions = sweep
        .position
        .or(base_position.map(|p| vec![p]))
        .unwrap_or_default();
    if omegas.is_empty() || positions.is_empty() {
        bail!("sweep grid is empty");
    }
    let grid: Vec<(f64, f64)> = omegas
        .iter()
        .flat_map(|&omega| positions.iter().map(move |&pos| (omega, pos)))
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; grid.len()]);
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(grid.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= grid.len() {
                    break;
                }
                let (omega, position) = grid[idx];
                let row_seed = seed.wrapping_add(idx as u64);
                let row = run_sweep_row(&scenario, idx, omega, position, row_seed, overrides.tol);
                results.lock().unwrap()[idx] = Some(row);
            });
        }
    });

    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("sweep.csv");
    let mut file = BufWriter::new(File::create(&path)?);
    writeln!(
        file,
        "index,omega,position,seed,status,period,return_residual,torus_dimension,energy_drift,moving_energy_drift"
    )?;
    let rows = results.into_inner().unwrap();
    let mut failed = 0usize;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
    for row in rows.into_iter().flatten() {
        if row.status != "ok" {
            failed += 1;
        }
        writeln!(
            file,
            "{},{:.16e},{:.16e},{},{},{},{},{},{},{}",
            row.index,
            row.omega,
            row.position,
            row.seed,
            row.status,
            fmt(row.period),
            fmt(row.return_residual),
            row.torus_dimension.map_or(String::new(), |d| d.to_string()),
            fmt(row.energy_drift),
            fmt(row.moving_energy_drift),
        )?;
    }
    drop(file);
    if !overrides.quiet {
        eprintln!("wrote {} ({} rows failed)", path.display(), failed);
    }
    Ok((path, failed))
}

fn run_sweep_row(
    scenario: &Scenario,
    index: usize,
    omega: f64,
    position: f64,
    seed: u64,
    tol: Option<f64>,
) -> SweepRow {
    let mut row = SweepRow {
        index,
        omega,
        position,
        seed,
        status: "ok".into(),
        period: None,
        return_residual: None,
        torus_dimension: None,
        energy_drift: None,
        moving_energy_drift: None,
    };
    struct RowMeasurements {
        period: Option<f64>,
        residual: Option<f64>,
        dim: Option<usize>,
        energy_drift: Option<f64>,
        moving_drift: Option<f64>,
    }
    let attempt = || -> Result<RowMeasurements> {
        let preset = scenario.preset(Some(omega))?;
        let sys = preset.build()?;
        let init = scenario.initial_state(&preset, Some(position))?;
        let opts = scenario.integrator_options(tol)?;
        let traj = integrate(&sys, &init, (0.0, scenario.integrator.t_end), &opts)?;
        let drift = drift_report(&traj, sys.integrals());
        let energy_drift = drift.entry("energy").map(|e| e.relative_drift);
        let moving_drift = drift.entry("moving_energy").map(|e| e.relative_drift);
        let reduced = |st: &VelocityState| sys.reduced_state(st);
        let (period, residual, dim) = match detect_period(&traj, &reduced, &SectionSpec::default())
        {
            Ok(est) => {
                let phase = match &preset {
                    SystemPreset::Turntable(_) => None,
                    SystemPreset::RotatingSurface(_) => Some(1),
                };
                let dim = reconstruction_frequencies(&sys, &traj, &est, phase)
                    .ok()
                    .map(|f| f.torus_dimension);
                (Some(est.period), Some(est.return_residual), dim)
            }
            Err(_) => (None, None, None),
        };
        Ok(RowMeasurements {
            period,
            residual,
            dim,
            energy_drift,
            moving_drift,
        })
    };
    match attempt() {
        Ok(m) => {
            row.period = m.period;
            row.return_residual = m.residual;
            row.torus_dimension = m.dim;
            row.energy_drift = m.energy_drift;
            row.moving_energy_drift = m.moving_drift;
        }
        Err(e) => {
            row.status = format!("failed: {}", first_line(&e.to_string()));
        }
    }
    row
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or("").replace(',', ";")
}

/// Wrap into (−π, π].
fn wrap_angle(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut w = x % tau;
    if w > std::f64::consts::PI {
        w -= tau;
    } else if w <= -std::f64::consts::PI {
        w += tau;
    }
    w
}
