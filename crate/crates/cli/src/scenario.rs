//! Declarative scenario files (TOML), strictly validated: unknown keys are
//! rejected with the offending key named. The same structure is documented
//! as JSON Schema in `schemas/scenario.schema.json`, versioned through
//! `schema_version`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use nonholo::systems::{SurfaceParams, SurfaceProfile, SystemPreset, TurntableParams};
use nonholo::VelocityState;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub system: SystemSpec,
    pub initial: InitialSpec,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub analysis: Vec<AnalysisSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub frame: Option<FrameSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    /// `turntable` or `rotating-surface`.
    pub preset: String,
    pub a: f64,
    pub c: f64,
    pub omega: f64,
    #[serde(default)]
    pub gravity: Option<f64>,
    #[serde(default)]
    pub profile: Option<ProfileSpec>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    /// `plane`, `paraboloid`, `sphere-bowl`, or `table`.
    pub kind: String,
    #[serde(default)]
    pub curvature: Option<f64>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    // Turntable coordinates.
    #[serde(default)]
    pub x: Option<f64>,
    #[serde(default)]
    pub y: Option<f64>,
    #[serde(default)]
    pub spin: Option<[f64; 3]>,
    // Surface coordinates.
    #[serde(default)]
    pub u: Option<f64>,
    #[serde(default)]
    pub phi: Option<f64>,
    #[serde(default)]
    pub u_dot: Option<f64>,
    #[serde(default)]
    pub phi_dot: Option<f64>,
    #[serde(default)]
    pub omega_z: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    /// `dp54` or `rk4`.
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default)]
    pub step: Option<f64>,
    pub t_end: f64,
    /// `none`, `every-step`, or a positive integer period.
    #[serde(default = "default_projection")]
    pub projection: toml::Value,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_method() -> String {
    "dp54".into()
}
fn default_rtol() -> f64 {
    1e-10
}
fn default_atol() -> f64 {
    1e-12
}
fn default_projection() -> toml::Value {
    toml::Value::String("every-step".into())
}
fn default_max_steps() -> usize {
    50_000_000
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    /// `drift`, `period`, `energy-rate`, or `frequencies`.
    pub kind: String,
    #[serde(default)]
    pub integrals: Option<Vec<String>>,
    #[serde(default)]
    pub return_tol: Option<f64>,
    #[serde(default)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_trajectory")]
    pub trajectory: Option<String>,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default)]
    pub binary: Option<String>,
}

fn default_trajectory() -> Option<String> {
    Some("trajectory.csv".into())
}
fn default_report() -> String {
    "report.json".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            trajectory: default_trajectory(),
            report: default_report(),
            binary: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    /// `rotating`, `identity`, or `generator-flow`.
    #[serde(default = "default_frame_kind")]
    pub kind: String,
    /// Generator parameter; when present the lifted-symmetry checks run too.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub n_points: Option<usize>,
    #[serde(default)]
    pub fiber_restricted: Option<bool>,
}

fn default_frame_kind() -> String {
    "rotating".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub omega: Option<Vec<f64>>,
    /// Initial radial coordinate values (surface) or x values (turntable).
    #[serde(default)]
    pub position: Option<Vec<f64>>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read scenario {}", path.display()))?;
        let scenario: Scenario =
            toml::from_str(&text).map_err(|e| anyhow!("scenario validation failed: {e}"))?;
        if scenario.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (this build reads version {})",
                scenario.schema_version,
                SCHEMA_VERSION
            );
        }
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<()> {
        match self.system.preset.as_str() {
            "turntable" | "rotating-surface" => {}
            other => bail!("unknown preset {other:?}; expected 'turntable' or 'rotating-surface'"),
        }
        match self.integrator.method.as_str() {
            "dp54" => {}
            "rk4" => {
                if self.integrator.step.is_none() {
                    bail!("rk4 integrator requires 'step'");
                }
            }
            other => bail!("unknown integrator method {other:?}"),
        }
        for a in &self.analysis {
            match a.kind.as_str() {
                "drift" | "period" | "energy-rate" | "frequencies" => {}
                other => bail!("unknown analysis kind {other:?}"),
            }
        }
        self.projection()?;
        Ok(())
    }

    pub fn projection(&self) -> Result<nonholo::Projection> {
        use nonholo::Projection;
        match &self.integrator.projection {
            toml::Value::String(s) if s == "none" => Ok(Projection::None),
            toml::Value::String(s) if s == "every-step" => Ok(Projection::EveryStep),
            toml::Value::Integer(k) if *k > 0 => Ok(Projection::EveryK(*k as usize)),
            other => bail!("invalid projection {other:?}: expected 'none', 'every-step', or a positive integer"),
        }
    }

    pub fn preset(&self, omega_override: Option<f64>) -> Result<SystemPreset> {
        let omega = omega_override.unwrap_or(self.system.omega);
        match self.system.preset.as_str() {
            "turntable" => Ok(SystemPreset::Turntable(TurntableParams {
                a: self.system.a,
                c: self.system.c,
                omega,
            })),
            "rotating-surface" => {
                let profile_spec =
                    self.system.profile.as_ref().ok_or_else(|| {
                        anyhow!("rotating-surface needs a [system.profile] block")
                    })?;
                let profile = build_profile(profile_spec)?;
                Ok(SystemPreset::RotatingSurface(SurfaceParams {
                    profile,
                    a: self.system.a,
                    c: self.system.c,
                    omega,
                    gravity: self.system.gravity.unwrap_or(1.0),
                }))
            }
            other => bail!("unknown preset {other:?}"),
        }
    }

    /// Initial state for the preset, completed onto the constraint fiber.
    pub fn initial_state(
        &self,
        preset: &SystemPreset,
        position_override: Option<f64>,
    ) -> Result<VelocityState> {
        match preset {
            SystemPreset::Turntable(p) => {
                let x = position_override
                    .or(self.initial.x)
                    .ok_or_else(|| anyhow!("turntable initial state needs 'x'"))?;
                let y = self
                    .initial
                    .y
                    .ok_or_else(|| anyhow!("turntable initial state needs 'y'"))?;
                let spin = self
                    .initial
                    .spin
                    .ok_or_else(|| anyhow!("turntable initial state needs 'spin'"))?;
                Ok(nonholo::systems::turntable_state(p, x, y, spin))
            }
            SystemPreset::RotatingSurface(p) => {
                let u = position_override
                    .or(self.initial.u)
                    .ok_or_else(|| anyhow!("surface initial state needs 'u'"))?;
                let state = nonholo::systems::surface_state(
                    p,
                    u,
                    self.initial.phi.unwrap_or(0.0),
                    self.initial.u_dot.unwrap_or(0.0),
                    self.initial
                        .phi_dot
                        .ok_or_else(|| anyhow!("surface initial state needs 'phi_dot'"))?,
                    self.initial
                        .omega_z
                        .ok_or_else(|| anyhow!("surface initial state needs 'omega_z'"))?,
                )?;
                Ok(state)
            }
        }
    }

    pub fn integrator_options(
        &self,
        tol_override: Option<f64>,
    ) -> Result<nonholo::IntegratorOptions> {
        use nonholo::Method;
        let method = match self.integrator.method.as_str() {
            "rk4" => Method::Rk4 {
                step: self.integrator.step.unwrap(),
            },
            _ => {
                let rtol = tol_override.unwrap_or(self.integrator.rtol);
                let atol = tol_override
                    .map(|t| t * 1e-2)
                    .unwrap_or(self.integrator.atol);
                Method::Dp54 { rtol, atol }
            }
        };
        Ok(nonholo::IntegratorOptions {
            method,
            projection: self.projection()?,
            max_steps: self.integrator.max_steps,
            dense: true,
        })
    }
}

fn build_profile(spec: &ProfileSpec) -> Result<SurfaceProfile> {
    match spec.kind.as_str() {
        "plane" => Ok(SurfaceProfile::plane()),
        "paraboloid" => Ok(SurfaceProfile::paraboloid(spec.curvature.unwrap_or(1.0))),
        "sphere-bowl" => {
            let radius = spec
                .radius
                .ok_or_else(|| anyhow!("sphere-bowl profile needs 'radius'"))?;
            Ok(SurfaceProfile::sphere_bowl(radius)?)
        }
        "table" => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| anyhow!("table profile needs 'path'"))?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read profile table {}", path.display()))?;
            Ok(SurfaceProfile::from_table_text("table", &text)?)
        }
        other => bail!("unknown profile kind {other:?}"),
    }
}
