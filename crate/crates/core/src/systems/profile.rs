//! Meridian profiles of surfaces of revolution.
//!
//! A profile parameterizes the surface traced by the *center* of the rolling
//! sphere: `u ↦ (ρ(u), ζ(u))` gives distance from the symmetry axis and
//! height. Users modelling a physical cup must offset it by the sphere radius
//! themselves. The domain excludes a neighborhood of the axis (`ρ = 0`),
//! where the azimuthal chart degenerates.

use std::fmt;
use std::sync::Arc;

use crate::error::{CoreError, Result};

/// Default exclusion margin around the axis and domain ends.
pub const AXIS_MARGIN: f64 = 1e-3;

/// Profile values and derivatives at one parameter value.
#[derive(Debug, Clone, Copy)]
pub struct ProfilePoint {
    pub rho: f64,
    pub rho_d: f64,
    pub rho_dd: f64,
    pub zeta: f64,
    pub zeta_d: f64,
    pub zeta_dd: f64,
}

impl ProfilePoint {
    /// First fundamental coefficient of the meridian, `E = ρ'² + ζ'²`.
    pub fn metric_e(&self) -> f64 {
        self.rho_d * self.rho_d + self.zeta_d * self.zeta_d
    }

    /// `E' = 2(ρ'ρ'' + ζ'ζ'')`.
    pub fn metric_e_d(&self) -> f64 {
        2.0 * (self.rho_d * self.rho_dd + self.zeta_d * self.zeta_dd)
    }
}

/// A meridian profile with two derivatives and a validity interval.
#[derive(Clone)]
pub struct SurfaceProfile {
    name: String,
    domain: (f64, f64),
    eval: Arc<dyn Fn(f64) -> ProfilePoint + Send + Sync>,
}

impl fmt::Debug for SurfaceProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SurfaceProfile({}, domain = [{}, {}])",
            self.name, self.domain.0, self.domain.1
        )
    }
}

impl SurfaceProfile {
    pub fn new(
        name: impl Into<String>,
        domain: (f64, f64),
        eval: impl Fn(f64) -> ProfilePoint + Send + Sync + 'static,
    ) -> Result<Self> {
        let profile = Self {
            name: name.into(),
            domain,
            eval: Arc::new(eval),
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Horizontal plane at height zero: `ρ(u) = u`, `ζ ≡ 0`.
    pub fn plane() -> Self {
        Self::new("plane", (AXIS_MARGIN, f64::INFINITY), |u| ProfilePoint {
            rho: u,
            rho_d: 1.0,
            rho_dd: 0.0,
            zeta: 0.0,
            zeta_d: 0.0,
            zeta_dd: 0.0,
        })
        .expect("plane profile is regular")
    }

    /// Upward paraboloid `ζ = κ u²/2`, `ρ(u) = u`.
    pub fn paraboloid(kappa: f64) -> Self {
        Self::new("paraboloid", (AXIS_MARGIN, f64::INFINITY), move |u| {
            ProfilePoint {
                rho: u,
                rho_d: 1.0,
                rho_dd: 0.0,
                zeta: 0.5 * kappa * u * u,
                zeta_d: kappa * u,
                zeta_dd: kappa,
            }
        })
        .expect("paraboloid profile is regular")
    }

    /// Lower hemisphere of radius `radius`, parameterized by the polar angle
    /// from the bottom: `ρ = R sin u`, `ζ = −R cos u`.
    pub fn sphere_bowl(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(CoreError::InvalidInput(
                "sphere bowl radius must be positive".into(),
            ));
        }
        Self::new(
            "sphere_bowl",
            (AXIS_MARGIN, std::f64::consts::FRAC_PI_2 - AXIS_MARGIN),
            move |u| ProfilePoint {
                rho: radius * u.sin(),
                rho_d: radius * u.cos(),
                rho_dd: -radius * u.sin(),
                zeta: -radius * u.cos(),
                zeta_d: radius * u.sin(),
                zeta_dd: radius * u.cos(),
            },
        )
    }

    /// Tabulated profile with natural cubic spline interpolation. `rows` holds
    /// `(u, ρ, ζ)` samples with strictly increasing `u`.
    pub fn from_table(name: impl Into<String>, rows: &[(f64, f64, f64)]) -> Result<Self> {
        if rows.len() < 4 {
            return Err(CoreError::InvalidInput(
                "tabulated profile needs at least 4 samples".into(),
            ));
        }
        let us: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let rhos: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let zetas: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let rho_spline = CubicSpline::natural(&us, &rhos)?;
        let zeta_spline = CubicSpline::natural(&us, &zetas)?;
        let lo = us[0].max(AXIS_MARGIN);
        let hi = *us.last().unwrap();
        Self::new(name, (lo, hi), move |u| {
            let (rho, rho_d, rho_dd) = rho_spline.eval(u);
            let (zeta, zeta_d, zeta_dd) = zeta_spline.eval(u);
            ProfilePoint {
                rho,
                rho_d,
                rho_dd,
                zeta,
                zeta_d,
                zeta_dd,
            }
        })
    }

    /// Parse the plain-text knot format: three whitespace-separated columns
    /// `u rho zeta`, one sample per line, `#` comments allowed.
    pub fn from_table_text(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                return Err(CoreError::InvalidInput(format!(
                    "profile table line {}: expected 3 columns, got {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let mut vals = [0.0; 3];
            for (i, c) in cols.iter().enumerate() {
                vals[i] = c.parse::<f64>().map_err(|_| {
                    CoreError::InvalidInput(format!(
                        "profile table line {}: bad number {c:?}",
                        lineno + 1
                    ))
                })?;
            }
            rows.push((vals[0], vals[1], vals[2]));
        }
        Self::from_table(name, &rows)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.domain.0 && u <= self.domain.1
    }

    /// Evaluate with a domain check.
    pub fn eval(&self, u: f64) -> Result<ProfilePoint> {
        if !self.contains(u) {
            return Err(CoreError::OutsideDomain {
                value: u,
                lo: self.domain.0,
                hi: self.domain.1,
            });
        }
        Ok((self.eval)(u))
    }

    /// Evaluate without the domain check; outside the domain the result is
    /// poisoned with NaN so downstream dynamics evaluations fail loudly
    /// instead of silently extrapolating.
    pub(crate) fn eval_raw(&self, u: f64) -> ProfilePoint {
        if !self.contains(u) {
            return ProfilePoint {
                rho: f64::NAN,
                rho_d: f64::NAN,
                rho_dd: f64::NAN,
                zeta: f64::NAN,
                zeta_d: f64::NAN,
                zeta_dd: f64::NAN,
            };
        }
        (self.eval)(u)
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(lo < hi) || !(lo > 0.0) {
            return Err(CoreError::InvalidInput(format!(
                "profile domain [{lo}, {hi}] must be increasing and bounded away from the axis"
            )));
        }
        let hi_eff = if hi.is_finite() { hi } else { lo + 10.0 };
        for i in 0..=64 {
            let u = lo + (hi_eff - lo) * i as f64 / 64.0;
            let p = (self.eval)(u);
            if !(p.rho > 0.0) {
                return Err(CoreError::InvalidInput(format!(
                    "profile rho({u}) = {} not positive",
                    p.rho
                )));
            }
            if !(p.metric_e() > 0.0) {
                return Err(CoreError::InvalidInput(format!(
                    "profile irregular at u = {u}: rho'^2 + zeta'^2 = 0"
                )));
            }
        }
        Ok(())
    }
}

/// Natural cubic spline with analytic first and second derivatives.
#[derive(Debug, Clone)]
struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    fn natural(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 3 || ys.len() != n {
            return Err(CoreError::InvalidInput("spline needs >= 3 samples".into()));
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(CoreError::InvalidInput(
                    "spline knots must be strictly increasing".into(),
                ));
            }
        }
        // Tridiagonal system for interior second derivatives (Thomas algorithm).
        let mut sub = vec![0.0; n];
        let diag = vec![2.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = xs[i] - xs[i - 1];
            let h1 = xs[i + 1] - xs[i];
            sub[i] = h0 / (h0 + h1);
            sup[i] = h1 / (h0 + h1);
            rhs[i] = 6.0 / (h0 + h1) * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
        }
        // Natural boundary: m[0] = m[n-1] = 0 (diag rows stay trivial).
        let mut c_star = vec![0.0; n];
        let mut d_star = vec![0.0; n];
        c_star[0] = sup[0] / diag[0];
        d_star[0] = rhs[0] / diag[0];
        for i in 1..n {
            let denom = diag[i] - sub[i] * c_star[i - 1];
            c_star[i] = sup[i] / denom;
            d_star[i] = (rhs[i] - sub[i] * d_star[i - 1]) / denom;
        }
        let mut m = vec![0.0; n];
        m[n - 1] = d_star[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = d_star[i] - c_star[i] * m[i + 1];
        }
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    /// `(y, y', y'')` at `x` (clamped to the knot range).
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.xs.len();
        let x = x.clamp(self.xs[0], self.xs[n - 1]);
        let mut i = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i >= n - 1 {
            i = n - 2;
        }
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        let y = a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0;
        let yd = (self.ys[i + 1] - self.ys[i]) / h
            + ((3.0 * b * b - 1.0) * self.m[i + 1] - (3.0 * a * a - 1.0) * self.m[i]) * h / 6.0;
        let ydd = a * self.m[i] + b * self.m[i + 1];
        (y, yd, ydd)
    }
}
