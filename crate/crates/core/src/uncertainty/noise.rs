//! Measurement noise models for voltage phasors.
//!
//! Instrument transformer accuracy classes bound the worst-case ratio
//! (magnitude) and phase-displacement errors. Those limits are read as
//! 3-sigma bounds, so the standard deviations are a third of the limits.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default noise configuration, bundled with the crate.
pub const DEFAULT_NOISE_CONFIG: &str = include_str!("../../data/noise.toml");

/// How the magnitude standard deviation relates to the phasor magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MagnitudeScale {
    /// `sigma_rho` is a fraction of `|E|`.
    #[default]
    Relative,
    /// `sigma_rho` is in per-unit.
    Absolute,
}

/// Scalar polar noise level shared by all nodes (standard deviations).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub sigma_rho: f64,
    pub sigma_theta: f64,
}

impl NoiseLevel {
    pub const ZERO: NoiseLevel = NoiseLevel {
        sigma_rho: 0.0,
        sigma_theta: 0.0,
    };

    /// Standard deviations from worst-case limits read as 3-sigma bounds.
    pub fn from_limits(magnitude: f64, phase_rad: f64) -> Self {
        Self {
            sigma_rho: magnitude / 3.0,
            sigma_theta: phase_rad / 3.0,
        }
    }
}

/// Per-node polar noise standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarNoiseSpec {
    pub sigma_rho: Vec<f64>,
    pub sigma_theta: Vec<f64>,
    pub scale: MagnitudeScale,
}

impl PolarNoiseSpec {
    pub fn uniform(level: NoiseLevel, scale: MagnitudeScale, nodes: usize) -> Result<Self> {
        let spec = Self {
            sigma_rho: vec![level.sigma_rho; nodes],
            sigma_theta: vec![level.sigma_theta; nodes],
            scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn zero(nodes: usize) -> Self {
        Self {
            sigma_rho: vec![0.0; nodes],
            sigma_theta: vec![0.0; nodes],
            scale: MagnitudeScale::Relative,
        }
    }

    pub fn len(&self) -> usize {
        self.sigma_rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_rho.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_rho.len() != self.sigma_theta.len() {
            return Err(Error::Dimension(
                "magnitude and phase noise vectors differ in length".into(),
            ));
        }
        if self
            .sigma_rho
            .iter()
            .chain(&self.sigma_theta)
            .any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return Err(Error::Noise("standard deviations must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Magnitude standard deviation of node `k` in per-unit.
    pub fn magnitude_std(&self, k: usize, magnitude: f64) -> f64 {
        match self.scale {
            MagnitudeScale::Relative => self.sigma_rho[k] * magnitude,
            MagnitudeScale::Absolute => self.sigma_rho[k],
        }
    }
}

/// Variances of the real and imaginary parts of each voltage phasor.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianNoiseSpec {
    pub var_re: DVector<f64>,
    pub var_im: DVector<f64>,
}

impl CartesianNoiseSpec {
    pub fn zero(nodes: usize) -> Self {
        Self {
            var_re: DVector::zeros(nodes),
            var_im: DVector::zeros(nodes),
        }
    }

    pub fn sigma_re(&self) -> DVector<f64> {
        self.var_re.map(f64::sqrt)
    }

    pub fn sigma_im(&self) -> DVector<f64> {
        self.var_im.map(f64::sqrt)
    }

    pub fn len(&self) -> usize {
        self.var_re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.var_re.is_empty()
    }
}

/// Which closed form to use for the imaginary-part variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionForm {
    /// `1 - e^{-2 s^2} cos 2theta` in the imaginary part. Agrees with sampling.
    #[default]
    SignCorrected,
    /// `1 + e^{-2 s^2} cos 2theta` in both parts, as sometimes printed.
    /// Kept for comparison only: it is off by orders of magnitude.
    Literal,
}

/// Project polar noise onto the real and imaginary parts of each phasor.
///
/// For `E = rho e^{j theta}` measured as `(rho + d_rho) e^{j (theta + d_theta)}`
/// with independent Gaussian `d_rho`, `d_theta`, the second moments about the
/// true value are
///
/// ```text
/// var_re = 1/2 m2 (1 + e^{-2 s^2} cos 2theta) + rho^2 cos^2 theta (1 - 2 e^{-s^2 / 2})
/// var_im = 1/2 m2 (1 - e^{-2 s^2} cos 2theta) + rho^2 sin^2 theta (1 - 2 e^{-s^2 / 2})
/// ```
///
/// where `m2 = rho^2 + var(d_rho)` and `s` is the phase standard deviation.
/// The sign-corrected form is evaluated in an `expm1`-based arrangement so
/// that small noise levels do not cancel catastrophically.
pub fn project_polar_noise(
    voltages: &DVector<Complex64>,
    polar: &PolarNoiseSpec,
    form: ProjectionForm,
) -> Result<CartesianNoiseSpec> {
    polar.validate()?;
    if polar.len() != voltages.len() {
        return Err(Error::Dimension(format!(
            "{} noise entries for {} voltages",
            polar.len(),
            voltages.len()
        )));
    }
    let n = voltages.len();
    let mut var_re = DVector::zeros(n);
    let mut var_im = DVector::zeros(n);
    for (k, e) in voltages.iter().enumerate() {
        let (rho, theta) = e.to_polar();
        let var_rho = polar.magnitude_std(k, rho).powi(2);
        let s2 = polar.sigma_theta[k].powi(2);
        let m2 = rho * rho + var_rho;
        let (sin, cos) = theta.sin_cos();
        match form {
            ProjectionForm::SignCorrected => {
                let a = -(-2.0 * s2).exp_m1();
                let b = -(-0.5 * s2).exp_m1();
                let e2 = (-2.0 * s2).exp();
                let shared = 0.5 * m2 * a;
                let bracket = var_rho * e2 - rho * rho * a + 2.0 * rho * rho * b;
                var_re[k] = (shared + cos * cos * bracket).max(0.0);
                var_im[k] = (shared + sin * sin * bracket).max(0.0);
            }
            ProjectionForm::Literal => {
                let e2 = (-2.0 * s2).exp();
                let eh = (-0.5 * s2).exp();
                let c2t = (2.0 * theta).cos();
                var_re[k] = 0.5 * m2 * (1.0 + e2 * c2t) + rho * rho * cos * cos * (1.0 - 2.0 * eh);
                var_im[k] = 0.5 * m2 * (1.0 + e2 * c2t) + rho * rho * sin * sin * (1.0 - 2.0 * eh);
            }
        }
    }
    Ok(CartesianNoiseSpec { var_re, var_im })
}

/// An accuracy class, by label or by explicit limits.
#[derive(Debug, Clone, PartialEq)]
pub enum ItClass {
    Label(String),
    /// Worst-case magnitude error (fraction) and phase error (rad).
    Custom { magnitude: f64, phase_rad: f64 },
}

impl FromStr for ItClass {
    type Err = Error;

    /// `"0.5"`, `"1.0"`, ... or `"custom:MAG,PHASE"` with MAG a fraction.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("custom:") {
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            let parse = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Noise(format!("invalid custom limit {v:?}")))
            };
            if parts.len() != 2 {
                return Err(Error::Noise(format!("expected custom:MAG,PHASE, got {s:?}")));
            }
            return Ok(ItClass::Custom {
                magnitude: parse(parts[0])?,
                phase_rad: parse(parts[1])?,
            });
        }
        Ok(ItClass::Label(s.trim().to_string()))
    }
}

impl fmt::Display for ItClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ItClass::Label(l) => write!(f, "IT {l}"),
            ItClass::Custom {
                magnitude,
                phase_rad,
            } => write!(f, "custom({magnitude}, {phase_rad})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItClassLimits {
    pub label: String,
    /// Ratio error limit in percent.
    pub magnitude_pct: f64,
    /// Phase displacement limit in radians.
    pub phase_rad: f64,
}

/// Noise configuration file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Admittance uncertainty level in percent of each element part.
    #[serde(default = "default_sigma_y")]
    pub sigma_y_pct: f64,
    #[serde(default)]
    pub magnitude_scale: MagnitudeScale,
    #[serde(rename = "it_class", default)]
    pub classes: Vec<ItClassLimits>,
}

fn default_sigma_y() -> f64 {
    1.0
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::parse(DEFAULT_NOISE_CONFIG, "bundled noise config").expect("bundled config parses")
    }
}

impl NoiseConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: NoiseConfig = toml::from_str(text).map_err(|e| Error::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        for c in &cfg.classes {
            if !(c.magnitude_pct >= 0.0) || !(c.phase_rad >= 0.0) {
                return Err(Error::Noise(format!("class {}: limits must be nonnegative", c.label)));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Limits by label; numeric labels compare by value so `"1"` finds `"1.0"`.
    pub fn find(&self, label: &str) -> Option<&ItClassLimits> {
        let numeric = label.parse::<f64>().ok();
        self.classes.iter().find(|c| {
            c.label == label
                || matches!((numeric, c.label.parse::<f64>()), (Some(a), Ok(b)) if a == b)
        })
    }

    pub fn labels(&self) -> BTreeMap<String, (f64, f64)> {
        self.classes
            .iter()
            .map(|c| (c.label.clone(), (c.magnitude_pct, c.phase_rad)))
            .collect()
    }
}

/// Noise standard deviations of an accuracy class: a third of its limits.
pub fn it_class_to_polar(class: &ItClass, config: &NoiseConfig) -> Result<NoiseLevel> {
    match class {
        ItClass::Custom {
            magnitude,
            phase_rad,
        } => {
            if !(*magnitude >= 0.0) || !(*phase_rad >= 0.0) {
                return Err(Error::Noise("custom limits must be nonnegative".into()));
            }
            Ok(NoiseLevel::from_limits(*magnitude, *phase_rad))
        }
        ItClass::Label(label) => {
            let limits = config.find(label).ok_or_else(|| {
                Error::Noise(format!(
                    "unknown accuracy class {label:?}; known: {:?}",
                    config.labels().keys().collect::<Vec<_>>()
                ))
            })?;
            Ok(NoiseLevel::from_limits(limits.magnitude_pct / 100.0, limits.phase_rad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(rho: f64, theta: f64) -> DVector<Complex64> {
        DVector::from_element(1, Complex64::from_polar(rho, theta))
    }

    #[test]
    fn zero_noise_projects_to_exact_zero() {
        let polar = PolarNoiseSpec::zero(1);
        for theta in [0.0, 0.3, 1.2, -2.0] {
            let c = project_polar_noise(&single(1.02, theta), &polar, ProjectionForm::default()).unwrap();
            assert_eq!(c.var_re[0], 0.0);
            assert_eq!(c.var_im[0], 0.0);
        }
    }

    #[test]
    fn axis_aligned_magnitude_noise_maps_to_real_part() {
        let level = NoiseLevel {
            sigma_rho: 1e-3,
            sigma_theta: 0.0,
        };
        let polar = PolarNoiseSpec::uniform(level, MagnitudeScale::Relative, 1).unwrap();
        let c = project_polar_noise(&single(1.0, 0.0), &polar, ProjectionForm::SignCorrected).unwrap();
        assert_relative_eq!(c.sigma_re()[0], 1e-3, max_relative = 1e-9);
        assert!(c.sigma_im()[0] < 1e-15);
    }

    #[test]
    fn small_noise_matches_linearization() {
        // var_re ~ (s_rho rho cos)^2 + (s_theta rho sin)^2 to first order
        let level = NoiseLevel::from_limits(0.005, 0.006);
        let polar = PolarNoiseSpec::uniform(level, MagnitudeScale::Relative, 1).unwrap();
        let (rho, theta) = (0.98, 0.7);
        let c = project_polar_noise(&single(rho, theta), &polar, ProjectionForm::SignCorrected).unwrap();
        let lin_re = (level.sigma_rho * rho * theta.cos()).powi(2) + (level.sigma_theta * rho * theta.sin()).powi(2);
        let lin_im = (level.sigma_rho * rho * theta.sin()).powi(2) + (level.sigma_theta * rho * theta.cos()).powi(2);
        assert_relative_eq!(c.var_re[0], lin_re, max_relative = 1e-4);
        assert_relative_eq!(c.var_im[0], lin_im, max_relative = 1e-4);
    }

    #[test]
    fn literal_form_is_far_off_for_imaginary_part() {
        let polar = PolarNoiseSpec::uniform(NoiseLevel::from_limits(0.005, 0.006), MagnitudeScale::Relative, 1).unwrap();
        let c = project_polar_noise(&single(1.0, 0.0), &polar, ProjectionForm::Literal).unwrap();
        // O(rho^2) instead of O(sigma^2)
        assert!(c.var_im[0] > 0.5);
    }

    #[test]
    fn class_lookup() {
        let cfg = NoiseConfig::default();
        let l = it_class_to_polar(&"0.5".parse().unwrap(), &cfg).unwrap();
        assert_relative_eq!(l.sigma_rho, 0.005 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(l.sigma_theta, 0.006 / 3.0, max_relative = 1e-15);
        let l = it_class_to_polar(&"1".parse().unwrap(), &cfg).unwrap();
        assert_relative_eq!(l.sigma_rho, 0.01 / 3.0, max_relative = 1e-15);

        let c: ItClass = "custom:0.01,0.01".parse().unwrap();
        let l = it_class_to_polar(&c, &cfg).unwrap();
        assert_eq!(l.sigma_rho, 0.01 / 3.0);
        assert_eq!(l.sigma_theta, 0.01 / 3.0);

        assert!(matches!(
            it_class_to_polar(&"7".parse().unwrap(), &cfg),
            Err(Error::Noise(_))
        ));
    }

    #[test]
    fn negative_noise_is_rejected() {
        let spec = PolarNoiseSpec {
            sigma_rho: vec![-1.0],
            sigma_theta: vec![0.0],
            scale: MagnitudeScale::Relative,
        };
        assert!(project_polar_noise(&single(1.0, 0.0), &spec, ProjectionForm::default()).is_err());
    }
}
