//! Shared fixtures for the benchmarks.

use pfsc_core::report::{prepare, Prepared};
use pfsc_core::uncertainty::{
    it_class_to_polar, project_polar_noise, AdmittanceUncertainty, CartesianNoiseSpec, ItClass,
    NoiseConfig, PolarNoiseSpec, ProjectionForm,
};
use pfsc_core::{MCConfig, SymmetryMode};

/// The bundled feeder at its operating point with IT 0.5 noise and 1% admittance std.
pub struct Case {
    pub pre: Prepared,
    pub yu: AdmittanceUncertainty,
    pub polar: PolarNoiseSpec,
    pub en: CartesianNoiseSpec,
}

impl Case {
    pub fn feeder() -> Self {
        let pre = prepare("ieee4-balanced".as_ref()).expect("bundled network solves");
        let noise = NoiseConfig::default();
        let level = it_class_to_polar(&ItClass::Label("0.5".into()), &noise).expect("bundled class");
        let polar = PolarNoiseSpec::uniform(level, noise.magnitude_scale, pre.y.dim()).expect("valid noise");
        let en = project_polar_noise(&pre.state.voltages, &polar, ProjectionForm::default()).expect("projects");
        let yu = AdmittanceUncertainty::from_percent(&pre.y, 1.0).expect("valid level");
        Self { pre, yu, polar, en }
    }

    pub fn mc_config(&self, n_mc: usize) -> MCConfig {
        MCConfig {
            n_mc,
            seed: 42,
            polar: self.polar.clone(),
            yu: self.yu.clone(),
            symmetry_mode: SymmetryMode::IndependentElements,
            keep_trials: false,
        }
    }
}
