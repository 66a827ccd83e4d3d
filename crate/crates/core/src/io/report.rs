//! Fit report: a flat TOML document of the best parameters, the resolution
//! figures and the bootstrap spread.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IoError, Provenance};
use crate::fit::{FitParams, FitResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub sigma_um: f64,
    pub fwhm_um: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_uncertainty_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwhm_uncertainty_um: Option<f64>,
    pub amplitude: f64,
    pub baseline: f64,
    pub baseline_fixed: bool,
    pub shift_x_um: f64,
    pub shift_y_um: f64,
    pub rotation_rad: f64,
    pub mirror_displacement_um: f64,
    pub residual_l1: f64,
    pub iterations: u64,
    pub evaluations: u64,
    pub converged: bool,
    pub n_bins: u64,
    /// Pairs in the fitted image.
    pub n_pairs: u64,
    pub bootstrap_sigmas_um: Vec<f64>,
}

impl FitReport {
    pub fn new(
        r: &FitResult,
        baseline_fixed: bool,
        n_pairs: u64,
        prov: Option<&Provenance>,
    ) -> Self {
        Self {
            seed: prov.map(|p| p.seed),
            config_hash: prov.map(|p| p.config_hash.clone()),
            sigma_um: r.params.sigma_um,
            fwhm_um: r.fwhm_um,
            sigma_uncertainty_um: r.sigma_uncertainty_um,
            fwhm_uncertainty_um: r.fwhm_uncertainty_um(),
            amplitude: r.params.amplitude,
            baseline: r.params.baseline,
            baseline_fixed,
            shift_x_um: r.params.shift_um[0],
            shift_y_um: r.params.shift_um[1],
            rotation_rad: r.params.rotation_rad,
            mirror_displacement_um: r.params.dz_um,
            residual_l1: r.residual_l1,
            iterations: r.iterations as u64,
            evaluations: r.evaluations as u64,
            converged: r.converged,
            n_bins: r.n_bins as u64,
            n_pairs,
            bootstrap_sigmas_um: r.bootstrap_sigmas.clone(),
        }
    }

    pub fn params(&self) -> FitParams {
        FitParams {
            sigma_um: self.sigma_um,
            amplitude: self.amplitude,
            baseline: self.baseline,
            shift_um: [self.shift_x_um, self.shift_y_um],
            rotation_rad: self.rotation_rad,
            dz_um: self.mirror_displacement_um,
        }
    }
}

pub fn format_report(r: &FitReport) -> Result<String, IoError> {
    toml::to_string(r).map_err(|e| IoError::malformed("fit report", e.to_string()))
}

pub fn parse_report(text: &str) -> Result<FitReport, IoError> {
    toml::from_str(text).map_err(|e| IoError::malformed("fit report", e.to_string()))
}

pub fn write_report(path: &Path, r: &FitReport) -> Result<(), IoError> {
    Ok(std::fs::write(path, format_report(r)?)?)
}

pub fn read_report(path: &Path) -> Result<FitReport, IoError> {
    parse_report(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn report_round_trips(
            sigma in 1e-3f64..10.0,
            amp in 1e-3f64..1e4,
            base in -10.0f64..100.0,
            shift in proptest::array::uniform2(-5.0f64..5.0),
            boot in proptest::collection::vec(0.1f64..3.0, 0..60),
            seed in proptest::option::of(0u64..=i64::MAX as u64),
            iters in 0u64..100_000,
        ) {
            let r = FitReport {
                seed,
                config_hash: seed.map(|s| format!("{s:x}")),
                sigma_um: sigma,
                fwhm_um: crate::fit::fwhm(sigma),
                sigma_uncertainty_um: boot.first().copied(),
                fwhm_uncertainty_um: None,
                amplitude: amp,
                baseline: base,
                baseline_fixed: iters % 2 == 0,
                shift_x_um: shift[0],
                shift_y_um: shift[1],
                rotation_rad: -0.01,
                mirror_displacement_um: 3.5,
                residual_l1: 1234.5,
                iterations: iters,
                evaluations: 3 * iters,
                converged: true,
                n_bins: 2800,
                n_pairs: 123_456,
                bootstrap_sigmas_um: boot,
            };
            prop_assert_eq!(parse_report(&format_report(&r).unwrap()).unwrap(), r);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_report("sigma_um = 1.0\nbogus = 2\n").is_err());
    }
}
