//! Run configuration.
//!
//! TOML with one section per stage. Every physical quantity carries its
//! unit in the key name. A file only needs the keys it changes: it is laid
//! over the defaults of the preset named in `[run] preset`.
//!
//! ```toml
//! [run]
//! preset = "grating-run"
//! seed = 7
//!
//! [source]
//! run_duration_s = 2.0
//!
//! [coincidence]
//! window_half_width_ns = 25.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coincidence::{CoincidenceWindow, HistogramRange};
use crate::event::TimeQuantum;
use crate::fit::{FitOptions, GratingSpec};
use crate::optics::{Grating, Mask, OpticalSystem, OpticsPreset, ParabolicMirror};
use crate::reconstruction::Binning;
use crate::source::{BeamProfile, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Parse(String),
    #[error("unknown preset {0:?} (expected cat-run or grating-run)")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub preset: String,
    /// At most 2⁶³ − 1 so it fits a TOML integer.
    pub seed: u64,
    /// Not hashed.
    pub out_dir: PathBuf,
    /// Worker threads, 0 for all cores. Not hashed.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub run_duration_s: f64,
    pub electron_rate_hz: f64,
    pub pair_yield: f64,
    pub photon_detection_efficiency: f64,
    pub filter_pass_given_pair: f64,
    pub filter_leak_given_no_pair: f64,
    pub dark_count_rate_hz: f64,
    pub beam_center_x_um: f64,
    pub beam_center_y_um: f64,
    pub beam_diameter_um: f64,
    pub correlation_sigma_um: f64,
    pub jitter_sigma_ns: f64,
    pub fixed_offset_ns: f64,
    /// Multiple of 1/16 ps.
    pub timestamp_quantum_ps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    /// `cat-run` (19×) or `grating-run` (16×).
    pub preset: String,
    pub mirror_to_lens_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MaskSection {
    Cat {
        pixel_pitch_um: f64,
    },
    Grating {
        period_um: f64,
        duty: f64,
        angle_rad: f64,
        phase_um: f64,
        size_um: f64,
        pixel_pitch_um: f64,
    },
    Open {
        size_um: f64,
        pixel_pitch_um: f64,
    },
    /// PBM raster with its TOML sidecar.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidenceSection {
    pub window_half_width_ns: f64,
    /// Window centre in `τ = t_e − t_γ`. Estimated from the histogram when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_offset_ns: Option<f64>,
    pub histogram_half_span_ns: f64,
    pub histogram_bin_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructSection {
    pub bin_um: f64,
    pub bins_per_axis: usize,
    pub center_x_um: f64,
    pub center_y_um: f64,
    pub subtract_accidentals: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// Held at the accidental floor measured from the histogram sidebands.
    Accidentals,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Runs in `all` only when set; `fit` always runs.
    pub enabled: bool,
    pub init_sigma_um: f64,
    pub restarts: usize,
    pub supersample: usize,
    pub bootstrap_resamples: usize,
    /// Fit region: beam disc shrunk by this margin.
    pub region_margin_um: f64,
    pub baseline: BaselineMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaytraceSection {
    pub half_extent_um: f64,
    pub points_per_axis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub source: SourceSection,
    pub optics: OpticsSection,
    pub mask: MaskSection,
    pub coincidence: CoincidenceSection,
    pub reconstruct: ReconstructSection,
    pub fit: FitSection,
    pub raytrace: RaytraceSection,
}

pub const PRESETS: [&str; 2] = ["cat-run", "grating-run"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let optics = OpticsPreset::from_name(name).ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
        let sim = match optics {
            OpticsPreset::CatRun => SimConfig::cat_run(),
            OpticsPreset::GratingRun => SimConfig::grating_run(),
        };
        let mask = match optics {
            OpticsPreset::CatRun => MaskSection::Cat { pixel_pitch_um: 2.0 },
            OpticsPreset::GratingRun => MaskSection::Grating {
                period_um: 60.0,
                duty: 0.5,
                angle_rad: 0.0,
                phase_um: 0.0,
                size_um: 640.0,
                pixel_pitch_um: 1.0,
            },
        };
        Ok(Self {
            run: RunSection {
                preset: name.into(),
                seed: sim.seed,
                out_dir: PathBuf::from("out").join(name),
                threads: 0,
            },
            source: SourceSection {
                run_duration_s: sim.run_duration_s,
                electron_rate_hz: sim.electron_rate_hz,
                pair_yield: sim.pair_yield,
                photon_detection_efficiency: sim.photon_detection_efficiency,
                filter_pass_given_pair: sim.filter_pass_given_pair,
                filter_leak_given_no_pair: sim.filter_leak_given_no_pair,
                dark_count_rate_hz: sim.dark_count_rate_hz,
                beam_center_x_um: sim.beam.center_um[0],
                beam_center_y_um: sim.beam.center_um[1],
                beam_diameter_um: sim.beam.diameter_um,
                correlation_sigma_um: sim.correlation_sigma_um,
                jitter_sigma_ns: sim.jitter_sigma_ps / 1e3,
                fixed_offset_ns: sim.fixed_offset_ps / 1e3,
                timestamp_quantum_ps: sim.quantum.as_ps(),
            },
            optics: OpticsSection {
                preset: name.into(),
                mirror_to_lens_mm: crate::optics::system::DEFAULT_MIRROR_TO_LENS_MM,
            },
            mask,
            coincidence: CoincidenceSection {
                window_half_width_ns: CoincidenceWindow::DEFAULT_HALF_WIDTH_PS as f64 / 1e3,
                window_offset_ns: None,
                histogram_half_span_ns: 1000.0,
                histogram_bin_ns: 12.5,
            },
            reconstruct: ReconstructSection {
                bin_um: 0.5,
                bins_per_axis: 80,
                center_x_um: 0.0,
                center_y_um: 0.0,
                subtract_accidentals: true,
            },
            fit: FitSection {
                enabled: optics == OpticsPreset::GratingRun,
                init_sigma_um: 1.2,
                restarts: 3,
                supersample: 2,
                bootstrap_resamples: 50,
                region_margin_um: 1.0,
                baseline: BaselineMode::Accidentals,
            },
            raytrace: RaytraceSection {
                half_extent_um: 15.0,
                points_per_axis: 31,
            },
        })
    }

    /// Parses `text` over the defaults of `preset`, or of the preset named
    /// in the text, or of `cat-run`.
    pub fn from_toml(text: &str, preset: Option<&str>) -> Result<Self, ConfigError> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let named = overlay
            .get("run")
            .and_then(|r| r.get("preset"))
            .and_then(|p| p.as_str())
            .map(str::to_string);
        let name = preset.map(str::to_string).or(named).unwrap_or_else(|| "cat-run".into());
        let name = name.as_str();
        let mut base = toml::Table::try_from(Self::preset(name)?).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut base, overlay);
        if let Some(run) = base.get_mut("run").and_then(|r| r.as_table_mut()) {
            run.insert("preset".into(), name.into());
        }
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<&str>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, preset)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 (hex) of the canonical TOML with `out_dir` and `threads`
    /// blanked, since neither changes any artifact.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out_dir = PathBuf::new();
        c.run.threads = 0;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !PRESETS.contains(&self.run.preset.as_str()) {
            return Err(ConfigError::UnknownPreset(self.run.preset.clone()));
        }
        if self.run.seed > i64::MAX as u64 {
            return invalid("seed must be below 2^63");
        }
        self.sim_config()?;
        self.optical_system()?;
        if let MaskSection::File { path } = &self.mask {
            if !path.is_file() {
                return invalid(format!("mask file {} does not exist", path.display()));
            }
        }
        self.window(None)?;
        self.histogram_range()?;
        let r = &self.reconstruct;
        if !(r.bin_um > 0.0 && r.bin_um.is_finite()) || r.bins_per_axis == 0 {
            return invalid("reconstruction needs a positive bin size and at least one bin");
        }
        let f = &self.fit;
        if !(f.init_sigma_um > 0.0 && f.init_sigma_um.is_finite()) || f.supersample == 0 || f.region_margin_um < 0.0 {
            return invalid("fit needs a positive initial sigma, supersample ≥ 1 and a non-negative margin");
        }
        if self.raytrace.points_per_axis < 2 || !(self.raytrace.half_extent_um > 0.0) {
            return invalid("raytrace grid needs at least 2 points per axis and a positive extent");
        }
        Ok(())
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let s = &self.source;
        let quantum = TimeQuantum::from_ps(s.timestamp_quantum_ps)
            .ok_or_else(|| ConfigError::Invalid("timestamp quantum must be a multiple of 1/16 ps and ≥ 1 ps".into()))?;
        let cfg = SimConfig {
            run_duration_s: s.run_duration_s,
            electron_rate_hz: s.electron_rate_hz,
            pair_yield: s.pair_yield,
            photon_detection_efficiency: s.photon_detection_efficiency,
            filter_pass_given_pair: s.filter_pass_given_pair,
            filter_leak_given_no_pair: s.filter_leak_given_no_pair,
            dark_count_rate_hz: s.dark_count_rate_hz,
            beam: BeamProfile::new([s.beam_center_x_um, s.beam_center_y_um], s.beam_diameter_um),
            correlation_sigma_um: s.correlation_sigma_um,
            jitter_sigma_ps: s.jitter_sigma_ns * 1e3,
            fixed_offset_ps: s.fixed_offset_ns * 1e3,
            quantum,
            seed: self.run.seed,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn optics_preset(&self) -> Result<OpticsPreset, ConfigError> {
        OpticsPreset::from_name(&self.optics.preset).ok_or_else(|| ConfigError::UnknownPreset(self.optics.preset.clone()))
    }

    pub fn optical_system(&self) -> Result<OpticalSystem, ConfigError> {
        let preset = self.optics_preset()?;
        let l1 = self.optics.mirror_to_lens_mm;
        if !(l1 > 0.0 && l1.is_finite()) {
            return invalid("mirror_to_lens_mm must be positive");
        }
        OpticalSystem::solve_for_magnification(ParabolicMirror::new(750.0, 0.58, 300.0), 150.0, l1, 2.0, preset.magnification())
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Mask raster. File masks are read from disk.
    pub fn mask(&self) -> Result<Mask, ConfigError> {
        let m = match &self.mask {
            MaskSection::Cat { pixel_pitch_um } => Mask::cat(*pixel_pitch_um),
            MaskSection::Grating { size_um, pixel_pitch_um, .. } => {
                Mask::grating(&self.grating().expect("grating mask"), *size_um, *pixel_pitch_um)
            }
            MaskSection::Open { size_um, pixel_pitch_um } => {
                let n = (size_um / pixel_pitch_um).ceil() as usize;
                Mask::fully_open(n, n, *pixel_pitch_um)
            }
            MaskSection::File { path } => {
                return crate::io::read_mask(path).map_err(|e| ConfigError::Invalid(format!("mask {}: {e}", path.display())))
            }
        };
        m.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// The analytic grating behind a grating mask.
    pub fn grating(&self) -> Option<GratingSpec> {
        match self.mask {
            MaskSection::Grating { period_um, duty, angle_rad, phase_um, .. } => Some(Grating {
                period_um,
                duty,
                normal_angle: angle_rad,
                phase_um,
            }),
            _ => None,
        }
    }

    /// Coincidence window, centred on `estimated_offset_ps` unless the
    /// config pins the offset.
    pub fn window(&self, estimated_offset_ps: Option<i64>) -> Result<CoincidenceWindow, ConfigError> {
        let c = &self.coincidence;
        let hw = ns_to_ps(c.window_half_width_ns, "window_half_width_ns")?;
        if hw <= 0 {
            return invalid("window_half_width_ns must be positive");
        }
        let offset = match c.window_offset_ns {
            Some(ns) => ns_to_ps(ns, "window_offset_ns")?,
            None => estimated_offset_ps.unwrap_or(0),
        };
        Ok(CoincidenceWindow::new(offset, hw as u64))
    }

    pub fn histogram_range(&self) -> Result<HistogramRange, ConfigError> {
        let c = &self.coincidence;
        let span = ns_to_ps(c.histogram_half_span_ns, "histogram_half_span_ns")?;
        let bin = ns_to_ps(c.histogram_bin_ns, "histogram_bin_ns")?;
        if span <= 0 || bin <= 0 {
            return invalid("histogram span and bin width must be positive");
        }
        let half_quantum = self.sim_config()?.quantum.half_ps();
        HistogramRange::symmetric(span as u64, bin as u64)
            .map(|r| r.shifted(-half_quantum))
            .map_err(|_| ConfigError::Invalid("histogram span must be at least 4 whole bins".into()))
    }

    pub fn binning(&self) -> Binning {
        let r = &self.reconstruct;
        Binning::centered([r.center_x_um, r.center_y_um], r.bin_um, r.bins_per_axis)
    }

    /// Fit options without the region or fixed baseline, which depend on
    /// the data.
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            supersample: self.fit.supersample,
            restarts: self.fit.restarts,
            bootstrap_resamples: self.fit.bootstrap_resamples,
            seed: self.run.seed,
            ..FitOptions::default()
        }
    }
}

/// Nanoseconds to whole picoseconds; rejects sub-picosecond values.
fn ns_to_ps(ns: f64, key: &str) -> Result<i64, ConfigError> {
    let ps = ns * 1e3;
    if !ps.is_finite() || ps.abs() > 9e15 || (ps - ps.round()).abs() > 1e-6 {
        return invalid(format!("{key} must be a whole number of picoseconds"));
    }
    Ok(ps.round() as i64)
}

/// Recursive table overlay: `over` wins except where both sides are tables.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if k != "mask" => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
