//! End-to-end stages over an output directory.
//!
//! Each stage reads what earlier stages wrote, so stages can be rerun one
//! at a time. Artifacts carry the run seed and config hash, and every stage
//! refreshes `manifest.toml` with the SHA-256 of every file in the tree.
//!
//! | stage         | writes |
//! |---------------|--------|
//! | `simulate`    | `electrons.epgi`, `photons.epgi`, `truth.epgt`, `mask.pbm`, `simulate.toml` |
//! | `g2`          | `histogram.csv`, `g2.csv`, `g2.toml` |
//! | `match`       | `pairs.epgp`, `match.toml` |
//! | `reconstruct` | `raw.pgm`, `ghost.pgm`, `ghost_subtracted.epgr`, `ghost_view.pgm`, `ghost_binary.pbm`, `truth_mask.pbm`, `reconstruct.toml` |
//! | `fit`         | `fit_report.toml`, `fit_model.epgr`, `fit_residual.epgr` |
//! | `raytrace`    | `raytrace.csv` |
//!
//! Sidecars (`*.toml` next to images) are written alongside.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coincidence::{
    accidental_rate, estimate_offset, g2, match_coincidences_parallel, time_difference_histogram,
    CoincidenceError, CoincidenceWindow, CorrelationFunction, TimeDifferenceHistogram,
};
use crate::config::{BaselineMode, ConfigError, RunConfig};
use crate::event::{ElectronEvent, PhotonEvent, ValidatedStream};
use crate::fit::{
    beam_disc_region, fit_with_context, initial_guess, FitError, FitOptions, ModelContext,
};
use crate::io::text::{self, DistortionSample};
use crate::io::{self, FitReport, IoError, Provenance};
use crate::optics::{jacobian, trace_to_image, OpticsError};
use crate::reconstruction::{
    accumulate_ghost_image, beam_region, binarize, ghost_dice, ground_truth_mask, raw_image,
    subtract_accidentals, GhostImage, RealImage, ReconError, METRIC_SMOOTHING_UM,
};
use crate::source::{simulate_run, BeamProfile, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Simulate,
    G2,
    Match,
    Reconstruct,
    Fit,
    Raytrace,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::G2 => "g2",
            Stage::Match => "match",
            Stage::Reconstruct => "reconstruct",
            Stage::Fit => "fit",
            Stage::Raytrace => "raytrace",
        }
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Coincidence(#[from] CoincidenceError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error("the mask is not a grating, so there is nothing to fit")]
    NotAGrating,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", stage.name())]
    Stage { stage: Stage, source: StageError },
    #[error("fit: no convergence after {iterations} iterations; best parameters written to {}", report.display())]
    NoConvergence { iterations: usize, report: PathBuf },
}

impl PipelineError {
    /// Process exit status: 2 config error, 3 data error, 4 no convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage {
                source: StageError::Config(_),
                ..
            } => 2,
            PipelineError::Stage { .. } => 3,
            PipelineError::NoConvergence { .. } => 4,
        }
    }
}

fn at(stage: Stage) -> impl Fn(StageError) -> PipelineError {
    move |source| PipelineError::Stage { stage, source }
}

/// A configured run bound to its output directory.
pub struct Pipeline {
    cfg: RunConfig,
    out: PathBuf,
    prov: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub seed: u64,
    pub config_hash: String,
    pub electrons: u64,
    pub photons: u64,
    pub true_pairs: u64,
    pub electrons_emitted: u64,
    pub background_electrons: u64,
    pub dark_counts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Summary {
    pub seed: u64,
    pub config_hash: String,
    /// Peak position in `τ = t_e − t_γ`.
    pub offset_ps: f64,
    pub offset_uncertainty_ps: f64,
    pub peak_g2: f64,
    /// Mean and standard error of g² over the outer quarter of bins per side.
    pub background_g2: f64,
    pub background_g2_sigma: f64,
    pub peak_to_background: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub seed: u64,
    pub config_hash: String,
    pub window_offset_ps: i64,
    pub window_half_width_ps: u64,
    pub pairs: u64,
    pub accidental_pairs: f64,
    pub accidental_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructSummary {
    pub seed: u64,
    pub config_hash: String,
    pub pairs: u64,
    pub pairs_in_image: u64,
    pub accidental_pairs: f64,
    /// Overlap of the thresholded ghost image with the traced mask, inside
    /// the beam disc, after smoothing by `smoothing_um`.
    pub dice: f64,
    pub smoothing_um: f64,
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let out = cfg.run.out_dir.clone();
        let prov = Provenance {
            seed: cfg.run.seed,
            config_hash: cfg.hash(),
        };
        Ok(Self { cfg, out, prov })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn provenance(&self) -> &Provenance {
        &self.prov
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Runs `stage` on a thread pool sized by `[run] threads`.
    pub fn run(&self, stage: Stage) -> Result<(), PipelineError> {
        self.with_pool(|| self.run_inner(stage))
    }

    /// `simulate → g2 → match → reconstruct → (fit) → raytrace`. The fit
    /// runs when `[fit] enabled` is set.
    pub fn run_all(&self) -> Result<(), PipelineError> {
        self.with_pool(|| {
            for stage in [Stage::Simulate, Stage::G2, Stage::Match, Stage::Reconstruct] {
                self.run_inner(stage)?;
            }
            if self.cfg.fit.enabled {
                self.run_inner(Stage::Fit)?;
            }
            self.run_inner(Stage::Raytrace)
        })
    }

    fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match rayon::ThreadPoolBuilder::new().num_threads(self.cfg.run.threads).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }

    fn run_inner(&self, stage: Stage) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.out).map_err(|e| at(stage)(IoError::from(e).into()))?;
        io::write_text(&self.path("config.toml"), &self.cfg.to_toml()).map_err(|e| at(stage)(e.into()))?;
        let result = match stage {
            Stage::Simulate => self.simulate().map(|_| ()),
            Stage::G2 => self.g2().map(|_| ()),
            Stage::Match => self.match_pairs().map(|_| ()),
            Stage::Reconstruct => self.reconstruct().map(|_| ()),
            Stage::Fit => match self.fit() {
                Ok(r) if !r.converged => {
                    self.write_manifest().map_err(at(stage))?;
                    return Err(PipelineError::NoConvergence {
                        iterations: r.iterations as usize,
                        report: self.path("fit_report.toml"),
                    });
                }
                other => other.map(|_| ()),
            },
            Stage::Raytrace => self.raytrace().map(|_| ()),
        };
        result.map_err(at(stage))?;
        self.write_manifest().map_err(at(stage))
    }

    /// `manifest.toml`: seed, config hash and the SHA-256 of every other
    /// file, sorted by name.
    fn write_manifest(&self) -> Result<(), StageError> {
        let mut names: Vec<String> = std::fs::read_dir(&self.out)
            .map_err(IoError::from)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n != "manifest.toml")
            .collect();
        names.sort();
        let mut files = toml::Table::new();
        for n in names {
            let bytes = std::fs::read(self.path(&n)).map_err(IoError::from)?;
            files.insert(n, hex_sha256(&bytes).into());
        }
        let mut doc = toml::Table::new();
        doc.insert("seed".into(), (self.prov.seed as i64).into());
        doc.insert("config_hash".into(), self.prov.config_hash.clone().into());
        doc.insert("files".into(), files.into());
        Ok(io::write_toml(&self.path("manifest.toml"), &doc)?)
    }

    fn beam(&self) -> Result<BeamProfile, StageError> {
        Ok(self.cfg.sim_config()?.beam)
    }

    pub fn simulate(&self) -> Result<SimulateSummary, StageError> {
        let sim = self.cfg.sim_config()?;
        let sys = self.cfg.optical_system()?;
        let mask = self.cfg.mask()?;
        let out = simulate_run(&sim, Some(&mask), &sys)?;
        io::write_events(&self.path("electrons.epgi"), &out.electrons)?;
        io::write_events(&self.path("photons.epgi"), &out.photons)?;
        io::write_truth(&self.path("truth.epgt"), &out.truth)?;
        io::write_mask(&self.path("mask.pbm"), &mask)?;
        let s = SimulateSummary {
            seed: self.prov.seed,
            config_hash: self.prov.config_hash.clone(),
            electrons: out.electrons.len() as u64,
            photons: out.photons.len() as u64,
            true_pairs: out.truth.true_pairs().count() as u64,
            electrons_emitted: out.truth.electrons_emitted,
            background_electrons: out.truth.background_electrons,
            dark_counts: out.truth.dark_counts,
        };
        io::write_toml(&self.path("simulate.toml"), &s)?;
        Ok(s)
    }

    pub fn read_streams(
        &self,
    ) -> Result<(ValidatedStream<ElectronEvent>, ValidatedStream<PhotonEvent>), StageError> {
        Ok((
            io::read_events(&self.path("electrons.epgi"))?,
            io::read_events(&self.path("photons.epgi"))?,
        ))
    }

    fn histogram(
        &self,
        e: &ValidatedStream<ElectronEvent>,
        p: &ValidatedStream<PhotonEvent>,
    ) -> Result<TimeDifferenceHistogram, StageError> {
        Ok(time_difference_histogram(e, p, self.cfg.histogram_range()?))
    }

    /// Window from the config, centred on the histogram peak unless the
    /// offset is pinned.
    fn window(&self, h: &TimeDifferenceHistogram) -> Result<CoincidenceWindow, StageError> {
        if self.cfg.coincidence.window_offset_ns.is_some() {
            return Ok(self.cfg.window(None)?);
        }
        let est = estimate_offset(h)?;
        Ok(self.cfg.window(Some(est.offset_ps.round() as i64))?)
    }

    pub fn g2(&self) -> Result<G2Summary, StageError> {
        let (e, p) = self.read_streams()?;
        let h = self.histogram(&e, &p)?;
        let g = g2(&h)?;
        io::write_text(&self.path("histogram.csv"), &text::format_histogram(&h, Some(&self.prov)))?;
        io::write_text(&self.path("g2.csv"), &text::format_g2(&g, Some(&self.prov)))?;
        let est = estimate_offset(&h)?;
        let peak = h.range.bin_of(est.offset_ps.round() as i64).map_or(f64::NAN, |b| g.g2[b]);
        let (bg, bg_sigma) = background_g2(&g);
        let s = G2Summary {
            seed: self.prov.seed,
            config_hash: self.prov.config_hash.clone(),
            offset_ps: est.offset_ps,
            offset_uncertainty_ps: est.uncertainty_ps,
            peak_g2: peak,
            background_g2: bg,
            background_g2_sigma: bg_sigma,
            peak_to_background: peak / bg,
        };
        io::write_toml(&self.path("g2.toml"), &s)?;
        Ok(s)
    }

    pub fn match_pairs(&self) -> Result<MatchSummary, StageError> {
        let (e, p) = self.read_streams()?;
        let h = self.histogram(&e, &p)?;
        let w = self.window(&h)?;
        let acc = accidental_rate(&h, w)?;
        let slices = rayon::current_num_threads().max(1) * 4;
        let pairs = match_coincidences_parallel(&e, &p, w, slices);
        io::write_pairs(&self.path("pairs.epgp"), &pairs)?;
        let s = MatchSummary {
            seed: self.prov.seed,
            config_hash: self.prov.config_hash.clone(),
            window_offset_ps: w.offset_ps,
            window_half_width_ps: w.half_width_ps,
            pairs: pairs.len() as u64,
            accidental_pairs: acc.expected_pairs,
            accidental_sigma: acc.sigma,
        };
        io::write_toml(&self.path("match.toml"), &s)?;
        Ok(s)
    }

    pub fn reconstruct(&self) -> Result<ReconstructSummary, StageError> {
        let e: ValidatedStream<ElectronEvent> = io::read_events(&self.path("electrons.epgi"))?;
        let pairs = io::read_pairs(&self.path("pairs.epgp"))?;
        let m: MatchSummary = io::read_toml(&self.path("match.toml"), "match summary")?;
        let binning = self.cfg.binning();
        let raw = raw_image(&e, binning);
        let ghost = accumulate_ghost_image(&pairs, &e, binning)?;
        let acc = if self.cfg.reconstruct.subtract_accidentals { m.accidental_pairs } else { 0.0 };
        let subtracted = subtract_accidentals(&ghost, &raw, acc)?;
        io::write_ghost(&self.path("raw.pgm"), &raw, Some(&self.prov))?;
        io::write_ghost(&self.path("ghost.pgm"), &ghost, Some(&self.prov))?;
        io::write_real(&self.path("ghost_subtracted.epgr"), &subtracted, Some(&self.prov))?;
        std::fs::write(
            self.path("ghost_view.pgm"),
            io::image::render_pgm(&crate::fit::blur(&subtracted, METRIC_SMOOTHING_UM), Some(&self.prov)),
        )
        .map_err(IoError::from)?;

        let beam = self.beam()?;
        let region = beam_region(binning, &beam);
        let truth = ground_truth_mask(&self.cfg.mask()?, &self.cfg.optical_system()?, binning, &beam)?;
        let smooth = crate::fit::blur(&subtracted, METRIC_SMOOTHING_UM);
        std::fs::write(self.path("ghost_binary.pbm"), io::image::encode_binary_image(&binning, &binarize(&smooth, &region)))
            .map_err(IoError::from)?;
        std::fs::write(self.path("truth_mask.pbm"), io::image::encode_binary_image(&binning, &truth))
            .map_err(IoError::from)?;
        let s = ReconstructSummary {
            seed: self.prov.seed,
            config_hash: self.prov.config_hash.clone(),
            pairs: pairs.len() as u64,
            pairs_in_image: ghost.meta.n_counted,
            accidental_pairs: acc,
            dice: ghost_dice(&subtracted, &truth, &region),
            smoothing_um: METRIC_SMOOTHING_UM,
        };
        io::write_toml(&self.path("reconstruct.toml"), &s)?;
        Ok(s)
    }

    pub fn fit(&self) -> Result<FitReport, StageError> {
        let spec = self.cfg.grating().ok_or(StageError::NotAGrating)?;
        let (ghost, _) = io::read_ghost(&self.path("ghost.pgm"))?;
        let (raw, _) = io::read_ghost(&self.path("raw.pgm"))?;
        let m: MatchSummary = io::read_toml(&self.path("match.toml"), "match summary")?;
        let region = beam_disc_region(&raw, self.cfg.fit.region_margin_um);
        let fixed_baseline = match self.cfg.fit.baseline {
            BaselineMode::Free => None,
            BaselineMode::Accidentals => Some(accidental_floor(&raw, &region, m.accidental_pairs)?),
        };
        let opts = FitOptions {
            region: Some(region.clone()),
            fixed_baseline,
            ..self.cfg.fit_options()
        };
        let ctx = ModelContext::new(spec, self.cfg.optical_system()?, ghost.binning, opts.supersample)?;
        let init = initial_guess(&ctx, &ghost, &region, self.cfg.fit.init_sigma_um, fixed_baseline)?;
        let r = fit_with_context(&ctx, &ghost, &init, &opts)?;
        let n_pairs = ghost
            .counts
            .iter()
            .zip(&region)
            .filter_map(|(&c, &r)| r.then_some(c))
            .sum();
        let report = FitReport::new(&r, fixed_baseline.is_some(), n_pairs, Some(&self.prov));
        io::write_report(&self.path("fit_report.toml"), &report)?;
        let model = ctx.model(&r.params).map_err(FitError::from)?;
        let residual = RealImage {
            values: ghost
                .counts
                .iter()
                .zip(&model.values)
                .zip(&region)
                .map(|((&c, &v), &inside)| if inside { c as f64 - v } else { 0.0 })
                .collect(),
            ..model.clone()
        };
        io::write_real(&self.path("fit_model.epgr"), &model, Some(&self.prov))?;
        io::write_real(&self.path("fit_residual.epgr"), &residual, Some(&self.prov))?;
        Ok(report)
    }

    pub fn raytrace(&self) -> Result<Vec<DistortionSample>, StageError> {
        let sys = self.cfg.optical_system()?;
        let j = jacobian([0.0, 0.0], &sys, 0.01)?;
        let (h, n) = (self.cfg.raytrace.half_extent_um, self.cfg.raytrace.points_per_axis);
        let mut samples = Vec::with_capacity(n * n);
        for b in 0..n {
            for a in 0..n {
                let x = -h + 2.0 * h * a as f64 / (n - 1) as f64;
                let y = -h + 2.0 * h * b as f64 / (n - 1) as f64;
                let w = trace_to_image([x, y], &sys)?;
                let lin = [j[0][0] * x + j[0][1] * y, j[1][0] * x + j[1][1] * y];
                samples.push(DistortionSample {
                    sample_um: [x, y],
                    image_um: w,
                    distortion_um: [w[0] - lin[0], w[1] - lin[1]],
                });
            }
        }
        io::write_text(&self.path("raytrace.csv"), &text::format_raytrace(&samples, Some(&self.prov)))?;
        Ok(samples)
    }
}

/// Mean and standard error of g² over the outer quarter of bins on each side.
pub fn background_g2(g: &CorrelationFunction) -> (f64, f64) {
    let n = g.g2.len();
    let q = (n / 4).max(1);
    let side: Vec<f64> = g.g2[..q].iter().chain(&g.g2[n - q..]).copied().collect();
    let k = side.len() as f64;
    let mean = side.iter().sum::<f64>() / k;
    let var = side.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    (mean, (var / k).sqrt())
}

/// Expected accidental pairs per bin, averaged over `region`: accidentals
/// follow the raw electron density.
pub fn accidental_floor(raw: &GhostImage, region: &[bool], accidental_pairs: f64) -> Result<f64, StageError> {
    let total = raw.total();
    let (sum, n) = raw
        .counts
        .iter()
        .zip(region)
        .filter(|(_, &r)| r)
        .fold((0u64, 0usize), |(s, n), (&c, _)| (s + c, n + 1));
    if total == 0 || n == 0 {
        return Err(FitError::EmptyData.into());
    }
    Ok(accidental_pairs * sum as f64 / total as f64 / n as f64)
}
