//! Monte Carlo generation of correlated electron/photon streams.
//!
//! Electrons arrive at the sample as a homogeneous Poisson process. Each one
//! may emit a photon from a point displaced by an isotropic Gaussian of
//! `σ_corr`; the photon is traced to the mask plane, kept if the mask is open
//! there and the detector fires, and time-stamped after a fixed delay plus
//! Gaussian jitter. The energy filter keeps paired electrons with `p_sig` and
//! unpaired ones with `p_bg`. Dark counts are a separate Poisson process.
//!
//! The run is cut into fixed time slices that draw from their own RNG
//! sub-streams, so the output does not depend on the thread count.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::event::{
    ElectronEvent, EventStream, FieldOfView, PhotonEvent, StreamHeader, TimeQuantum,
    ValidatedStream, PS_PER_S,
};
use crate::optics::{trace_to_image, transmit, Mask, OpticalSystem, OpticsError};
use crate::rng::{substream_rng, Substream};

/// Length of one generation slice.
pub const SLICE_PS: u64 = 10_000_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
    #[error("photon source ({0:.2}, {1:.2}) µm lies outside the traceable region")]
    OpticsOutOfRange(f64, f64),
}

/// Uniform disc illumination in the sample plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamProfile {
    pub center_um: [f64; 2],
    pub diameter_um: f64,
}

impl BeamProfile {
    pub fn new(center_um: [f64; 2], diameter_um: f64) -> Self {
        Self {
            center_um,
            diameter_um,
        }
    }

    pub fn radius_um(&self) -> f64 {
        0.5 * self.diameter_um
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.center_um[0];
        let dy = p[1] - self.center_um[1];
        dx * dx + dy * dy <= self.radius_um() * self.radius_um()
    }

    /// Bounding square of the disc.
    pub fn field_of_view(&self) -> FieldOfView {
        let r = self.radius_um();
        FieldOfView {
            x_min: (self.center_um[0] - r) as f32,
            y_min: (self.center_um[1] - r) as f32,
            x_max: (self.center_um[0] + r) as f32,
            y_max: (self.center_um[1] + r) as f32,
        }
    }

    /// Uniform point in the disc.
    pub fn sample(&self, rng: &mut impl Rng) -> [f64; 2] {
        let r = self.radius_um() * rng.random::<f64>().sqrt();
        let phi = std::f64::consts::TAU * rng.random::<f64>();
        [
            self.center_um[0] + r * phi.cos(),
            self.center_um[1] + r * phi.sin(),
        ]
    }
}

impl Default for BeamProfile {
    fn default() -> Self {
        Self::new([0.0, 0.0], 31.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub run_duration_s: f64,
    pub electron_rate_hz: f64,
    pub pair_yield: f64,
    pub photon_detection_efficiency: f64,
    pub filter_pass_given_pair: f64,
    pub filter_leak_given_no_pair: f64,
    pub dark_count_rate_hz: f64,
    pub beam: BeamProfile,
    pub correlation_sigma_um: f64,
    pub jitter_sigma_ps: f64,
    pub fixed_offset_ps: f64,
    pub quantum: TimeQuantum,
    pub seed: u64,
}

impl SimConfig {
    /// Rates for a cat-mask acquisition: above 10⁵ coincidences with
    /// accidentals near a tenth of the true pairs.
    pub fn cat_run() -> Self {
        Self {
            run_duration_s: 0.5,
            electron_rate_hz: 1.5e7,
            pair_yield: 0.1,
            photon_detection_efficiency: 0.5,
            filter_pass_given_pair: 0.9,
            filter_leak_given_no_pair: 0.02,
            dark_count_rate_hz: 2_000.0,
            beam: BeamProfile::default(),
            correlation_sigma_um: 0.87,
            jitter_sigma_ps: 21_000.0,
            fixed_offset_ps: 137_000.0,
            quantum: TimeQuantum::TIMEPIX3,
            seed: 20_240_611,
        }
    }

    pub fn grating_run() -> Self {
        Self {
            seed: 20_240_612,
            ..Self::cat_run()
        }
    }

    pub fn duration_ps(&self) -> u64 {
        (self.run_duration_s * PS_PER_S).round() as u64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::ConfigInvalid(what.to_string()));
        let probs = [
            self.pair_yield,
            self.photon_detection_efficiency,
            self.filter_pass_given_pair,
            self.filter_leak_given_no_pair,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.run_duration_s > 0.0 && self.run_duration_s * PS_PER_S < 9.2e18) {
            return bad("run duration must be positive and fit in 64-bit picoseconds");
        }
        if !(self.electron_rate_hz >= 0.0 && self.electron_rate_hz.is_finite())
            || !(self.dark_count_rate_hz >= 0.0 && self.dark_count_rate_hz.is_finite())
        {
            return bad("rates must be finite and non-negative");
        }
        if !(self.beam.diameter_um > 0.0 && self.beam.diameter_um.is_finite())
            || !self.beam.center_um.iter().all(|c| c.is_finite())
        {
            return bad("beam diameter must be positive");
        }
        if !(self.correlation_sigma_um >= 0.0 && self.correlation_sigma_um.is_finite()) {
            return bad("correlation sigma must be finite and non-negative");
        }
        if !(self.jitter_sigma_ps >= 0.0 && self.jitter_sigma_ps.is_finite()) {
            return bad("jitter sigma must be finite and non-negative");
        }
        if !self.fixed_offset_ps.is_finite() {
            return bad("fixed offset must be finite");
        }
        Ok(())
    }
}

/// Electron position and photon source position of one pair.
pub fn draw_pair(
    beam: &BeamProfile,
    sigma_corr_um: f64,
    rng: &mut impl Rng,
) -> ([f64; 2], [f64; 2]) {
    let e = beam.sample(rng);
    if sigma_corr_um == 0.0 {
        return (e, e);
    }
    let n = Normal::new(0.0, sigma_corr_um).expect("finite sigma");
    let dx = n.sample(rng);
    let dy = n.sample(rng);
    (e, [e[0] + dx, e[1] + dy])
}

/// One generated photon, whether or not it reached the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub electron_um: [f64; 2],
    pub emission_um: [f64; 2],
    pub image_um: [f64; 2],
    pub transmitted: bool,
    pub photon_detected: bool,
    pub electron_recorded: bool,
    /// Position in the output electron stream, if recorded.
    pub electron_index: Option<u64>,
    /// Position in the output photon stream, if detected inside the run.
    pub photon_index: Option<u64>,
}

impl PairRecord {
    /// Both partners made it into the output streams.
    pub fn is_true_pair(&self) -> bool {
        self.electron_index.is_some() && self.photon_index.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub pairs: Vec<PairRecord>,
    pub electrons_emitted: u64,
    /// Recorded electrons that leaked through the filter without a pair.
    pub background_electrons: u64,
    pub dark_counts: u64,
}

impl GroundTruth {
    pub fn true_pairs(&self) -> impl Iterator<Item = &PairRecord> {
        self.pairs.iter().filter(|p| p.is_true_pair())
    }

    pub fn detected_photons(&self) -> u64 {
        self.pairs
            .iter()
            .filter(|p| p.photon_index.is_some())
            .count() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub electrons: ValidatedStream<ElectronEvent>,
    pub photons: ValidatedStream<PhotonEvent>,
    pub truth: GroundTruth,
}

/// Photon before global ordering: time, slice, position within slice.
#[derive(Clone, Copy)]
struct PendingPhoton {
    t: u64,
    record: Option<usize>,
}

struct Slice {
    electrons: Vec<ElectronEvent>,
    /// Slice-local record index for each electron in `electrons`.
    electron_record: Vec<Option<usize>>,
    records: Vec<PairRecord>,
    photons: Vec<PendingPhoton>,
    emitted: u64,
    background: u64,
}

fn simulate_slice(
    cfg: &SimConfig,
    mask: Option<&Mask>,
    optics: &OpticalSystem,
    index: u64,
) -> Result<Slice, SimError> {
    let duration = cfg.duration_ps();
    let t0 = index * SLICE_PS;
    let t1 = ((index + 1) * SLICE_PS).min(duration);
    let mut rng = substream_rng(cfg.seed, Substream::Electrons, index);
    let mut out = Slice {
        electrons: Vec::new(),
        electron_record: Vec::new(),
        records: Vec::new(),
        photons: Vec::new(),
        emitted: 0,
        background: 0,
    };
    if cfg.electron_rate_hz == 0.0 {
        return Ok(out);
    }
    let gap = Exp::new(cfg.electron_rate_hz / PS_PER_S).expect("positive rate");
    let jitter = Normal::new(0.0, cfg.jitter_sigma_ps).expect("finite jitter");
    let mut t = t0 as f64;
    loop {
        t += gap.sample(&mut rng);
        if t >= t1 as f64 {
            break;
        }
        out.emitted += 1;
        let paired = rng.random_bool(cfg.pair_yield);
        let (e_pos, record) = if paired {
            let (e, src) = draw_pair(&cfg.beam, cfg.correlation_sigma_um, &mut rng);
            let img = trace_to_image(src, optics).map_err(|err| match err {
                OpticsError::OutOfRange
                | OpticsError::ChiefRay(_)
                | OpticsError::NoConvergence(_) => SimError::OpticsOutOfRange(src[0], src[1]),
                OpticsError::Invalid(what) => SimError::ConfigInvalid(what.to_string()),
            })?;
            let transmitted = mask.is_none_or(|m| transmit(m, img));
            let detected = transmitted && rng.random_bool(cfg.photon_detection_efficiency);
            let dt = cfg.fixed_offset_ps
                + if cfg.jitter_sigma_ps > 0.0 {
                    jitter.sample(&mut rng)
                } else {
                    0.0
                };
            let rec = out.records.len();
            out.records.push(PairRecord {
                electron_um: e,
                emission_um: src,
                image_um: img,
                transmitted,
                photon_detected: detected,
                electron_recorded: false,
                electron_index: None,
                photon_index: None,
            });
            if detected {
                if let Some(tp) = cfg.quantum.quantize(t + dt).filter(|&tp| tp <= duration) {
                    out.photons.push(PendingPhoton {
                        t: tp,
                        record: Some(rec),
                    });
                }
            }
            (e, Some(rec))
        } else {
            (cfg.beam.sample(&mut rng), None)
        };
        let keep_p = if paired {
            cfg.filter_pass_given_pair
        } else {
            cfg.filter_leak_given_no_pair
        };
        if rng.random_bool(keep_p) {
            let Some(te) = cfg.quantum.quantize(t).filter(|&te| te <= duration) else {
                continue;
            };
            if let Some(rec) = record {
                out.records[rec].electron_recorded = true;
            } else {
                out.background += 1;
            }
            out.electrons.push(ElectronEvent {
                t: te,
                x: e_pos[0] as f32,
                y: e_pos[1] as f32,
            });
            out.electron_record.push(record);
        }
    }
    Ok(out)
}

/// Runs the full generative model. `mask = None` transmits everything.
pub fn simulate_run(
    cfg: &SimConfig,
    mask: Option<&Mask>,
    optics: &OpticalSystem,
) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    optics
        .validate()
        .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
    let duration = cfg.duration_ps();
    let n_slices = duration.div_ceil(SLICE_PS).max(1);
    let slices: Vec<Slice> = (0..n_slices)
        .into_par_iter()
        .map(|k| simulate_slice(cfg, mask, optics, k))
        .collect::<Result<_, _>>()?;

    let mut truth = GroundTruth::default();
    let mut electrons = Vec::new();
    let mut pending: Vec<PendingPhoton> = Vec::new();
    for s in slices {
        let base = truth.pairs.len();
        truth.electrons_emitted += s.emitted;
        truth.background_electrons += s.background;
        for (ev, rec) in s.electrons.into_iter().zip(s.electron_record) {
            electrons.push((ev, rec.map(|r| r + base)));
        }
        truth.pairs.extend(s.records);
        pending.extend(s.photons.into_iter().map(|p| PendingPhoton {
            t: p.t,
            record: p.record.map(|r| r + base),
        }));
    }
    for (i, (_, rec)) in electrons.iter().enumerate() {
        if let Some(r) = rec {
            truth.pairs[*r].electron_index = Some(i as u64);
        }
    }

    let mut dark_rng = substream_rng(cfg.seed, Substream::DarkCounts, 0);
    let n_dark = poisson_count(cfg.dark_count_rate_hz * cfg.run_duration_s, &mut dark_rng);
    truth.dark_counts = n_dark;
    for _ in 0..n_dark {
        let t = dark_rng.random_range(0.0..=duration as f64);
        if let Some(tp) = cfg.quantum.quantize(t).filter(|&tp| tp <= duration) {
            pending.push(PendingPhoton {
                t: tp,
                record: None,
            });
        }
    }
    // stable: ties keep slice order, then dark counts last
    pending.sort_by_key(|p| p.t);
    for (i, p) in pending.iter().enumerate() {
        if let Some(r) = p.record {
            truth.pairs[r].photon_index = Some(i as u64);
        }
    }

    let header_e = StreamHeader {
        duration_ps: duration,
        fov: Some(cfg.beam.field_of_view()),
        nominal_rate_hz: Some(cfg.electron_rate_hz),
        seed: Some(cfg.seed),
    };
    let header_p = StreamHeader {
        duration_ps: duration,
        fov: None,
        nominal_rate_hz: None,
        seed: Some(cfg.seed),
    };
    Ok(SimOutput {
        electrons: ValidatedStream::assume_valid(EventStream::new(
            header_e,
            electrons.into_iter().map(|(e, _)| e).collect(),
        )),
        photons: ValidatedStream::assume_valid(EventStream::new(
            header_p,
            pending
                .into_iter()
                .map(|p| PhotonEvent { t: p.t })
                .collect(),
        )),
        truth,
    })
}

fn poisson_count(mean: f64, rng: &mut impl Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite mean").sample(rng) as u64
}

/// Sorted, integer-ps event times of a homogeneous Poisson process on `[0, T]`.
fn poisson_times(rate_hz: f64, duration_ps: u64, rng: &mut impl Rng) -> Vec<u64> {
    let n = poisson_count(rate_hz * duration_ps as f64 / PS_PER_S, rng);
    let mut t: Vec<u64> = (0..n).map(|_| rng.random_range(0..=duration_ps)).collect();
    t.sort_unstable();
    t
}

/// Two independent homogeneous Poisson streams. Electron positions are
/// uniform over `beam`.
pub fn background_streams(
    rate_e_hz: f64,
    rate_gamma_hz: f64,
    duration_s: f64,
    beam: &BeamProfile,
    rng: &mut impl Rng,
) -> (ValidatedStream<ElectronEvent>, ValidatedStream<PhotonEvent>) {
    assert!(
        rate_e_hz >= 0.0 && rate_gamma_hz >= 0.0,
        "rates must be non-negative"
    );
    let duration = (duration_s * PS_PER_S).round() as u64;
    let te = poisson_times(rate_e_hz, duration, rng);
    let electrons = te
        .into_iter()
        .map(|t| {
            let p = beam.sample(rng);
            ElectronEvent {
                t,
                x: p[0] as f32,
                y: p[1] as f32,
            }
        })
        .collect();
    let photons = poisson_times(rate_gamma_hz, duration, rng)
        .into_iter()
        .map(|t| PhotonEvent { t })
        .collect();
    let he = StreamHeader {
        duration_ps: duration,
        fov: Some(beam.field_of_view()),
        nominal_rate_hz: Some(rate_e_hz),
        seed: None,
    };
    let hp = StreamHeader {
        duration_ps: duration,
        fov: None,
        nominal_rate_hz: Some(rate_gamma_hz),
        seed: None,
    };
    (
        ValidatedStream::assume_valid(EventStream::new(he, electrons)),
        ValidatedStream::assume_valid(EventStream::new(hp, photons)),
    )
}
