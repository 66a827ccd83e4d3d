//! Images from event positions: raw beam image, coincidence ghost image,
//! accidental-floor subtraction, and the overlap metrics used to judge them.

use thiserror::Error;

use crate::coincidence::{CoincidenceWindow, PairList};
use crate::event::{ElectronEvent, ValidatedStream};
use crate::optics::{trace_to_image, transmit, Mask, OpticalSystem, OpticsError};
use crate::source::BeamProfile;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ReconError {
    #[error("pair references electron {0}, beyond the stream")]
    IndexOutOfRange(u64),
    #[error("images have different binning")]
    BinningMismatch,
    #[error("raw image is empty")]
    EmptyRaw,
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

/// Square bins over a rectangle of the sample plane.
///
/// Bin `(i, j)` covers `[x0 + i·b, x0 + (i+1)·b) × [y0 + j·b, y0 + (j+1)·b)`;
/// row `j = 0` is the lowest `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub origin_um: [f64; 2],
    pub bin_um: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Binning {
    /// `n × n` bins of `bin_um` centred on `center`.
    pub fn centered(center_um: [f64; 2], bin_um: f64, n: usize) -> Self {
        let half = 0.5 * n as f64 * bin_um;
        Self {
            origin_um: [center_um[0] - half, center_um[1] - half],
            bin_um,
            nx: n,
            ny: n,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: f64, y: f64) -> Option<usize> {
        let fi = ((x - self.origin_um[0]) / self.bin_um).floor();
        let fj = ((y - self.origin_um[1]) / self.bin_um).floor();
        if !(fi >= 0.0 && fj >= 0.0 && fi < self.nx as f64 && fj < self.ny as f64) {
            return None;
        }
        Some(fj as usize * self.nx + fi as usize)
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin_um[0] + (i as f64 + 0.5) * self.bin_um,
            self.origin_um[1] + (j as f64 + 0.5) * self.bin_um,
        ]
    }

    /// Bin centres in row-major order.
    pub fn centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| self.center(i, j)))
    }
}

impl Default for Binning {
    /// 0.5 µm bins over a 40 µm field.
    fn default() -> Self {
        Self::centered([0.0, 0.0], 0.5, 80)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImageMeta {
    pub duration_ps: u64,
    /// Events or pairs that landed inside the binning.
    pub n_counted: u64,
    /// Events or pairs that fell outside it.
    pub n_outside: u64,
    pub window: Option<CoincidenceWindow>,
    /// Accidental pairs removed by [`subtract_accidentals`].
    pub accidentals_subtracted: Option<f64>,
}

/// Integer-count image.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostImage {
    pub binning: Binning,
    pub counts: Vec<u64>,
    pub meta: ImageMeta,
}

impl GhostImage {
    pub fn zeros(binning: Binning) -> Self {
        Self {
            binning,
            counts: vec![0; binning.len()],
            meta: ImageMeta::default(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, x: f64, y: f64) {
        match self.binning.index(x, y) {
            Some(k) => {
                self.counts[k] += 1;
                self.meta.n_counted += 1;
            }
            None => self.meta.n_outside += 1,
        }
    }

    /// Adds another partial image over the same bins.
    pub fn merge(&mut self, other: &GhostImage) -> Result<(), ReconError> {
        if self.binning != other.binning {
            return Err(ReconError::BinningMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.meta.n_counted += other.meta.n_counted;
        self.meta.n_outside += other.meta.n_outside;
        self.meta.duration_ps = self.meta.duration_ps.max(other.meta.duration_ps);
        Ok(())
    }

    pub fn to_real(&self) -> RealImage {
        RealImage {
            binning: self.binning,
            values: self.counts.iter().map(|&c| c as f64).collect(),
            meta: self.meta,
        }
    }

    /// Intensity-weighted mean position.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        self.to_real().centroid()
    }
}

/// Real-valued image on the same bin geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    pub binning: Binning,
    pub values: Vec<f64>,
    pub meta: ImageMeta,
}

impl RealImage {
    pub fn zeros(binning: Binning) -> Self {
        Self {
            binning,
            values: vec![0.0; binning.len()],
            meta: ImageMeta::default(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.binning.nx + i]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn centroid(&self) -> Option<[f64; 2]> {
        let (mut w, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for (k, c) in self.binning.centers().enumerate() {
            let v = self.values[k];
            w += v;
            sx += v * c[0];
            sy += v * c[1];
        }
        (w > 0.0).then(|| [sx / w, sy / w])
    }
}

/// Histogram of every electron position.
pub fn raw_image(e: &ValidatedStream<ElectronEvent>, binning: Binning) -> GhostImage {
    let mut img = GhostImage::zeros(binning);
    img.meta.duration_ps = e.header.duration_ps;
    for ev in &e.events {
        img.add(ev.x as f64, ev.y as f64);
    }
    img
}

/// Histogram of electron positions over the matched pairs. An electron in
/// `k` pairs counts `k` times.
pub fn accumulate_ghost_image(
    pairs: &PairList,
    e: &ValidatedStream<ElectronEvent>,
    binning: Binning,
) -> Result<GhostImage, ReconError> {
    let mut img = GhostImage::zeros(binning);
    img.meta.duration_ps = e.header.duration_ps;
    img.meta.window = pairs.window;
    for p in &pairs.pairs {
        let ev = e
            .events
            .get(p.electron as usize)
            .ok_or(ReconError::IndexOutOfRange(p.electron))?;
        img.add(ev.x as f64, ev.y as f64);
    }
    Ok(img)
}

/// `ghost − accidental_pairs · raw / Σraw`, clamped at zero.
pub fn subtract_accidentals(
    ghost: &GhostImage,
    raw: &GhostImage,
    accidental_pairs: f64,
) -> Result<RealImage, ReconError> {
    if ghost.binning != raw.binning {
        return Err(ReconError::BinningMismatch);
    }
    let total = raw.total();
    if total == 0 {
        return Err(ReconError::EmptyRaw);
    }
    let scale = accidental_pairs / total as f64;
    let values = ghost
        .counts
        .iter()
        .zip(&raw.counts)
        .map(|(&g, &r)| (g as f64 - scale * r as f64).max(0.0))
        .collect();
    let mut meta = ghost.meta;
    meta.accidentals_subtracted = Some(accidental_pairs);
    Ok(RealImage {
        binning: ghost.binning,
        values,
        meta,
    })
}

/// Otsu's threshold over `values`, using 256 equal-width levels.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !(hi > lo) {
        return lo;
    }
    const LEVELS: usize = 256;
    let width = (hi - lo) / LEVELS as f64;
    let mut hist = [0u64; LEVELS];
    for &v in values {
        hist[(((v - lo) / width) as usize).min(LEVELS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(k, &h)| k as f64 * h as f64)
        .sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0);
    for (k, &h) in hist.iter().enumerate() {
        w0 += h as f64;
        sum0 += k as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    lo + (best_k + 1) as f64 * width
}

/// Thresholds `img` by Otsu over the bins selected by `region`. Bins
/// outside the region are false.
pub fn binarize(img: &RealImage, region: &[bool]) -> Vec<bool> {
    let inside: Vec<f64> = img
        .values
        .iter()
        .zip(region)
        .filter_map(|(&v, &r)| r.then_some(v))
        .collect();
    let t = otsu_threshold(&inside);
    img.values
        .iter()
        .zip(region)
        .map(|(&v, &r)| r && v >= t)
        .collect()
}

/// Sørensen–Dice overlap of two boolean rasters.
pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "rasters must match");
    let both = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let na = a.iter().filter(|x| **x).count();
    let nb = b.iter().filter(|x| **x).count();
    if na + nb == 0 {
        return 1.0;
    }
    2.0 * both as f64 / (na + nb) as f64
}

/// Bins whose centre lies in the beam and images onto an open mask pixel.
pub fn ground_truth_mask(
    mask: &Mask,
    sys: &OpticalSystem,
    binning: Binning,
    beam: &BeamProfile,
) -> Result<Vec<bool>, ReconError> {
    binning
        .centers()
        .map(|c| Ok(beam.contains(c) && transmit(mask, trace_to_image(c, sys)?)))
        .collect()
}

/// Bins whose centre lies in the beam disc.
pub fn beam_region(binning: Binning, beam: &BeamProfile) -> Vec<bool> {
    binning.centers().map(|c| beam.contains(c)).collect()
}

/// Default presentation smoothing for overlap metrics.
pub const METRIC_SMOOTHING_UM: f64 = 0.5;

/// Dice overlap of the smoothed, Otsu-binarised image against `truth`
/// inside `region`.
pub fn ghost_dice(img: &RealImage, truth: &[bool], region: &[bool]) -> f64 {
    let smooth = crate::fit::blur(img, METRIC_SMOOTHING_UM);
    dice(&binarize(&smooth, region), truth)
}
