//! Temporal correlation of the electron and photon streams.
//!
//! Time differences are `τ = t_e − t_γ` in picoseconds. Both streams are
//! sorted, so every routine here is a two-pointer sweep whose cost is linear
//! in the stream lengths plus the number of pairs produced.

use rayon::prelude::*;
use thiserror::Error;

use crate::event::{ElectronEvent, PhotonEvent, TimeQuantum, Timestamped, ValidatedStream};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CoincidenceError {
    #[error("histogram range must span at least 4 whole bins of positive width")]
    InvalidRange,
    #[error("g2 normalisation needs non-zero event totals and duration")]
    DegenerateTotals,
    #[error("no histogram bin stands 5σ above the background")]
    NoSignificantPeak,
    #[error("sidebands hold {found} counts, need at least {needed}")]
    InsufficientSideband { found: u64, needed: u64 },
}

/// `τ` range `[tau_min, tau_min + n_bins·bin_width)` in ps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HistogramRange {
    pub tau_min_ps: i64,
    pub bin_width_ps: u64,
    pub n_bins: usize,
}

impl HistogramRange {
    /// Symmetric range `±half_span` split into bins of `bin_width`. The span
    /// must be a whole number of bins.
    pub fn symmetric(half_span_ps: u64, bin_width_ps: u64) -> Result<Self, CoincidenceError> {
        Self::new(-(half_span_ps as i64), half_span_ps as i64, bin_width_ps)
    }

    pub fn new(
        tau_min_ps: i64,
        tau_max_ps: i64,
        bin_width_ps: u64,
    ) -> Result<Self, CoincidenceError> {
        if bin_width_ps == 0 || tau_max_ps <= tau_min_ps {
            return Err(CoincidenceError::InvalidRange);
        }
        let span = (tau_max_ps - tau_min_ps) as u64;
        if !span.is_multiple_of(bin_width_ps) || span / bin_width_ps < 4 {
            return Err(CoincidenceError::InvalidRange);
        }
        Ok(Self {
            tau_min_ps,
            bin_width_ps,
            n_bins: (span / bin_width_ps) as usize,
        })
    }

    /// 12.5 ns bins over ±1 µs, offset by half a Timepix3 quantum. The bin
    /// is eight quanta, so quantised time differences fill every bin evenly
    /// and sit symmetrically about each bin centre.
    pub fn default_g2() -> Self {
        Self::symmetric(1_000_000, 12_500)
            .expect("valid default")
            .shifted(-TimeQuantum::TIMEPIX3.half_ps())
    }

    /// Same binning with every edge moved by `by_ps`.
    pub fn shifted(self, by_ps: i64) -> Self {
        Self {
            tau_min_ps: self.tau_min_ps + by_ps,
            ..self
        }
    }

    pub fn tau_max_ps(&self) -> i64 {
        self.tau_min_ps + (self.n_bins as u64 * self.bin_width_ps) as i64
    }

    pub fn bin_of(&self, tau: i64) -> Option<usize> {
        if tau < self.tau_min_ps || tau >= self.tau_max_ps() {
            return None;
        }
        Some(((tau - self.tau_min_ps) as u64 / self.bin_width_ps) as usize)
    }

    pub fn bin_lower(&self, bin: usize) -> i64 {
        self.tau_min_ps + (bin as u64 * self.bin_width_ps) as i64
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        self.bin_lower(bin) as f64 + 0.5 * self.bin_width_ps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeDifferenceHistogram {
    pub range: HistogramRange,
    pub counts: Vec<u64>,
    pub n_electrons: u64,
    pub n_photons: u64,
    pub duration_ps: u64,
}

impl TimeDifferenceHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Counts every (electron, photon) pair whose `τ` falls in `range`.
pub fn time_difference_histogram(
    e: &ValidatedStream<ElectronEvent>,
    p: &ValidatedStream<PhotonEvent>,
    range: HistogramRange,
) -> TimeDifferenceHistogram {
    let mut counts = vec![0u64; range.n_bins];
    let photons = &p.events;
    let tau_max = range.tau_max_ps();
    let mut lo = 0usize;
    for ev in &e.events {
        let te = ev.t as i64;
        // τ < tau_max  ⇔  t_γ > t_e − tau_max
        let t_first = te - tau_max;
        while lo < photons.len() && (photons[lo].t as i64) <= t_first {
            lo += 1;
        }
        for ph in &photons[lo..] {
            let tau = te - ph.t as i64;
            if tau < range.tau_min_ps {
                break;
            }
            counts[((tau - range.tau_min_ps) as u64 / range.bin_width_ps) as usize] += 1;
        }
    }
    TimeDifferenceHistogram {
        range,
        counts,
        n_electrons: e.len() as u64,
        n_photons: p.len() as u64,
        duration_ps: e.header.duration_ps.max(p.header.duration_ps),
    }
}

/// Normalised second-order cross-correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFunction {
    /// Bin centres (ps).
    pub tau_ps: Vec<f64>,
    pub g2: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Divides each bin by the count expected from two independent Poisson
/// streams with the observed totals, `N_e N_γ Δτ (T − |τ|) / T²`.
pub fn g2(h: &TimeDifferenceHistogram) -> Result<CorrelationFunction, CoincidenceError> {
    if h.n_electrons == 0 || h.n_photons == 0 || h.duration_ps == 0 {
        return Err(CoincidenceError::DegenerateTotals);
    }
    let t = h.duration_ps as f64;
    let n = h.range.n_bins;
    let mut out = CorrelationFunction {
        tau_ps: Vec::with_capacity(n),
        g2: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
    };
    for (i, &c) in h.counts.iter().enumerate() {
        let tau = h.range.bin_center(i);
        let overlap = (t - tau.abs()).max(0.0);
        let expected =
            h.n_electrons as f64 * h.n_photons as f64 * h.range.bin_width_ps as f64 * overlap
                / (t * t);
        if !(expected > 0.0) {
            return Err(CoincidenceError::DegenerateTotals);
        }
        out.tau_ps.push(tau);
        out.g2.push(c as f64 / expected);
        out.sigma.push((c as f64).sqrt() / expected);
    }
    Ok(out)
}

/// Closed window `|τ − offset| ≤ half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CoincidenceWindow {
    pub offset_ps: i64,
    pub half_width_ps: u64,
}

impl CoincidenceWindow {
    /// ±25 ns.
    pub const DEFAULT_HALF_WIDTH_PS: u64 = 25_000;

    pub fn new(offset_ps: i64, half_width_ps: u64) -> Self {
        assert!(half_width_ps > 0, "window half-width must be positive");
        Self {
            offset_ps,
            half_width_ps,
        }
    }

    pub fn contains(&self, tau: i64) -> bool {
        (tau - self.offset_ps).unsigned_abs() <= self.half_width_ps
    }

    pub fn width_ps(&self) -> u64 {
        2 * self.half_width_ps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    pub electron: u64,
    pub photon: u64,
    pub tau_ps: i64,
}

/// Coincident pairs ordered by electron index, then photon index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairList {
    pub window: Option<CoincidenceWindow>,
    pub pairs: Vec<Pair>,
}

impl PairList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn match_range(
    electrons: &[ElectronEvent],
    e_base: usize,
    photons: &[PhotonEvent],
    w: CoincidenceWindow,
    out: &mut Vec<Pair>,
) {
    let hw = w.half_width_ps as i64;
    let mut lo = 0usize;
    for (k, ev) in electrons.iter().enumerate() {
        let te = ev.t as i64;
        // photons with t_γ ∈ [t_e − off − W, t_e − off + W]
        let t_first = te - w.offset_ps - hw;
        let t_last = te - w.offset_ps + hw;
        while lo < photons.len() && (photons[lo].t as i64) < t_first {
            lo += 1;
        }
        for (j, ph) in photons[lo..].iter().enumerate() {
            let tp = ph.t as i64;
            if tp > t_last {
                break;
            }
            out.push(Pair {
                electron: (e_base + k) as u64,
                photon: (lo + j) as u64,
                tau_ps: te - tp,
            });
        }
    }
}

/// All pairs inside the window, single-threaded.
pub fn match_coincidences(
    e: &ValidatedStream<ElectronEvent>,
    p: &ValidatedStream<PhotonEvent>,
    w: CoincidenceWindow,
) -> PairList {
    let mut pairs = Vec::new();
    match_range(&e.events, 0, &p.events, w, &mut pairs);
    PairList {
        window: Some(w),
        pairs,
    }
}

/// Slice-parallel matching. The electron stream is cut into `n_slices` time
/// slices; each slice sees the photons of its span widened by the window on
/// both sides. Equals [`match_coincidences`] exactly.
pub fn match_coincidences_parallel(
    e: &ValidatedStream<ElectronEvent>,
    p: &ValidatedStream<PhotonEvent>,
    w: CoincidenceWindow,
    n_slices: usize,
) -> PairList {
    let n_slices = n_slices.max(1);
    let electrons = &e.events;
    let photons = &p.events;
    let duration = e.header.duration_ps.max(1);
    let bounds: Vec<usize> = (0..=n_slices)
        .map(|k| {
            let t_cut = (duration as u128 * k as u128 / n_slices as u128) as u64;
            if k == n_slices {
                electrons.len()
            } else {
                electrons.partition_point(|ev| ev.t < t_cut)
            }
        })
        .collect();
    let hw = w.half_width_ps as i64;
    let chunks: Vec<Vec<Pair>> = (0..n_slices)
        .into_par_iter()
        .map(|k| {
            let slice = &electrons[bounds[k]..bounds[k + 1]];
            let mut out = Vec::new();
            let (Some(first), Some(last)) = (slice.first(), slice.last()) else {
                return out;
            };
            let t_lo = first.t as i64 - w.offset_ps - hw;
            let t_hi = last.t as i64 - w.offset_ps + hw;
            let p_lo = photons.partition_point(|ph| (ph.t as i64) < t_lo);
            let p_hi = photons.partition_point(|ph| (ph.t as i64) <= t_hi);
            match_range(slice, bounds[k], &photons[p_lo..p_hi], w, &mut out);
            for pair in &mut out {
                pair.photon += p_lo as u64;
            }
            out
        })
        .collect();
    let mut pairs: Vec<Pair> = chunks.into_iter().flatten().collect();
    pairs.dedup();
    PairList {
        window: Some(w),
        pairs,
    }
}

/// Estimated delay of the coincidence peak in `τ` and its standard error (ps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetEstimate {
    pub offset_ps: f64,
    pub uncertainty_ps: f64,
    pub background_per_bin: f64,
    pub peak_counts: u64,
}

/// Mean and spread of the outer quarter of bins on each side.
fn sideband_stats(h: &TimeDifferenceHistogram) -> (f64, f64) {
    let n = h.range.n_bins;
    let q = (n / 4).max(1);
    let side: Vec<f64> = h.counts[..q]
        .iter()
        .chain(&h.counts[n - q..])
        .map(|&c| c as f64)
        .collect();
    let mean = side.iter().sum::<f64>() / side.len() as f64;
    let var = side.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (side.len().max(2) - 1) as f64;
    (mean, var.sqrt().max(mean.sqrt()))
}

/// Background-subtracted centroid of the peak.
///
/// Starts from the bins more than half-way from background to peak, then
/// re-centres a window of one full width at half maximum on each side
/// until it settles. Edge bins count by the fraction of their width inside
/// the window, placed at the middle of that fraction, so the fixed point
/// of a symmetric peak is its centre whatever the bin phase.
pub fn estimate_offset(h: &TimeDifferenceHistogram) -> Result<OffsetEstimate, CoincidenceError> {
    let (bg, bg_sigma) = sideband_stats(h);
    let &peak = h.counts.iter().max().ok_or(CoincidenceError::NoSignificantPeak)?;
    let peak_f = peak as f64;
    if !(peak_f > bg + 5.0 * bg_sigma) {
        return Err(CoincidenceError::NoSignificantPeak);
    }
    let bw = h.range.bin_width_ps as f64;
    let half = 0.5 * (peak_f - bg);
    let (mut sw, mut swx, mut n_above) = (0.0, 0.0, 0usize);
    for (i, &c) in h.counts.iter().enumerate() {
        let excess = c as f64 - bg;
        if excess > half {
            sw += excess;
            swx += excess * h.range.bin_center(i);
            n_above += 1;
        }
    }
    let mut centre = swx / sw;
    let reach = n_above as f64 * bw;
    let lo_edge = h.range.tau_min_ps as f64;
    let windowed = |c: f64| {
        let (a, b) = (c - reach, c + reach);
        let (mut sw, mut swx, mut var) = (0.0, 0.0, Vec::new());
        for (i, &n) in h.counts.iter().enumerate() {
            let l = lo_edge + i as f64 * bw;
            let (lo, hi) = (a.max(l), b.min(l + bw));
            let frac = ((hi - lo) / bw).clamp(0.0, 1.0);
            if frac > 0.0 {
                // counts assumed uniform across the bin
                let x = 0.5 * (lo + hi);
                let excess = frac * (n as f64 - bg);
                sw += excess;
                swx += excess * x;
                var.push((frac, x, n as f64));
            }
        }
        (sw, swx, var)
    };
    for _ in 0..100 {
        let (sw, swx, _) = windowed(centre);
        if !(sw > 0.0) {
            break;
        }
        let next = swx / sw;
        let step = next - centre;
        centre = next;
        if step.abs() < 1e-3 {
            break;
        }
    }
    let (sw, _, terms) = windowed(centre);
    // Poisson error of each bin propagated through the centroid
    let var: f64 = terms
        .iter()
        .map(|&(f, x, n)| (f * (x - centre)).powi(2) * n.max(bg))
        .sum::<f64>()
        / (sw * sw);
    Ok(OffsetEstimate {
        offset_ps: centre,
        uncertainty_ps: (var + bw * bw / 12.0 / sw).sqrt(),
        background_per_bin: bg,
        peak_counts: peak,
    })
}

/// Expected accidental pairs inside a window, with its Poisson error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccidentalEstimate {
    pub expected_pairs: f64,
    pub sigma: f64,
    pub sideband_counts: u64,
}

/// Minimum sideband counts for a usable accidental estimate.
pub const MIN_SIDEBAND_COUNTS: u64 = 100;

/// Mean sideband density (bins with every `τ` beyond `4W` from the offset)
/// times the window width.
pub fn accidental_rate(
    h: &TimeDifferenceHistogram,
    w: CoincidenceWindow,
) -> Result<AccidentalEstimate, CoincidenceError> {
    accidental_rate_with_min(h, w, MIN_SIDEBAND_COUNTS)
}

pub fn accidental_rate_with_min(
    h: &TimeDifferenceHistogram,
    w: CoincidenceWindow,
    min_counts: u64,
) -> Result<AccidentalEstimate, CoincidenceError> {
    let limit = 4 * w.half_width_ps as i64;
    let bw = h.range.bin_width_ps as i64;
    let (mut counts, mut width) = (0u64, 0u64);
    for (i, &c) in h.counts.iter().enumerate() {
        let lo = h.range.bin_lower(i) - w.offset_ps;
        let hi = lo + bw;
        if lo > limit || hi < -limit {
            counts += c;
            width += bw as u64;
        }
    }
    if counts < min_counts || width == 0 {
        return Err(CoincidenceError::InsufficientSideband {
            found: counts,
            needed: min_counts,
        });
    }
    let scale = w.width_ps() as f64 / width as f64;
    Ok(AccidentalEstimate {
        expected_pairs: counts as f64 * scale,
        sigma: (counts.max(1) as f64).sqrt() * scale,
        sideband_counts: counts,
    })
}

/// Reference implementations over all pairs. Quadratic; for tests and
/// cross-checks only.
pub mod brute_force {
    use super::*;

    pub fn histogram(
        electrons: &[ElectronEvent],
        photons: &[PhotonEvent],
        range: HistogramRange,
    ) -> Vec<u64> {
        let mut counts = vec![0u64; range.n_bins];
        for e in electrons {
            for p in photons {
                if let Some(b) = range.bin_of(e.t() as i64 - p.t() as i64) {
                    counts[b] += 1;
                }
            }
        }
        counts
    }

    pub fn pairs(
        electrons: &[ElectronEvent],
        photons: &[PhotonEvent],
        w: CoincidenceWindow,
    ) -> Vec<Pair> {
        let mut out = Vec::new();
        for (i, e) in electrons.iter().enumerate() {
            let te = e.t as i64;
            for (j, p) in photons.iter().enumerate() {
                let tau = te - p.t as i64;
                if w.contains(tau) {
                    out.push(Pair {
                        electron: i as u64,
                        photon: j as u64,
                        tau_ps: tau,
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{validate_stream, EventStream, StreamHeader};
    use crate::rng::{substream_rng, Substream};
    use rand::Rng;

    fn electrons(ts: &[u64], dur: u64) -> ValidatedStream<ElectronEvent> {
        let ev = ts
            .iter()
            .map(|&t| ElectronEvent { t, x: 0.0, y: 0.0 })
            .collect();
        validate_stream(EventStream::new(StreamHeader::new(dur), ev)).unwrap()
    }

    fn photons(ts: &[u64], dur: u64) -> ValidatedStream<PhotonEvent> {
        let ev = ts.iter().map(|&t| PhotonEvent { t }).collect();
        validate_stream(EventStream::new(StreamHeader::new(dur), ev)).unwrap()
    }

    fn random_times(rng: &mut impl Rng, n: usize, dur: u64) -> Vec<u64> {
        let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..=dur)).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn range_validation() {
        assert!(HistogramRange::symmetric(100, 0).is_err());
        assert!(HistogramRange::new(0, 30, 10).is_err(), "3 bins");
        assert!(HistogramRange::new(0, 45, 10).is_err(), "not whole bins");
        assert_eq!(HistogramRange::default_g2().n_bins, 160);
    }

    #[test]
    fn empty_stream_gives_zero_histogram() {
        let h = time_difference_histogram(
            &electrons(&[1, 2, 3], 10),
            &photons(&[], 10),
            HistogramRange::symmetric(100, 10).unwrap(),
        );
        assert!(h.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn single_pair_lands_in_its_bin() {
        let ns = 1000u64;
        let range = HistogramRange::symmetric(100 * ns, 10 * ns).unwrap();
        let h = time_difference_histogram(
            &electrons(&[100 * ns], 200 * ns),
            &photons(&[60 * ns], 200 * ns),
            range,
        );
        assert_eq!(h.total(), 1);
        let b = range.bin_of(40 * ns as i64).unwrap();
        assert_eq!(h.counts[b], 1);
        assert_eq!(range.bin_lower(b), 40_000);
    }

    #[test]
    fn window_boundary_is_closed() {
        let w = CoincidenceWindow::new(1_000, 25_000);
        let e = electrons(&[100_000], 200_000);
        // τ − off = ±W exactly, and one ps beyond
        let p = photons(&[74_000, 74_001, 123_999, 124_000, 124_001], 200_000);
        let pl = match_coincidences(&e, &p, w);
        let taus: Vec<i64> = pl.pairs.iter().map(|x| x.tau_ps).collect();
        assert_eq!(taus, vec![26_000, 25_999, -23_999, -24_000]);
        assert!(match_coincidences(&e, &photons(&[], 10), w).is_empty());
    }

    #[test]
    fn random_instances_match_brute_force() {
        let mut rng = substream_rng(11, Substream::Test, 0);
        for _ in 0..20 {
            let dur = 2_000_000;
            let e = electrons(&random_times(&mut rng, 300, dur), dur);
            let p = photons(&random_times(&mut rng, 300, dur), dur);
            let w = CoincidenceWindow::new(rng.random_range(-5_000..5_000), 25_000);
            let range = HistogramRange::symmetric(100_000, 10_000).unwrap();
            assert_eq!(
                match_coincidences(&e, &p, w).pairs,
                brute_force::pairs(&e.events, &p.events, w)
            );
            assert_eq!(
                match_coincidences_parallel(&e, &p, w, 7).pairs,
                brute_force::pairs(&e.events, &p.events, w)
            );
            assert_eq!(
                time_difference_histogram(&e, &p, range).counts,
                brute_force::histogram(&e.events, &p.events, range)
            );
        }
    }

    #[test]
    fn offset_of_symmetric_peak_is_centre() {
        let range = HistogramRange::symmetric(200_000, 10_000).unwrap();
        let mut counts = vec![10u64; range.n_bins];
        for (d, c) in [(0, 200), (1, 120), (2, 40)] {
            counts[20 + d] += c;
            counts[19 - d] += c;
        }
        let h = TimeDifferenceHistogram {
            range,
            counts,
            n_electrons: 1,
            n_photons: 1,
            duration_ps: 1,
        };
        let est = estimate_offset(&h).unwrap();
        assert!(est.offset_ps.abs() < 1e-6, "{est:?}");
    }

    #[test]
    fn offset_is_unbiased_across_bin_phases() {
        // expected counts of a Gaussian peak on a flat floor, no noise
        let range = HistogramRange::symmetric(1_000_000, 12_500).unwrap();
        let sigma = 21_000.0;
        for k in 0..8 {
            let true_offset = -137_000.0 + k as f64 * 1_562.5;
            let counts = (0..range.n_bins)
                .map(|i| {
                    let l = range.bin_lower(i) as f64;
                    let cdf = |t: f64| 0.5 * (1.0 + erf((t - true_offset) / (sigma * std::f64::consts::SQRT_2)));
                    (1_000.0 + 2e6 * (cdf(l + 12_500.0) - cdf(l))).round() as u64
                })
                .collect();
            let h = TimeDifferenceHistogram {
                range,
                counts,
                n_electrons: 1,
                n_photons: 1,
                duration_ps: 1,
            };
            let est = estimate_offset(&h).unwrap();
            assert!((est.offset_ps - true_offset).abs() < 50.0, "{k}: {est:?}");
            assert!(est.uncertainty_ps > 10.0 && est.uncertainty_ps < 100.0, "{est:?}");
        }
    }

    #[test]
    fn default_bins_are_centred_on_the_quantum_grid() {
        // peak mass concentrated on Timepix3 grid points, as after quantisation
        let range = HistogramRange::default_g2();
        let q = TimeQuantum::TIMEPIX3.as_ps();
        let sigma = 21_000.0;
        let center = -137_000.0;
        let mut w = vec![0.0; range.n_bins];
        let (mut sw, mut swx) = (0.0, 0.0);
        for m in -640..=640 {
            let tau = (m as f64 * q).floor();
            let mass = (-0.5 * ((tau - center) / sigma).powi(2)).exp();
            if let Some(b) = range.bin_of(tau as i64) {
                w[b] += mass;
                sw += mass;
                swx += mass * tau;
            }
        }
        let counts = w.iter().map(|m| (1_000.0 + 2e6 * m / sw).round() as u64).collect();
        let h = TimeDifferenceHistogram {
            range,
            counts,
            n_electrons: 1,
            n_photons: 1,
            duration_ps: 1,
        };
        let est = estimate_offset(&h).unwrap();
        assert!((est.offset_ps - swx / sw).abs() < 100.0, "{est:?} vs {}", swx / sw);
    }

    /// Abramowitz–Stegun 7.1.26, |error| < 1.5e-7.
    fn erf(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
        let y = 1.0
            - (((((1.061_405_429 * t - 1.453_152_027) * t) + 1.421_413_741) * t - 0.284_496_736) * t
                + 0.254_829_592)
                * t
                * (-x * x).exp();
        y.copysign(x)
    }

    #[test]
    fn flat_histogram_has_no_peak() {
        let range = HistogramRange::symmetric(200_000, 10_000).unwrap();
        let h = TimeDifferenceHistogram {
            range,
            counts: vec![50; range.n_bins],
            n_electrons: 1,
            n_photons: 1,
            duration_ps: 1,
        };
        assert_eq!(
            estimate_offset(&h),
            Err(CoincidenceError::NoSignificantPeak)
        );
    }

    #[test]
    fn degenerate_totals() {
        let h = TimeDifferenceHistogram {
            range: HistogramRange::default_g2(),
            counts: vec![0; 200],
            n_electrons: 0,
            n_photons: 4,
            duration_ps: 10,
        };
        assert_eq!(g2(&h), Err(CoincidenceError::DegenerateTotals));
    }

    #[test]
    fn sideband_requirement() {
        let range = HistogramRange::symmetric(1_000_000, 10_000).unwrap();
        let h = TimeDifferenceHistogram {
            range,
            counts: vec![0; range.n_bins],
            n_electrons: 1,
            n_photons: 1,
            duration_ps: 1,
        };
        let w = CoincidenceWindow::new(0, 25_000);
        assert!(matches!(
            accidental_rate(&h, w),
            Err(CoincidenceError::InsufficientSideband { found: 0, .. })
        ));
        let zero = accidental_rate_with_min(&h, w, 0).unwrap();
        assert_eq!(zero.expected_pairs, 0.0);
        assert!(zero.sigma > 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn times(max_n: usize, dur: u64) -> impl Strategy<Value = Vec<u64>> {
            proptest::collection::vec(0..=dur, 0..max_n).prop_map(|mut v| {
                v.sort_unstable();
                v
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn two_pointer_equals_brute_force(
                te in times(400, 500_000),
                tp in times(400, 500_000),
                off in -50_000i64..50_000,
                hw in 1u64..60_000,
                slices in 1usize..9,
            ) {
                let e = electrons(&te, 500_000);
                let p = photons(&tp, 500_000);
                let w = CoincidenceWindow::new(off, hw);
                let oracle = brute_force::pairs(&e.events, &p.events, w);
                prop_assert_eq!(&match_coincidences(&e, &p, w).pairs, &oracle);
                prop_assert_eq!(&match_coincidences_parallel(&e, &p, w, slices).pairs, &oracle);
                let range = HistogramRange::symmetric(120_000, 8_000).unwrap();
                prop_assert_eq!(
                    time_difference_histogram(&e, &p, range).counts,
                    brute_force::histogram(&e.events, &p.events, range)
                );
            }

            #[test]
            fn swapping_streams_transposes_pairs(
                te in times(200, 300_000),
                tp in times(200, 300_000),
                off in -40_000i64..40_000,
            ) {
                let w = CoincidenceWindow::new(off, 25_000);
                let forward = match_coincidences(&electrons(&te, 300_000), &photons(&tp, 300_000), w);
                let back = match_coincidences(
                    &electrons(&tp, 300_000),
                    &photons(&te, 300_000),
                    CoincidenceWindow::new(-off, 25_000),
                );
                let mut transposed: Vec<(u64, u64)> =
                    back.pairs.iter().map(|p| (p.photon, p.electron)).collect();
                transposed.sort_unstable();
                let fwd: Vec<(u64, u64)> = forward.pairs.iter().map(|p| (p.electron, p.photon)).collect();
                prop_assert_eq!(fwd, transposed);
            }

            #[test]
            fn rebinning_conserves_counts(
                te in times(300, 400_000),
                tp in times(300, 400_000),
                coarse_factor in 1u64..6,
            ) {
                let e = electrons(&te, 400_000);
                let p = photons(&tp, 400_000);
                let fine = time_difference_histogram(&e, &p, HistogramRange::symmetric(120_000, 1_000).unwrap());
                let coarse = time_difference_histogram(
                    &e, &p, HistogramRange::symmetric(120_000, 1_000 * [1, 2, 4, 5, 8, 10][coarse_factor as usize]).unwrap());
                prop_assert_eq!(fine.total(), coarse.total());
            }
        }
    }
}
