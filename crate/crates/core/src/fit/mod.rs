//! Resolution measurement by least-absolute-deviation fitting of a blurred,
//! distorted grating model to a ghost image.

pub mod blur;
pub mod model;
pub mod nelder_mead;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::optics::{OpticalSystem, OpticsError};
use crate::reconstruction::{Binning, GhostImage, RealImage};
use crate::rng::{substream_rng, Substream};

pub use blur::blur;
pub use model::{
    ideal_target_image, model_from_ideal, model_image, FitParams, GratingSpec, ModelContext,
};
pub use nelder_mead::{minimize, Minimum, NelderMeadOptions};

/// `2√(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

pub fn fwhm(sigma: f64) -> f64 {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    FWHM_PER_SIGMA * sigma
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("data image has no counts inside the fit region")]
    EmptyData,
    #[error("initial parameters are invalid (σ and amplitude must be positive)")]
    InvalidInit,
    #[error("fit region does not match the image")]
    RegionMismatch,
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Bins entering the objective; `None` uses every bin.
    pub region: Option<Vec<bool>>,
    /// Sub-cells per bin side in the model.
    pub supersample: usize,
    /// Extra starts from perturbed copies of the initial point.
    pub restarts: usize,
    pub nelder_mead: NelderMeadOptions,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    /// Holds the baseline at this value instead of fitting it. For a grating
    /// whose period is a few σ the blurred image is nearly a pure sinusoid,
    /// so σ, amplitude and baseline are not separable; the accidental floor
    /// measured from the coincidence sidebands pins the baseline.
    pub fixed_baseline: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            region: None,
            supersample: 2,
            restarts: 3,
            nelder_mead: NelderMeadOptions::default(),
            bootstrap_resamples: 50,
            seed: 0,
            fixed_baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: FitParams,
    pub fwhm_um: f64,
    pub residual_l1: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Bootstrap standard deviation of σ; `None` without resamples.
    pub sigma_uncertainty_um: Option<f64>,
    pub bootstrap_sigmas: Vec<f64>,
    pub n_bins: usize,
}

impl FitResult {
    pub fn fwhm_uncertainty_um(&self) -> Option<f64> {
        self.sigma_uncertainty_um.map(fwhm)
    }
}

/// Parameters in the unconstrained coordinates the simplex walks in.
fn encode(p: &FitParams) -> [f64; 7] {
    [
        p.sigma_um.ln(),
        p.amplitude.ln(),
        p.baseline,
        p.shift_um[0],
        p.shift_um[1],
        p.rotation_rad,
        p.dz_um,
    ]
}

fn decode(x: &[f64]) -> FitParams {
    FitParams {
        sigma_um: x[0].exp(),
        amplitude: x[1].exp(),
        baseline: x[2],
        shift_um: [x[3], x[4]],
        rotation_rad: x[5],
        dz_um: x[6],
    }
}

fn l1(data: &[f64], model: &[f64], region: &[bool]) -> f64 {
    data.iter()
        .zip(model)
        .zip(region)
        .filter(|(_, r)| **r)
        .map(|((d, m), _)| (d - m).abs())
        .sum()
}

/// L1 distance between `data` and the model at `params` inside `region`.
pub fn objective(ctx: &ModelContext, data: &[f64], region: &[bool], params: &FitParams) -> f64 {
    if !(params.sigma_um.is_finite() && params.amplitude.is_finite()) {
        return f64::INFINITY;
    }
    match ctx.model(params) {
        Ok(m) => l1(data, &m.values, region),
        Err(_) => f64::INFINITY,
    }
}

fn region_of(data: &[f64], opts: &FitOptions) -> Result<Vec<bool>, FitError> {
    let region = match &opts.region {
        Some(r) if r.len() != data.len() => return Err(FitError::RegionMismatch),
        Some(r) => r.clone(),
        None => vec![true; data.len()],
    };
    let inside: f64 = data
        .iter()
        .zip(&region)
        .filter(|(_, r)| **r)
        .map(|(c, _)| c.abs())
        .sum();
    if inside == 0.0 {
        return Err(FitError::EmptyData);
    }
    Ok(region)
}

fn steps(p: &FitParams) -> [f64; 7] {
    [0.2, 0.1, 0.1 * p.amplitude.max(1.0), 0.2, 0.2, 0.01, 1.0]
}

/// Minimises the L1 residual from `init` plus perturbed restarts, then
/// bootstraps σ by resampling the pairs behind `data`.
pub fn fit(
    data: &GhostImage,
    spec: &GratingSpec,
    sys: &OpticalSystem,
    init: &FitParams,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let ctx = ModelContext::new(*spec, *sys, data.binning, opts.supersample)?;
    fit_with_context(&ctx, data, init, opts)
}

/// [`fit`] with a prepared model context, so repeated fits share the
/// traced-map cache.
pub fn fit_with_context(
    ctx: &ModelContext,
    data: &GhostImage,
    init: &FitParams,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let mut result = fit_real(ctx, &data.to_real(), init, opts)?;
    if opts.bootstrap_resamples > 0 {
        let region = region_of(&data.to_real().values, opts)?;
        let s = bootstrap_sigma(ctx, data, &region, &result.params, opts)?;
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        result.sigma_uncertainty_um = Some(var.sqrt());
        result.bootstrap_sigmas = s;
    }
    Ok(result)
}

/// Simplex minimisation only, on real-valued data. No bootstrap.
pub fn fit_real(
    ctx: &ModelContext,
    data: &RealImage,
    init: &FitParams,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    if !init.is_valid() {
        return Err(FitError::InvalidInit);
    }
    if ctx.grid() != data.binning {
        return Err(FitError::RegionMismatch);
    }
    let values = &data.values;
    let region = region_of(values, opts)?;
    let mut full = encode(init);
    if let Some(b) = opts.fixed_baseline {
        full[2] = b;
    }
    let free: Vec<usize> = (0..7)
        .filter(|&i| i != 2 || opts.fixed_baseline.is_none())
        .collect();
    let expand = |x: &[f64]| {
        let mut v = full;
        for (&i, &xi) in free.iter().zip(x) {
            v[i] = xi;
        }
        decode(&v)
    };
    let all_steps = steps(init);
    let x0: Vec<f64> = free.iter().map(|&i| full[i]).collect();
    let step: Vec<f64> = free.iter().map(|&i| all_steps[i]).collect();
    let starts: Vec<Vec<f64>> = std::iter::once(x0.clone())
        .chain((0..opts.restarts as u64).map(|k| {
            let mut rng = substream_rng(opts.seed, Substream::Test, k);
            let mut x = x0.clone();
            for (xi, s) in x.iter_mut().zip(&step) {
                *xi += s * rng.random_range(-1.0..1.0);
            }
            x
        }))
        .collect();
    let runs: Vec<Minimum> = starts
        .par_iter()
        .map(|x| {
            minimize(
                |x| objective(ctx, values, &region, &expand(x)),
                x,
                &step,
                opts.nelder_mead,
            )
        })
        .collect();
    let iterations = runs.iter().map(|m| m.iterations).sum();
    let evaluations = runs.iter().map(|m| m.evaluations).sum();
    // ties keep the earliest start
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.f < a.f { b } else { a })
        .expect("at least one start");
    let params = expand(&best.x);
    Ok(FitResult {
        fwhm_um: fwhm(params.sigma_um),
        params,
        residual_l1: best.f,
        iterations,
        evaluations,
        converged: best.converged,
        sigma_uncertainty_um: None,
        bootstrap_sigmas: Vec::new(),
        n_bins: region.iter().filter(|r| **r).count(),
    })
}

/// Multinomial resample of the pairs behind a count image.
pub fn resample_counts(counts: &[u64], rng: &mut impl Rng) -> Vec<u64> {
    let mut remaining: u64 = counts.iter().sum();
    let mut weight_left = remaining as f64;
    counts
        .iter()
        .map(|&c| {
            if remaining == 0 || c == 0 {
                return 0;
            }
            let p = (c as f64 / weight_left).min(1.0);
            weight_left -= c as f64;
            let k = Binomial::new(remaining, p)
                .expect("valid binomial")
                .sample(rng);
            remaining -= k;
            k
        })
        .collect()
}

/// σ refitted on resampled data with the geometry held at `best`. Only σ,
/// amplitude and (unless fixed) baseline move, so the bin-averaged ideal
/// image is shared.
fn bootstrap_sigma(
    ctx: &ModelContext,
    data: &GhostImage,
    region: &[bool],
    best: &FitParams,
    opts: &FitOptions,
) -> Result<Vec<f64>, FitError> {
    let ideal = ctx.ideal(best)?;
    let run = |k: usize| {
        let mut rng = substream_rng(opts.seed, Substream::Bootstrap, k as u64);
        let counts = resample_counts(&data.counts, &mut rng);
        let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let f = |x: &[f64]| {
            let p = FitParams {
                sigma_um: x[0].exp(),
                amplitude: x[1].exp(),
                baseline: x.get(2).copied().unwrap_or(best.baseline),
                ..*best
            };
            l1(&values, &model_from_ideal(&ideal, &p).values, region)
        };
        let mut x0 = vec![best.sigma_um.ln(), best.amplitude.ln(), best.baseline];
        let mut step = vec![0.1, 0.05, 0.05 * best.amplitude.max(1.0)];
        if opts.fixed_baseline.is_some() {
            x0.pop();
            step.pop();
        }
        minimize(f, &x0, &step, opts.nelder_mead).x[0].exp()
    };
    Ok((0..opts.bootstrap_resamples)
        .into_par_iter()
        .map(run)
        .collect())
}

/// Starting point from image statistics plus a scan of the grating phase.
///
/// Baseline and amplitude come from the 10th and 90th percentiles inside
/// the region unless the baseline is given. The lateral shift is scanned
/// across one period along the grating normal at `sigma_um`.
pub fn initial_guess(
    ctx: &ModelContext,
    data: &GhostImage,
    region: &[bool],
    sigma_um: f64,
    fixed_baseline: Option<f64>,
) -> Result<FitParams, FitError> {
    let mut inside: Vec<f64> = data
        .counts
        .iter()
        .zip(region)
        .filter(|(_, r)| **r)
        .map(|(c, _)| *c as f64)
        .collect();
    if inside.iter().all(|&v| v == 0.0) {
        return Err(FitError::EmptyData);
    }
    inside.sort_by(f64::total_cmp);
    let q = |f: f64| inside[((inside.len() - 1) as f64 * f) as usize];
    let lo = fixed_baseline.unwrap_or(q(0.1));
    let hi = q(0.9);
    let base = FitParams::new(sigma_um, (hi - lo).max(1.0), lo);
    let values: Vec<f64> = data.counts.iter().map(|&c| c as f64).collect();
    let n = ctx.spec().normal();
    let step = ctx.spec().period_um / ctx.magnification();
    const PHASES: usize = 32;
    let scored: Vec<(f64, FitParams)> = (0..PHASES)
        .into_par_iter()
        .map(|k| {
            let t = step * k as f64 / PHASES as f64;
            let p = FitParams {
                shift_um: [t * n[0], t * n[1]],
                ..base
            };
            (objective(ctx, &values, region, &p), p)
        })
        .collect();
    Ok(scored
        .into_iter()
        .reduce(|a, b| if b.0 < a.0 { b } else { a })
        .expect("phases scanned")
        .1)
}

/// Bins well inside the disc that the raw image illuminates: centroid and
/// area-equivalent radius of the occupied bins, shrunk by `margin_um`.
pub fn beam_disc_region(raw: &GhostImage, margin_um: f64) -> Vec<bool> {
    let b: Binning = raw.binning;
    let occupied = raw.counts.iter().filter(|&&c| c > 0).count();
    let c = raw.centroid().unwrap_or([0.0, 0.0]);
    let r = (occupied as f64 * b.bin_um * b.bin_um / std::f64::consts::PI).sqrt() - margin_um;
    b.centers()
        .map(|p| (p[0] - c[0]).hypot(p[1] - c[1]) <= r)
        .collect()
}

/// Model image at `params` evaluated with the fit's bin averaging.
pub fn fitted_model(ctx: &ModelContext, params: &FitParams) -> Result<RealImage, FitError> {
    Ok(ctx.model(params)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{Grating, OpticsPreset};
    use rand_distr::Poisson;

    #[test]
    fn fwhm_values() {
        assert_eq!(fwhm(0.0), 0.0);
        assert!((fwhm(1.0) - 2.35482).abs() < 1e-5);
        assert!((fwhm(0.87) - 2.049).abs() < 1e-3);
        // reported pair (0.87 ± 0.03, 2.03 ± 0.06) agrees within uncertainties
        assert!((fwhm(0.87) - 2.03).abs() < fwhm(0.03).hypot(0.06));
        for a in [0.5, 2.0, 3.7] {
            assert_eq!(fwhm(a * 0.87), a * 0.87 * FWHM_PER_SIGMA);
        }
    }

    #[test]
    fn multinomial_resample_preserves_total() {
        let counts = vec![5, 0, 12, 3, 80, 0, 1];
        let mut rng = substream_rng(1, Substream::Test, 0);
        for _ in 0..20 {
            let r = resample_counts(&counts, &mut rng);
            assert_eq!(r.iter().sum::<u64>(), 101);
            assert_eq!(r[1], 0);
        }
    }

    fn setup() -> (ModelContext, FitParams, Vec<bool>) {
        let spec = Grating {
            period_um: 60.0,
            duty: 0.5,
            normal_angle: 0.0,
            phase_um: 0.0,
        };
        let grid = Binning::default();
        let ctx = ModelContext::new(spec, OpticsPreset::GratingRun.system(), grid, 2).unwrap();
        // about 10⁵ counts over the region
        let truth = FitParams {
            shift_um: [0.4, 0.0],
            ..FitParams::new(0.87, 66.0, 3.0)
        };
        let region = grid.centers().map(|c| c[0].hypot(c[1]) < 14.5).collect();
        (ctx, truth, region)
    }

    fn noisy(ctx: &ModelContext, p: &FitParams, seed: u64) -> GhostImage {
        let m = ctx.model(p).unwrap();
        let mut rng = substream_rng(seed, Substream::Test, 0);
        let mut g = GhostImage::zeros(ctx.grid());
        for (c, v) in g.counts.iter_mut().zip(&m.values) {
            *c = Poisson::new(*v).unwrap().sample(&mut rng) as u64;
        }
        g
    }

    #[test]
    fn noiseless_fixed_point() {
        let (ctx, truth, region) = setup();
        let truth = decode(&encode(&truth));
        let data = ctx.model(&truth).unwrap();
        let opts = FitOptions {
            region: Some(region),
            ..FitOptions::default()
        };
        let r = fit_real(&ctx, &data, &truth, &opts).unwrap();
        assert_eq!(r.residual_l1, 0.0);
        assert_eq!(r.params, truth);
        assert!(r.converged);
    }

    #[test]
    fn generating_point_beats_random_perturbations() {
        let (ctx, truth, region) = setup();
        let values: Vec<f64> = noisy(&ctx, &truth, 3)
            .counts
            .iter()
            .map(|&c| c as f64)
            .collect();
        let f0 = objective(&ctx, &values, &region, &truth);
        let mut rng = substream_rng(4, Substream::Test, 0);
        let s = steps(&truth);
        for _ in 0..100 {
            let mut x = encode(&truth);
            for (xi, si) in x.iter_mut().zip(&s) {
                *xi += si * rng.random_range(-1.0..1.0);
            }
            assert!(objective(&ctx, &values, &region, &decode(&x)) >= f0);
        }
    }

    #[test]
    fn recovers_sigma_from_noisy_synthetic_data() {
        let (ctx, truth, region) = setup();
        let data = noisy(&ctx, &truth, 5);
        let opts = FitOptions {
            region: Some(region.clone()),
            bootstrap_resamples: 0,
            fixed_baseline: Some(truth.baseline),
            ..FitOptions::default()
        };
        let init = initial_guess(&ctx, &data, &region, 1.2, opts.fixed_baseline).unwrap();
        let r = fit_with_context(&ctx, &data, &init, &opts).unwrap();
        assert!((r.params.sigma_um - 0.87).abs() < 0.03, "{:?}", r.params);
        assert_eq!(r.params.baseline, truth.baseline);
    }

    #[test]
    fn rejects_bad_init_and_empty_data() {
        let (ctx, truth, _) = setup();
        let data = GhostImage::zeros(ctx.grid());
        let bad = FitParams {
            sigma_um: 0.0,
            ..truth
        };
        assert_eq!(
            fit_with_context(&ctx, &data, &bad, &FitOptions::default()),
            Err(FitError::InvalidInit)
        );
        assert_eq!(
            fit_with_context(&ctx, &data, &truth, &FitOptions::default()),
            Err(FitError::EmptyData)
        );
    }

    fn recover(
        truth: &FitParams,
        data: &GhostImage,
        region: &[bool],
        ctx: &ModelContext,
        resamples: usize,
    ) -> FitResult {
        let opts = FitOptions {
            region: Some(region.to_vec()),
            bootstrap_resamples: resamples,
            fixed_baseline: Some(truth.baseline),
            ..FitOptions::default()
        };
        let init = initial_guess(ctx, data, region, 1.2, opts.fixed_baseline).unwrap();
        fit_with_context(ctx, data, &init, &opts).unwrap()
    }

    #[test]
    fn recovers_broad_sigma() {
        let (ctx, truth, region) = setup();
        let truth = FitParams {
            sigma_um: 1.45,
            ..truth
        };
        let r = recover(&truth, &noisy(&ctx, &truth, 6), &region, &ctx, 0);
        assert!((r.params.sigma_um - 1.45).abs() < 0.05, "{:?}", r.params);
    }

    #[test]
    fn scaling_counts_leaves_sigma() {
        let (ctx, truth, region) = setup();
        let data = noisy(&ctx, &truth, 7);
        let mut scaled = data.clone();
        scaled.counts.iter_mut().for_each(|c| *c *= 10);
        let a = recover(&truth, &data, &region, &ctx, 0);
        let scaled_truth = FitParams {
            baseline: truth.baseline * 10.0,
            ..truth
        };
        let b = recover(&scaled_truth, &scaled, &region, &ctx, 0);
        assert!(
            (a.params.sigma_um / b.params.sigma_um - 1.0).abs() < 0.01,
            "{} vs {}",
            a.params.sigma_um,
            b.params.sigma_um
        );
    }

    #[test]
    fn bootstrap_spread_is_plausible() {
        let (ctx, truth, region) = setup();
        let r = recover(&truth, &noisy(&ctx, &truth, 8), &region, &ctx, 20);
        let s = r.sigma_uncertainty_um.unwrap();
        assert_eq!(r.bootstrap_sigmas.len(), 20);
        // about 10⁵ counts pin σ to the 10 nm scale
        assert!(s > 1e-3 && s < 0.03, "{s}");
        assert!((r.fwhm_uncertainty_um().unwrap() - FWHM_PER_SIGMA * s).abs() < 1e-12);
    }
}
