//! Resolution from a grating ghost image: simulate, match, then fit the
//! blurred and distorted grating model.
//!
//! ```text
//! cargo run --release --example resolution_fit
//! ```

use epgi::coincidence::{
    accidental_rate, estimate_offset, match_coincidences, time_difference_histogram,
    CoincidenceWindow, HistogramRange,
};
use epgi::fit::{beam_disc_region, fit_with_context, initial_guess, FitOptions, ModelContext};
use epgi::optics::{Grating, Mask, OpticsPreset};
use epgi::pipeline::accidental_floor;
use epgi::reconstruction::{accumulate_ghost_image, raw_image, Binning};
use epgi::source::{simulate_run, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grating = Grating {
        period_um: 60.0,
        duty: 0.5,
        normal_angle: 0.0,
        phase_um: 0.0,
    };
    let cfg = SimConfig::grating_run();
    let sys = OpticsPreset::GratingRun.system();
    let sim = simulate_run(&cfg, Some(&Mask::grating(&grating, 640.0, 1.0)?), &sys)?;

    let h = time_difference_histogram(&sim.electrons, &sim.photons, HistogramRange::default_g2());
    let w = CoincidenceWindow::new(
        estimate_offset(&h)?.offset_ps.round() as i64,
        CoincidenceWindow::DEFAULT_HALF_WIDTH_PS,
    );
    let pairs = match_coincidences(&sim.electrons, &sim.photons, w);
    let acc = accidental_rate(&h, w)?;

    let b = Binning::default();
    let raw = raw_image(&sim.electrons, b);
    let ghost = accumulate_ghost_image(&pairs, &sim.electrons, b)?;
    let region = beam_disc_region(&raw, 1.0);
    let floor = accidental_floor(&raw, &region, acc.expected_pairs)?;

    let opts = FitOptions {
        region: Some(region.clone()),
        fixed_baseline: Some(floor),
        bootstrap_resamples: 10,
        seed: cfg.seed,
        ..FitOptions::default()
    };
    let ctx = ModelContext::new(grating, sys, b, opts.supersample)?;
    let init = initial_guess(&ctx, &ghost, &region, 1.2, Some(floor))?;
    let r = fit_with_context(&ctx, &ghost, &init, &opts)?;

    println!("pairs {} (accidental floor {floor:.3} per bin)", pairs.len());
    println!(
        "sigma {:.3} ± {:.3} um, FWHM {:.3} ± {:.3} um (generated with sigma {} um)",
        r.params.sigma_um,
        r.sigma_uncertainty_um.unwrap_or(f64::NAN),
        r.fwhm_um,
        r.fwhm_uncertainty_um().unwrap_or(f64::NAN),
        cfg.correlation_sigma_um
    );
    println!(
        "shift ({:.2}, {:.2}) um, rotation {:.4} rad, height {:.2} um",
        r.params.shift_um[0], r.params.shift_um[1], r.params.rotation_rad, r.params.dz_um
    );
    println!("{} iterations, converged: {}", r.iterations, r.converged);
    Ok(())
}
