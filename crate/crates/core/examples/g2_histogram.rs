//! Time-difference histogram, g² and the coincidence peak position.
//!
//! ```text
//! cargo run --release --example g2_histogram
//! ```

use epgi::coincidence::{estimate_offset, g2, time_difference_histogram, HistogramRange};
use epgi::optics::{Mask, OpticsPreset};
use epgi::source::{simulate_run, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SimConfig {
        run_duration_s: 0.1,
        ..SimConfig::cat_run()
    };
    let sim = simulate_run(&cfg, Some(&Mask::cat(2.0)?), &OpticsPreset::CatRun.system())?;

    let h = time_difference_histogram(&sim.electrons, &sim.photons, HistogramRange::default_g2());
    let g = g2(&h)?;
    let peak = estimate_offset(&h)?;
    println!(
        "peak at tau = {:.0} ± {:.0} ps (injected {:.0} ps)",
        peak.offset_ps, peak.uncertainty_ps, -cfg.fixed_offset_ps
    );
    println!("background {:.1} counts/bin, peak bin {}", peak.background_per_bin, peak.peak_counts);

    // coarse text plot around the peak
    let max = g.g2.iter().cloned().fold(0.0, f64::max);
    for (tau, v) in g.tau_ps.iter().zip(&g.g2) {
        if (tau - peak.offset_ps).abs() <= 100_000.0 {
            let bar = "#".repeat((50.0 * v / max).round() as usize);
            println!("{:>9.1} ns  g2 {v:6.2}  {bar}", tau / 1e3);
        }
    }
    Ok(())
}
