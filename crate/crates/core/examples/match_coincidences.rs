//! Windowed coincidence matching, accidental estimate and the parallel
//! matcher's agreement with the sequential one.
//!
//! ```text
//! cargo run --release --example match_coincidences
//! ```

use epgi::coincidence::{
    accidental_rate, estimate_offset, match_coincidences, match_coincidences_parallel,
    time_difference_histogram, CoincidenceWindow, HistogramRange,
};
use epgi::optics::{Mask, OpticsPreset};
use epgi::source::{simulate_run, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SimConfig {
        run_duration_s: 0.1,
        ..SimConfig::cat_run()
    };
    let sim = simulate_run(&cfg, Some(&Mask::cat(2.0)?), &OpticsPreset::CatRun.system())?;
    let (e, p) = (&sim.electrons, &sim.photons);

    let h = time_difference_histogram(e, p, HistogramRange::default_g2());
    let offset = estimate_offset(&h)?.offset_ps.round() as i64;
    let w = CoincidenceWindow::new(offset, CoincidenceWindow::DEFAULT_HALF_WIDTH_PS);

    let pairs = match_coincidences(e, p, w);
    let acc = accidental_rate(&h, w)?;
    let parallel = match_coincidences_parallel(e, p, w, 16);
    assert_eq!(parallel, pairs);

    let truly_paired = sim.truth.true_pairs().filter_map(|r| r.electron_index.zip(r.photon_index));
    let truth: std::collections::HashSet<(u64, u64)> = truly_paired.collect();
    let hits = pairs.pairs.iter().filter(|x| truth.contains(&(x.electron, x.photon))).count();

    println!("window          {} ± {} ps", w.offset_ps, w.half_width_ps);
    println!("pairs           {}", pairs.len());
    println!("  true          {hits} of {} recorded true pairs", truth.len());
    println!("  accidental    {} (sideband estimate {:.0} ± {:.0})", pairs.len() - hits, acc.expected_pairs, acc.sigma);
    println!("parallel matcher agrees on all {} pairs", parallel.len());
    Ok(())
}
