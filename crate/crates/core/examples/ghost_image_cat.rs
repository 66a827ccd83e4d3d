//! Ghost image of the cat mask: raw electron image, coincidence image,
//! accidental subtraction and overlap with the traced mask.
//!
//! ```text
//! cargo run --release --example ghost_image_cat -- [out_dir]
//! ```

use std::path::PathBuf;

use epgi::coincidence::{
    accidental_rate, estimate_offset, match_coincidences, time_difference_histogram,
    CoincidenceWindow, HistogramRange,
};
use epgi::io;
use epgi::optics::{Mask, OpticsPreset};
use epgi::reconstruction::{
    accumulate_ghost_image, beam_region, ghost_dice, ground_truth_mask, raw_image,
    subtract_accidentals, Binning,
};
use epgi::source::{simulate_run, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/ghost_image_cat".into()));
    std::fs::create_dir_all(&out)?;

    let cfg = SimConfig::cat_run();
    let mask = Mask::cat(2.0)?;
    let sys = OpticsPreset::CatRun.system();
    let sim = simulate_run(&cfg, Some(&mask), &sys)?;

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
    let clean = subtract_accidentals(&ghost, &raw, acc.expected_pairs)?;

    let truth = ground_truth_mask(&mask, &sys, b, &cfg.beam)?;
    let region = beam_region(b, &cfg.beam);
    println!("{} pairs, {:.0} expected accidentals", pairs.len(), acc.expected_pairs);
    println!("Dice before subtraction {:.3}", ghost_dice(&ghost.to_real(), &truth, &region));
    println!("Dice after subtraction  {:.3}", ghost_dice(&clean, &truth, &region));

    io::write_ghost(&out.join("raw.pgm"), &raw, None)?;
    io::write_ghost(&out.join("ghost.pgm"), &ghost, None)?;
    std::fs::write(out.join("ghost_view.pgm"), io::image::render_pgm(&clean, None))?;
    println!("images written to {}", out.display());
    Ok(())
}
