//! Every stage of a configured run, writing the artifact tree that the
//! `epgi` binary produces.
//!
//! ```text
//! cargo run --release --example full_pipeline -- [cat-run|grating-run] [out_dir]
//! ```

use epgi::config::RunConfig;
use epgi::io;
use epgi::pipeline::{G2Summary, MatchSummary, Pipeline, ReconstructSummary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "grating-run".into());
    let mut cfg = RunConfig::preset(&preset)?;
    if let Some(dir) = args.next() {
        cfg.run.out_dir = dir.into();
    }
    let p = Pipeline::new(cfg)?;
    p.run_all()?;

    let g: G2Summary = io::read_toml(&p.path("g2.toml"), "g2 summary")?;
    let m: MatchSummary = io::read_toml(&p.path("match.toml"), "match summary")?;
    let r: ReconstructSummary = io::read_toml(&p.path("reconstruct.toml"), "reconstruct summary")?;
    println!("config hash   {}", p.provenance().config_hash);
    println!("peak          {:.0} ± {:.0} ps, peak/background {:.1}", g.offset_ps, g.offset_uncertainty_ps, g.peak_to_background);
    println!("pairs         {} ({:.0} accidental)", m.pairs, m.accidental_pairs);
    println!("Dice          {:.3}", r.dice);
    if p.config().fit.enabled {
        let f = io::read_report(&p.path("fit_report.toml"))?;
        println!("FWHM          {:.3} ± {:.3} um", f.fwhm_um, f.fwhm_uncertainty_um.unwrap_or(f64::NAN));
    }
    let mut files: Vec<_> = std::fs::read_dir(p.out_dir())?.filter_map(|e| e.ok()).map(|e| e.file_name()).collect();
    files.sort();
    println!("artifacts in {}:", p.out_dir().display());
    for f in files {
        println!("  {}", f.to_string_lossy());
    }
    Ok(())
}
