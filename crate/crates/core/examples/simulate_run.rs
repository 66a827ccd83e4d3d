//! Generate a short cat-mask acquisition and summarise the ground truth.
//!
//! ```text
//! cargo run --release --example simulate_run
//! ```

use epgi::optics::{Mask, OpticsPreset};
use epgi::source::{simulate_run, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SimConfig {
        run_duration_s: 0.05,
        ..SimConfig::cat_run()
    };
    let mask = Mask::cat(2.0)?;
    let sim = simulate_run(&cfg, Some(&mask), &OpticsPreset::CatRun.system())?;

    let truth = &sim.truth;
    let transmitted = truth.pairs.iter().filter(|p| p.transmitted).count();
    println!("seed                 {}", cfg.seed);
    println!("electrons emitted    {}", truth.electrons_emitted);
    println!("electrons recorded   {}", sim.electrons.len());
    println!("  of which unpaired  {}", truth.background_electrons);
    println!("photons generated    {}", truth.pairs.len());
    println!("  through the mask   {transmitted}");
    println!("photons detected     {}", sim.photons.len());
    println!("  dark counts        {}", truth.dark_counts);
    println!("true pairs recorded  {}", truth.true_pairs().count());

    let first = sim.electrons.events.iter().take(3);
    for e in first {
        println!("electron t = {} ps at ({:.2}, {:.2}) um", e.t, e.x, e.y);
    }
    Ok(())
}
