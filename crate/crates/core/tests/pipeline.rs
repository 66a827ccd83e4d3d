use std::path::{Path, PathBuf};

use epgi::coincidence::match_coincidences;
use epgi::config::{MaskSection, RunConfig};
use epgi::event::{ElectronEvent, PhotonEvent, ValidatedStream};
use epgi::io;
use epgi::optics::Mask;
use epgi::fit::blur;
use epgi::reconstruction::{
    beam_region, binarize, ghost_dice, ground_truth_mask, RealImage, METRIC_SMOOTHING_UM,
};
use epgi::pipeline::{
    MatchSummary, Pipeline, PipelineError, ReconstructSummary, SimulateSummary, Stage, StageError,
};

fn short_run(preset: &str, out: &Path, seconds: f64) -> RunConfig {
    let mut cfg = RunConfig::preset(preset).unwrap();
    cfg.run.out_dir = out.to_path_buf();
    cfg.source.run_duration_s = seconds;
    cfg
}

fn run_stages(p: &Pipeline, stages: &[Stage]) {
    for &s in stages {
        p.run(s).unwrap_or_else(|e| panic!("{}: {e}", s.name()));
    }
}

const TO_RECONSTRUCT: [Stage; 4] = [Stage::Simulate, Stage::G2, Stage::Match, Stage::Reconstruct];

#[test]
fn artifacts_agree_with_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(short_run("cat-run", dir.path(), 0.05)).unwrap();
    run_stages(&p, &TO_RECONSTRUCT);

    let sim: SimulateSummary = io::read_toml(&p.path("simulate.toml"), "simulate").unwrap();
    let e: ValidatedStream<ElectronEvent> = io::read_events(&p.path("electrons.epgi")).unwrap();
    let ph: ValidatedStream<PhotonEvent> = io::read_events(&p.path("photons.epgi")).unwrap();
    assert_eq!(e.len() as u64, sim.electrons);
    assert_eq!(ph.len() as u64, sim.photons);
    assert_eq!(sim.seed, p.config().run.seed);

    let m: MatchSummary = io::read_toml(&p.path("match.toml"), "match").unwrap();
    let pairs = io::read_pairs(&p.path("pairs.epgp")).unwrap();
    assert_eq!(pairs.len() as u64, m.pairs);
    let w = pairs.window.expect("window recorded");
    assert_eq!(w.half_width_ps, m.window_half_width_ps);
    assert_eq!(match_coincidences(&e, &ph, w), pairs);

    let r: ReconstructSummary = io::read_toml(&p.path("reconstruct.toml"), "reconstruct").unwrap();
    let ghost = io::read_ghost(&p.path("ghost.pgm")).unwrap().0;
    assert_eq!(ghost.total(), r.pairs_in_image);
    assert!(r.pairs_in_image <= r.pairs);
}

#[test]
fn manifest_hashes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(short_run("cat-run", dir.path(), 0.02)).unwrap();
    run_stages(&p, &[Stage::Simulate, Stage::G2]);
    let manifest: toml::Table = io::read_toml(&p.path("manifest.toml"), "manifest").unwrap();
    let files = manifest["files"].as_table().expect("files table");
    for name in ["electrons.epgi", "photons.epgi", "histogram.csv", "g2.csv", "config.toml"] {
        let digest = files[name].as_str().unwrap();
        let bytes = std::fs::read(p.path(name)).unwrap();
        assert_eq!(digest, sha256_hex(&bytes), "{name}");
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn stage_without_inputs_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(short_run("cat-run", dir.path(), 0.01)).unwrap();
    let err = p.run(Stage::Match).unwrap_err();
    assert!(matches!(err, PipelineError::Stage { stage: Stage::Match, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn fitting_a_non_grating_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(short_run("cat-run", dir.path(), 0.01)).unwrap();
    run_stages(&p, &TO_RECONSTRUCT);
    let err = p.run(Stage::Fit).unwrap_err();
    assert!(
        matches!(err, PipelineError::Stage { source: StageError::NotAGrating, .. }),
        "{err}"
    );
}

#[test]
fn invalid_config_is_a_config_error() {
    let mut cfg = RunConfig::preset("cat-run").unwrap();
    cfg.source.pair_yield = 1.5;
    let err = Pipeline::new(cfg).err().expect("rejected");
    assert_eq!(err.exit_code(), 2);
    let no_conv = PipelineError::NoConvergence {
        iterations: 10,
        report: PathBuf::from("fit_report.toml"),
    };
    assert_eq!(no_conv.exit_code(), 4);
}

#[test]
fn seed_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let a = Pipeline::new(short_run("cat-run", &dir.path().join("a"), 0.01)).unwrap();
    let mut cfg = short_run("cat-run", &dir.path().join("b"), 0.01);
    cfg.run.seed += 1;
    let b = Pipeline::new(cfg).unwrap();
    run_stages(&a, &[Stage::Simulate]);
    run_stages(&b, &[Stage::Simulate]);
    let ea = std::fs::read(a.path("electrons.epgi")).unwrap();
    let eb = std::fs::read(b.path("electrons.epgi")).unwrap();
    assert_ne!(ea, eb);
}

/// Disc of radius `r` (µm) centred at `c` in the mask plane.
fn disc_mask(dir: &Path, name: &str, c: [f64; 2], r: f64) -> PathBuf {
    let n = 400;
    let m = Mask::from_fn("disc", n, n, DISC_PITCH_UM, |u, v| (u - c[0]).hypot(v - c[1]) <= r).unwrap();
    let path = dir.join(name);
    io::write_mask(&path, &m).unwrap();
    path
}

/// Centroid of the pixels above half the maximum, so a residual floor does
/// not pull it toward the beam centre.
fn bright_centroid(img: &RealImage) -> [f64; 2] {
    let max = img.values.iter().cloned().fold(f64::MIN, f64::max);
    let bright = img.values.iter().map(|&v| if v > 0.5 * max { v } else { 0.0 }).collect();
    RealImage { values: bright, ..img.clone() }.centroid().unwrap()
}

/// Centroid of the smoothed, Otsu-binarised image inside the beam.
fn binary_centroid(img: &RealImage, cfg: &RunConfig) -> [f64; 2] {
    let region = beam_region(img.binning, &cfg.sim_config().unwrap().beam);
    let on = binarize(&blur(img, METRIC_SMOOTHING_UM), &region);
    let pts: Vec<[f64; 2]> = img.binning.centers().zip(&on).filter_map(|(c, &b)| b.then_some(c)).collect();
    let n = pts.len() as f64;
    [pts.iter().map(|c| c[0]).sum::<f64>() / n, pts.iter().map(|c| c[1]).sum::<f64>() / n]
}

/// Subtracted ghost image of an 80 µm disc mask centred at `c`.
fn disc_run(dir: &Path, tag: &str, c: [f64; 2]) -> (RealImage, RunConfig) {
    let mut cfg = short_run("cat-run", &dir.join(tag), 0.2);
    cfg.mask = MaskSection::File {
        path: disc_mask(dir, &format!("{tag}.pbm"), c, 80.0),
    };
    let p = Pipeline::new(cfg.clone()).unwrap();
    run_stages(&p, &TO_RECONSTRUCT);
    (io::read_real(&p.path("ghost_subtracted.epgr")).unwrap().0, cfg)
}

const MAGNIFICATION: f64 = 19.0;
const DISC_PITCH_UM: f64 = 2.0;

#[test]
fn translating_the_mask_moves_the_ghost_image() {
    let dir = tempfile::tempdir().unwrap();
    let shift = [95.0, -57.0];
    let (a, _) = disc_run(dir.path(), "centred", [0.0, 0.0]);
    let (b, _) = disc_run(dir.path(), "shifted", shift);
    let (a, b) = (bright_centroid(&a), bright_centroid(&b));
    // both image axes are inverted relative to the sample
    let expected = [-shift[0] / MAGNIFICATION, -shift[1] / MAGNIFICATION];
    for k in 0..2 {
        assert!(((b[k] - a[k]) - expected[k]).abs() < 0.3, "axis {k}: {a:?} -> {b:?}, expected shift {expected:?}");
    }
}

#[test]
fn one_mask_pixel_shift_moves_binary_centroid_by_pitch_over_m() {
    let dir = tempfile::tempdir().unwrap();
    let (a, cfg) = disc_run(dir.path(), "centred", [0.0, 0.0]);
    let (b, _) = disc_run(dir.path(), "nudged", [DISC_PITCH_UM, 0.0]);
    let bin = cfg.reconstruct.bin_um;
    let (ca, cb) = (binary_centroid(&a, &cfg), binary_centroid(&b, &cfg));
    let expected = -DISC_PITCH_UM / MAGNIFICATION;
    assert!(((cb[0] - ca[0]) - expected).abs() <= 2.0 * bin, "{ca:?} -> {cb:?}");
    assert!((cb[1] - ca[1]).abs() <= 2.0 * bin, "{ca:?} -> {cb:?}");
}

#[test]
fn subtraction_does_not_hurt_dice() {
    let dir = tempfile::tempdir().unwrap();
    // full preset length; on much shorter runs the clamp noise can cost a few 1e-4
    let mut cfg = RunConfig::preset("cat-run").unwrap();
    cfg.run.out_dir = dir.path().to_path_buf();
    let p = Pipeline::new(cfg.clone()).unwrap();
    run_stages(&p, &TO_RECONSTRUCT);
    let r: ReconstructSummary = io::read_toml(&p.path("reconstruct.toml"), "reconstruct").unwrap();
    let ghost = io::read_ghost(&p.path("ghost.pgm")).unwrap().0;
    let beam = cfg.sim_config().unwrap().beam;
    let region = beam_region(ghost.binning, &beam);
    let truth = ground_truth_mask(&cfg.mask().unwrap(), &cfg.optical_system().unwrap(), ghost.binning, &beam).unwrap();
    let before = ghost_dice(&ghost.to_real(), &truth, &region);
    assert!(r.dice >= before, "after {} < before {before}", r.dice);
}
