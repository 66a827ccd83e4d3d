//! Parabolic mirror reflection and the sample → mask-plane mapping.
//!
//! ```text
//! cargo run --release --example raytrace_mirror
//! ```

use epgi::optics::{
    back_project, effective_magnification, reflect, trace_to_image, OpticsPreset, Ray, Vec3,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for preset in [OpticsPreset::GratingRun, OpticsPreset::CatRun] {
        let sys = preset.system();
        println!(
            "{}: lens to image {:.2} mm, magnification {:.4}",
            preset.name(),
            sys.lens_to_image_mm,
            effective_magnification(&sys)?
        );
    }

    let sys = OpticsPreset::CatRun.system();
    let m = sys.mirror;
    println!("\nrays from the focus leave along the collection axis:");
    for deg in [10.0f64, 20.0, 30.0, 35.0] {
        let th = deg.to_radians();
        let ray = Ray::new(Vec3::default(), Vec3::new(th.sin(), 0.0, th.cos()));
        let out = reflect(&ray, &m)?;
        println!("  {deg:>4.0} deg from the beam axis -> exit angle {:.1e} rad", out.direction().angle_to(m.axis()));
    }

    println!("\nsample point (um) -> mask plane (um) -> back (um):");
    let mag = effective_magnification(&sys)?;
    for p in [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [10.0, -10.0], [15.0, 0.0]] {
        let q = trace_to_image(p, &sys)?;
        let b = back_project(q, &sys)?;
        let dist = (q[0] + mag * p[0]).hypot(q[1] + mag * p[1]);
        println!(
            "  ({:>5.1}, {:>5.1}) -> ({:>8.2}, {:>8.2}), distortion {dist:.3}, back ({:.4}, {:.4})",
            p[0], p[1], q[0], q[1], b[0], b[1]
        );
    }
    Ok(())
}
