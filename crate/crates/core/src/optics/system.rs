//! Sample plane → mask image plane mapping through mirror and lens.
//!
//! The transform is defined by the chief ray: of all rays an emission point
//! sends to the mirror, the one whose reflection passes through the centre of
//! the selection aperture. The aperture sits at the lens, so the chief ray
//! crosses the lens on axis and the thin-lens kick vanishes for it; the image
//! is where it meets the image plane `lens_to_image` further on.
//!
//! Image coordinates `(u, v)` are transverse to the collection axis: `u` along
//! the beam direction z, `v` along y. With that choice the sample x axis maps
//! onto `u` and the sample y axis onto `v`, both inverted.

use thiserror::Error;

use super::mirror::{reflect_direction, ParabolicMirror, Ray, ReflectError, Vec3};

/// Sample-plane points must satisfy `|p| < TRACEABLE_FRACTION · f`.
pub const TRACEABLE_FRACTION: f64 = 0.25;

const CHIEF_TOL_UM: f64 = 1e-8;
const CHIEF_MAX_ITER: usize = 60;
const BACK_TOL_UM: f64 = 1e-4;
const BACK_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum OpticsError {
    #[error("point lies outside the traceable region of the optics")]
    OutOfRange,
    #[error("chief ray solve failed: {0}")]
    ChiefRay(ReflectError),
    #[error("inverse mapping did not converge (best residual {0:.3e} µm)")]
    NoConvergence(f64),
    #[error("invalid optical system: {0}")]
    Invalid(&'static str),
}

/// Named configurations matching the two reported demagnifications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpticsPreset {
    /// 16× between mask plane and sample plane.
    GratingRun,
    /// 19× between mask plane and sample plane.
    CatRun,
}

impl OpticsPreset {
    pub fn magnification(self) -> f64 {
        match self {
            OpticsPreset::GratingRun => 16.0,
            OpticsPreset::CatRun => 19.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpticsPreset::GratingRun => "grating-run",
            OpticsPreset::CatRun => "cat-run",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "grating-run" => Some(OpticsPreset::GratingRun),
            "cat-run" => Some(OpticsPreset::CatRun),
            _ => None,
        }
    }

    pub fn system(self) -> OpticalSystem {
        OpticalSystem::solve_for_magnification(
            ParabolicMirror::new(750.0, 0.58, 300.0),
            150.0,
            DEFAULT_MIRROR_TO_LENS_MM,
            2.0,
            self.magnification(),
        )
        .expect("preset geometry is valid")
    }
}

/// Default mirror → lens distance. Only the resulting demagnification is
/// pinned by measurement; this value sets how strongly the mirror distorts.
pub const DEFAULT_MIRROR_TO_LENS_MM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalSystem {
    pub mirror: ParabolicMirror,
    pub lens_focal_length_mm: f64,
    pub mirror_to_lens_mm: f64,
    pub lens_to_image_mm: f64,
    /// Radius of the angle-selecting aperture at the lens.
    pub selection_aperture_radius_mm: f64,
}

impl OpticalSystem {
    pub fn validate(&self) -> Result<(), OpticsError> {
        if !self.mirror.is_valid() {
            return Err(OpticsError::Invalid("mirror parameters"));
        }
        let positive = [
            self.lens_focal_length_mm,
            self.mirror_to_lens_mm,
            self.lens_to_image_mm,
            self.selection_aperture_radius_mm,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(OpticsError::Invalid("distances must be positive"));
        }
        Ok(())
    }

    /// Picks `lens_to_image` so that [`effective_magnification`] equals `target`.
    pub fn solve_for_magnification(
        mirror: ParabolicMirror,
        lens_focal_length_mm: f64,
        mirror_to_lens_mm: f64,
        selection_aperture_radius_mm: f64,
        target: f64,
    ) -> Result<Self, OpticsError> {
        let mut sys = OpticalSystem {
            mirror,
            lens_focal_length_mm,
            mirror_to_lens_mm,
            lens_to_image_mm: 1.0,
            selection_aperture_radius_mm,
        };
        sys.validate()?;
        if !(target > 1.0 && target.is_finite()) {
            return Err(OpticsError::Invalid("target magnification must exceed 1"));
        }
        // Image height grows linearly with the image distance, so one
        // rescale lands on target; the second pass absorbs the tiny lens kick.
        for _ in 0..2 {
            let m = effective_magnification(&sys)?;
            sys.lens_to_image_mm *= target / m;
        }
        Ok(sys)
    }

    fn chief_point(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, 2.0 * self.mirror.focal_length)
    }

    fn lens_x(&self) -> f64 {
        self.chief_point().x + self.mirror_to_lens_mm * 1e3
    }

    /// Transverse offset from the axis line at the lens plane of the ray
    /// from `p` reflected at mirror point `(ym, zm)`, plus that ray.
    fn lens_residual(&self, p: Vec3, ym: f64, zm: f64) -> ([f64; 2], Ray) {
        let hit = self.mirror.surface_point(ym, zm);
        let d = (hit - p).normalized();
        let out = Ray::new(hit, reflect_direction(d, self.mirror.normal_at(hit)));
        let dir = out.direction();
        let t = (self.lens_x() - hit.x) / dir.x;
        let at_lens = out.at(t);
        let c = self.chief_point();
        ([at_lens.y - c.y, at_lens.z - c.z], out)
    }

    /// The chief ray from `p`, after reflection.
    pub fn chief_ray(&self, p: Vec3) -> Result<Ray, OpticsError> {
        let c = self.chief_point();
        let (mut ym, mut zm) = (c.y, c.z);
        let h = 1e-3;
        for _ in 0..CHIEF_MAX_ITER {
            let (r, ray) = self.lens_residual(p, ym, zm);
            if !(r[0].is_finite() && r[1].is_finite()) || ray.direction().x <= 0.0 {
                return Err(OpticsError::ChiefRay(ReflectError::NoIntersection));
            }
            if r[0].abs().max(r[1].abs()) < CHIEF_TOL_UM {
                return Ok(ray);
            }
            let (ry, _) = self.lens_residual(p, ym + h, zm);
            let (rz, _) = self.lens_residual(p, ym, zm + h);
            let j = [
                [(ry[0] - r[0]) / h, (rz[0] - r[0]) / h],
                [(ry[1] - r[1]) / h, (rz[1] - r[1]) / h],
            ];
            let step = solve2(j, r).ok_or(OpticsError::ChiefRay(ReflectError::NoIntersection))?;
            ym -= step[0];
            zm -= step[1];
        }
        Err(OpticsError::ChiefRay(ReflectError::NoIntersection))
    }

    /// Image-plane position of an emission point given in mirror coordinates.
    pub fn trace_point(&self, p: Vec3) -> Result<[f64; 2], OpticsError> {
        let limit = TRACEABLE_FRACTION * self.mirror.focal_length;
        if !(p.norm() < limit) {
            return Err(OpticsError::OutOfRange);
        }
        let ray = self.chief_ray(p)?;
        let d = ray.direction();
        let t = (self.lens_x() - ray.origin().x) / d.x;
        let at_lens = ray.at(t);
        let c = self.chief_point();
        let (hy, hz) = (at_lens.y - c.y, at_lens.z - c.z);
        let f_lens = self.lens_focal_length_mm * 1e3;
        let sy = d.y / d.x - hy / f_lens;
        let sz = d.z / d.x - hz / f_lens;
        let l2 = self.lens_to_image_mm * 1e3;
        Ok([hz + l2 * sz, hy + l2 * sy])
    }
}

fn solve2(j: [[f64; 2]; 2], r: [f64; 2]) -> Option<[f64; 2]> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    Some([
        (j[1][1] * r[0] - j[0][1] * r[1]) / det,
        (j[0][0] * r[1] - j[1][0] * r[0]) / det,
    ])
}

/// Maps a sample-plane point (µm, focus at origin) to the image plane (µm).
pub fn trace_to_image(point: [f64; 2], sys: &OpticalSystem) -> Result<[f64; 2], OpticsError> {
    sys.trace_point(Vec3::new(point[0], point[1], 0.0))
}

/// Inverse of [`trace_to_image`] by damped Newton with a finite-difference
/// Jacobian.
pub fn back_project(image_point: [f64; 2], sys: &OpticalSystem) -> Result<[f64; 2], OpticsError> {
    let m = effective_magnification(sys)?;
    let mut q = [-image_point[0] / m, -image_point[1] / m];
    let resid = |q: [f64; 2]| -> Result<([f64; 2], f64), OpticsError> {
        let w = trace_to_image(q, sys)?;
        let r = [w[0] - image_point[0], w[1] - image_point[1]];
        Ok((r, r[0].hypot(r[1])))
    };
    let (mut r, mut norm) = resid(q)?;
    let h = 1e-4;
    for _ in 0..BACK_MAX_ITER {
        if norm < BACK_TOL_UM * 1e-2 {
            return Ok(q);
        }
        let wx = trace_to_image([q[0] + h, q[1]], sys)?;
        let wy = trace_to_image([q[0], q[1] + h], sys)?;
        let w0 = [r[0] + image_point[0], r[1] + image_point[1]];
        let j = [
            [(wx[0] - w0[0]) / h, (wy[0] - w0[0]) / h],
            [(wx[1] - w0[1]) / h, (wy[1] - w0[1]) / h],
        ];
        let step = solve2(j, r).ok_or(OpticsError::NoConvergence(norm))?;
        let mut lambda = 1.0;
        loop {
            let cand = [q[0] - lambda * step[0], q[1] - lambda * step[1]];
            match resid(cand) {
                Ok((rc, nc)) if nc < norm => {
                    q = cand;
                    r = rc;
                    norm = nc;
                    break;
                }
                _ if lambda > 1e-6 => lambda *= 0.5,
                _ => {
                    return if norm < BACK_TOL_UM {
                        Ok(q)
                    } else {
                        Err(OpticsError::NoConvergence(norm))
                    }
                }
            }
        }
    }
    if norm < BACK_TOL_UM {
        Ok(q)
    } else {
        Err(OpticsError::NoConvergence(norm))
    }
}

/// Local demagnification factor at the focus: central differences of the
/// forward map along each sample axis, averaged.
pub fn effective_magnification(sys: &OpticalSystem) -> Result<f64, OpticsError> {
    let h = 0.01;
    let xp = trace_to_image([h, 0.0], sys)?;
    let xm = trace_to_image([-h, 0.0], sys)?;
    let yp = trace_to_image([0.0, h], sys)?;
    let ym = trace_to_image([0.0, -h], sys)?;
    let mx = ((xp[0] - xm[0]) / (2.0 * h)).abs();
    let my = ((yp[1] - ym[1]) / (2.0 * h)).abs();
    Ok(0.5 * (mx + my))
}

/// Finite-difference Jacobian of the forward map at a sample-plane point.
pub fn jacobian(
    point: [f64; 2],
    sys: &OpticalSystem,
    h: f64,
) -> Result<[[f64; 2]; 2], OpticsError> {
    let xp = trace_to_image([point[0] + h, point[1]], sys)?;
    let xm = trace_to_image([point[0] - h, point[1]], sys)?;
    let yp = trace_to_image([point[0], point[1] + h], sys)?;
    let ym = trace_to_image([point[0], point[1] - h], sys)?;
    Ok([
        [(xp[0] - xm[0]) / (2.0 * h), (yp[0] - ym[0]) / (2.0 * h)],
        [(xp[1] - xm[1]) / (2.0 * h), (yp[1] - ym[1]) / (2.0 * h)],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focus_maps_to_centre() {
        let sys = OpticsPreset::GratingRun.system();
        let w = trace_to_image([0.0, 0.0], &sys).unwrap();
        assert!(w[0].abs() < 1e-6 && w[1].abs() < 1e-6, "{w:?}");
        let q = back_project([0.0, 0.0], &sys).unwrap();
        assert!(q[0].abs() < 1e-6 && q[1].abs() < 1e-6);
    }

    #[test]
    fn unit_offset_images_inverted_and_magnified() {
        let sys = OpticsPreset::GratingRun.system();
        let w = trace_to_image([1.0, 0.0], &sys).unwrap();
        assert!((w[0] + 16.0).abs() < 0.16, "{w:?}");
        assert!(w[1].abs() < 0.16, "{w:?}");
        let w = trace_to_image([0.0, 1.0], &sys).unwrap();
        assert!((w[1] + 16.0).abs() < 0.16, "{w:?}");
    }

    #[test]
    fn presets_hit_target() {
        for (p, m) in [
            (OpticsPreset::GratingRun, 16.0),
            (OpticsPreset::CatRun, 19.0),
        ] {
            let got = effective_magnification(&p.system()).unwrap();
            assert!((got - m).abs() < 1e-6 * m, "{got}");
        }
    }

    #[test]
    fn doubling_image_distance_doubles_magnification() {
        let sys = OpticsPreset::GratingRun.system();
        let m1 = effective_magnification(&sys).unwrap();
        let mut long = sys;
        long.lens_to_image_mm *= 2.0;
        let m2 = effective_magnification(&long).unwrap();
        assert!((m2 / m1 - 2.0).abs() < 0.02, "{}", m2 / m1);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let sys = OpticsPreset::CatRun.system();
        assert_eq!(
            trace_to_image([200.0, 0.0], &sys),
            Err(OpticsError::OutOfRange)
        );
        assert_eq!(
            trace_to_image([f64::NAN, 0.0], &sys),
            Err(OpticsError::OutOfRange)
        );
    }

    #[test]
    fn jacobian_is_nonsingular_over_field() {
        let sys = OpticsPreset::GratingRun.system();
        for i in -4..=4 {
            for j in -4..=4 {
                let p = [i as f64 * 6.0, j as f64 * 6.0];
                let jac = jacobian(p, &sys, 1e-3).unwrap();
                let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                assert!(det > 0.5 * 256.0, "det {det} at {p:?}");
            }
        }
    }

    #[test]
    fn invalid_system_rejected() {
        let mut sys = OpticsPreset::GratingRun.system();
        sys.mirror_to_lens_mm = -1.0;
        assert!(sys.validate().is_err());
        let bad = OpticalSystem::solve_for_magnification(
            ParabolicMirror::new(750.0, 1.5, 0.0),
            150.0,
            5.0,
            2.0,
            16.0,
        );
        assert!(bad.is_err());
    }
}
