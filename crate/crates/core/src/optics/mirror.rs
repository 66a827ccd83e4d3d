//! Paraboloidal collection mirror and exact ray reflection.
//!
//! Mirror frame: focus at the origin, collection axis along +x, electron beam
//! along z. The mirror sits above the sample (z > 0); its surface is
//! `y² + z² = 4f (x + f)`. Rays leaving the focus are reflected parallel to +x.
//! All lengths are micrometres.

use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    /// Angle between two vectors, stable for nearly parallel inputs.
    pub fn angle_to(self, o: Vec3) -> f64 {
        self.cross(o).norm().atan2(self.dot(o))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Vec3,
    direction: Vec3,
}

impl Ray {
    /// Normalises `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalized(),
        }
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ReflectError {
    #[error("ray does not meet the mirror surface")]
    NoIntersection,
    #[error("ray passes through the beam hole")]
    HoleClipped,
    #[error("ray meets the paraboloid outside the mirror aperture")]
    OutsideNA,
}

/// Paraboloidal mirror with its focus at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolicMirror {
    /// Focal length (µm).
    pub focal_length: f64,
    pub numerical_aperture: f64,
    /// Diameter of the electron beam hole around the z axis (µm).
    pub beam_hole_diameter: f64,
}

impl ParabolicMirror {
    pub fn new(focal_length: f64, numerical_aperture: f64, beam_hole_diameter: f64) -> Self {
        Self {
            focal_length,
            numerical_aperture,
            beam_hole_diameter,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.focal_length > 0.0
            && self.numerical_aperture > 0.0
            && self.numerical_aperture < 1.0
            && self.beam_hole_diameter >= 0.0
    }

    /// Collection axis (direction of reflected rays from the focus).
    pub fn axis(&self) -> Vec3 {
        Vec3::X
    }

    /// Half-angle of the collection cone around +z, from the NA.
    pub fn aperture_half_angle(&self) -> f64 {
        self.numerical_aperture.asin()
    }

    /// Implicit surface function; negative inside the paraboloid.
    pub fn surface_fn(&self, p: Vec3) -> f64 {
        let f = self.focal_length;
        p.y * p.y + p.z * p.z - 4.0 * f * (p.x + f)
    }

    /// Outward unit normal at a surface point.
    pub fn normal_at(&self, p: Vec3) -> Vec3 {
        Vec3::new(-4.0 * self.focal_length, 2.0 * p.y, 2.0 * p.z).normalized()
    }

    /// Surface point at transverse coordinates `(y, z)`.
    pub fn surface_point(&self, y: f64, z: f64) -> Vec3 {
        let f = self.focal_length;
        Vec3::new((y * y + z * z) / (4.0 * f) - f, y, z)
    }

    /// First forward intersection of a ray with the full paraboloid.
    pub fn intersect(&self, ray: &Ray) -> Option<Vec3> {
        let f = self.focal_length;
        let o = ray.origin();
        let d = ray.direction();
        let a = d.y * d.y + d.z * d.z;
        let b = 2.0 * (o.y * d.y + o.z * d.z) - 4.0 * f * d.x;
        let c = self.surface_fn(o);
        let eps = 1e-9;
        let t = if a.abs() < 1e-15 {
            if b.abs() < 1e-300 {
                return None;
            }
            -c / b
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            let (t1, t2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            if lo > eps {
                lo
            } else {
                hi
            }
        };
        (t > eps).then(|| ray.at(t))
    }

    /// Whether a surface point belongs to the physical mirror (inside the
    /// collection cone seen from the focus, outside the beam hole).
    pub fn check_aperture(&self, p: Vec3) -> Result<(), ReflectError> {
        if p.z <= 0.0 || p.z / p.norm() < self.aperture_half_angle().cos() {
            return Err(ReflectError::OutsideNA);
        }
        let r_hole = 0.5 * self.beam_hole_diameter;
        if p.x * p.x + p.y * p.y < r_hole * r_hole {
            return Err(ReflectError::HoleClipped);
        }
        Ok(())
    }

    /// Specular reflection off the surface without aperture clipping.
    pub fn reflect_unclipped(&self, ray: &Ray) -> Result<Ray, ReflectError> {
        let hit = self.intersect(ray).ok_or(ReflectError::NoIntersection)?;
        let n = self.normal_at(hit);
        Ok(Ray::new(hit, reflect_direction(ray.direction(), n)))
    }
}

/// `d − 2(d·n)n`.
pub fn reflect_direction(d: Vec3, n: Vec3) -> Vec3 {
    d - n * (2.0 * d.dot(n))
}

/// Reflects a ray off the physical mirror.
pub fn reflect(ray: &Ray, mirror: &ParabolicMirror) -> Result<Ray, ReflectError> {
    let hit = mirror.intersect(ray).ok_or(ReflectError::NoIntersection)?;
    mirror.check_aperture(hit)?;
    let n = mirror.normal_at(hit);
    Ok(Ray::new(hit, reflect_direction(ray.direction(), n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream_rng, Substream};
    use rand::Rng;

    fn mirror() -> ParabolicMirror {
        ParabolicMirror::new(750.0, 0.58, 300.0)
    }

    /// Uniform direction inside the collection cone, avoiding the hole.
    fn cone_direction(rng: &mut impl Rng, m: &ParabolicMirror) -> Vec3 {
        let cos_max = m.aperture_half_angle().cos();
        loop {
            let cz = rng.random_range(cos_max..1.0);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - cz * cz).sqrt();
            let d = Vec3::new(s * phi.cos(), s * phi.sin(), cz);
            if cz < 0.99 {
                return d;
            }
        }
    }

    #[test]
    fn straight_up_ray_leaves_along_axis() {
        let m = ParabolicMirror::new(750.0, 0.58, 0.0);
        let out = reflect(&Ray::new(Vec3::default(), Vec3::Z), &m).unwrap();
        assert!((out.origin() - Vec3::new(0.0, 0.0, 1500.0)).norm() < 1e-9);
        assert!(out.direction().angle_to(Vec3::X) < 1e-12);
    }

    #[test]
    fn focus_rays_emerge_parallel() {
        let m = mirror();
        let mut rng = substream_rng(1, Substream::Test, 0);
        for _ in 0..1000 {
            let ray = Ray::new(Vec3::default(), cone_direction(&mut rng, &m));
            let out = reflect(&ray, &m).unwrap();
            assert!(out.direction().angle_to(Vec3::X) < 1e-9);
            assert!((out.direction().norm() - 1.0).abs() < 1e-12);
            let n = m.normal_at(out.origin());
            assert!((ray.direction().dot(n).abs() - out.direction().dot(n).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn na_edge_ray_offset_equals_radius() {
        let m = mirror();
        let theta = m.aperture_half_angle() * (1.0 - 1e-12);
        let d = Vec3::new(theta.sin(), 0.0, theta.cos());
        let out = reflect(&Ray::new(Vec3::default(), d), &m).unwrap();
        assert!(out.direction().angle_to(Vec3::X) < 1e-9);
        let hit = out.origin();
        let lateral = (hit.y * hit.y + hit.z * hit.z).sqrt();
        // The parallel output travels along x at the hit's distance to the axis.
        let later = out.at(1e4);
        let lateral_later = (later.y * later.y + later.z * later.z).sqrt();
        assert!((lateral - lateral_later).abs() < 1e-6);
    }

    #[test]
    fn clipping_errors() {
        let m = mirror();
        let hole = Ray::new(Vec3::default(), Vec3::new(0.01, 0.0, 1.0));
        assert_eq!(reflect(&hole, &m), Err(ReflectError::HoleClipped));
        let wide = Ray::new(Vec3::default(), Vec3::new(1.0, 0.0, 0.5));
        assert_eq!(reflect(&wide, &m), Err(ReflectError::OutsideNA));
        let down = Ray::new(Vec3::default(), -Vec3::Z);
        assert_eq!(reflect(&down, &m), Err(ReflectError::OutsideNA));
        let outside = Ray::new(Vec3::new(0.0, 0.0, 1e5), Vec3::Z);
        assert_eq!(reflect(&outside, &m), Err(ReflectError::NoIntersection));
    }

    /// Bisection on the implicit surface and a finite-difference gradient:
    /// shares nothing with the closed-form quadratic path.
    fn oracle_reflect(ray: &Ray, m: &ParabolicMirror) -> Vec3 {
        let g = |t: f64| m.surface_fn(ray.at(t));
        let (mut lo, mut hi) = (0.0, 1.0);
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let p = ray.at(0.5 * (lo + hi));
        // central differences are exact on a quadric; a large step avoids cancellation
        let h = 1.0;
        let grad = Vec3::new(
            (m.surface_fn(p + Vec3::X * h) - m.surface_fn(p - Vec3::X * h)) / (2.0 * h),
            (m.surface_fn(p + Vec3::Y * h) - m.surface_fn(p - Vec3::Y * h)) / (2.0 * h),
            (m.surface_fn(p + Vec3::Z * h) - m.surface_fn(p - Vec3::Z * h)) / (2.0 * h),
        )
        .normalized();
        reflect_direction(ray.direction(), grad)
    }

    #[test]
    fn off_focus_reflection_matches_oracle() {
        let m = mirror();
        let origin = Vec3::new(2.0, 0.0, 0.0);
        let mut rng = substream_rng(2, Substream::Test, 0);
        for _ in 0..200 {
            let ray = Ray::new(origin, cone_direction(&mut rng, &m));
            let out = reflect(&ray, &m).unwrap();
            let oracle = oracle_reflect(&ray, &m);
            let a = out.direction().angle_to(Vec3::X);
            let b = oracle.angle_to(Vec3::X);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            assert!(a > 1e-6, "off-focus ray should not be parallel");
        }
    }
}
