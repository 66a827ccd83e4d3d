//! Binary transmission masks in the photon image plane.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskError {
    #[error("mask raster must be non-empty and match its dimensions")]
    BadRaster,
    #[error("pixel pitch must be positive and finite")]
    BadPitch,
    #[error("grating needs a positive period and duty cycle in (0, 1)")]
    BadGrating,
}

/// Bit raster with physical pixel pitch.
///
/// Pixel `(i, j)` covers `u ∈ [origin_u + i·pitch, origin_u + (i+1)·pitch)` and
/// the same for `v` with `j`; row `j = 0` is the lowest `v`. A point on a pixel
/// boundary belongs to the pixel whose lower edge it is (floor of the scaled
/// coordinate). Points off the raster are blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    name: String,
    width: usize,
    height: usize,
    open: Vec<bool>,
    pitch_um: f64,
    origin_um: [f64; 2],
}

impl Mask {
    pub fn new(
        name: impl Into<String>,
        width: usize,
        height: usize,
        open: Vec<bool>,
        pitch_um: f64,
        origin_um: [f64; 2],
    ) -> Result<Self, MaskError> {
        if width == 0 || height == 0 || open.len() != width * height {
            return Err(MaskError::BadRaster);
        }
        if !(pitch_um > 0.0 && pitch_um.is_finite()) {
            return Err(MaskError::BadPitch);
        }
        Ok(Self {
            name: name.into(),
            width,
            height,
            open,
            pitch_um,
            origin_um,
        })
    }

    /// Raster sampled from `f` at pixel centres, centred on the optical axis.
    pub fn from_fn(
        name: impl Into<String>,
        width: usize,
        height: usize,
        pitch_um: f64,
        f: impl Fn(f64, f64) -> bool,
    ) -> Result<Self, MaskError> {
        let origin = [
            -0.5 * width as f64 * pitch_um,
            -0.5 * height as f64 * pitch_um,
        ];
        let mut open = Vec::with_capacity(width * height);
        for j in 0..height {
            let v = origin[1] + (j as f64 + 0.5) * pitch_um;
            for i in 0..width {
                let u = origin[0] + (i as f64 + 0.5) * pitch_um;
                open.push(f(u, v));
            }
        }
        Self::new(name, width, height, open, pitch_um, origin)
    }

    pub fn fully_open(width: usize, height: usize, pitch_um: f64) -> Result<Self, MaskError> {
        Self::from_fn("open", width, height, pitch_um, |_, _| true)
    }

    /// Line grating rastered over a `size_um` square.
    pub fn grating(grating: &Grating, size_um: f64, pitch_um: f64) -> Result<Self, MaskError> {
        grating.validate()?;
        let n = (size_um / pitch_um).ceil() as usize;
        Self::from_fn("grating", n, n, pitch_um, |u, v| grating.transmits([u, v]))
    }

    /// Cat silhouette, about 500 × 600 µm, with blocked 70 × 50 µm eyes.
    pub fn cat(pitch_um: f64) -> Result<Self, MaskError> {
        let n_w = (640.0 / pitch_um).ceil() as usize;
        let n_h = (720.0 / pitch_um).ceil() as usize;
        Self::from_fn("cat", n_w, n_h, pitch_um, cat_shape)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pitch_um(&self) -> f64 {
        self.pitch_um
    }

    pub fn origin_um(&self) -> [f64; 2] {
        self.origin_um
    }

    pub fn raster(&self) -> &[bool] {
        &self.open
    }

    pub fn is_open(&self, i: usize, j: usize) -> bool {
        self.open[j * self.width + i]
    }

    /// Fraction of open pixels.
    pub fn open_fraction(&self) -> f64 {
        self.open.iter().filter(|&&b| b).count() as f64 / self.open.len() as f64
    }

    /// Same mask with columns reversed about the raster's own centre line.
    pub fn mirrored_u(&self) -> Self {
        let mut open = Vec::with_capacity(self.open.len());
        for j in 0..self.height {
            for i in (0..self.width).rev() {
                open.push(self.is_open(i, j));
            }
        }
        let extent = self.width as f64 * self.pitch_um;
        Self {
            name: format!("{}-mirrored", self.name),
            open,
            origin_um: [-(self.origin_um[0] + extent), self.origin_um[1]],
            ..self.clone()
        }
    }
}

/// Whether the mask pixel containing `point` is open.
pub fn transmit(mask: &Mask, point: [f64; 2]) -> bool {
    let fi = ((point[0] - mask.origin_um[0]) / mask.pitch_um).floor();
    let fj = ((point[1] - mask.origin_um[1]) / mask.pitch_um).floor();
    if !(fi >= 0.0 && fj >= 0.0) || fi >= mask.width as f64 || fj >= mask.height as f64 {
        return false;
    }
    mask.is_open(fi as usize, fj as usize)
}

/// Analytic line grating in the image plane.
///
/// `normal_angle` is the direction of the grating vector measured from the
/// `u` axis; lines run perpendicular to it. A point is open when its phase
/// along the grating vector, shifted by `phase_um`, falls in the first
/// `duty` fraction of the period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grating {
    pub period_um: f64,
    pub duty: f64,
    pub normal_angle: f64,
    pub phase_um: f64,
}

impl Grating {
    pub fn validate(&self) -> Result<(), MaskError> {
        if self.period_um > 0.0 && self.duty > 0.0 && self.duty < 1.0 && self.period_um.is_finite()
        {
            Ok(())
        } else {
            Err(MaskError::BadGrating)
        }
    }

    pub fn normal(&self) -> [f64; 2] {
        [self.normal_angle.cos(), self.normal_angle.sin()]
    }

    /// Position along the grating vector in units of periods.
    pub fn phase(&self, point: [f64; 2]) -> f64 {
        let n = self.normal();
        (point[0] * n[0] + point[1] * n[1] - self.phase_um) / self.period_um
    }

    pub fn transmits(&self, point: [f64; 2]) -> bool {
        let ph = self.phase(point);
        ph - ph.floor() < self.duty
    }
}

fn in_ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> bool {
    let a = (u - cu) / ru;
    let b = (v - cv) / rv;
    a * a + b * b <= 1.0
}

fn in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let side = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let d1 = side(a, b, p);
    let d2 = side(b, c, p);
    let d3 = side(c, a, p);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

fn cat_shape(u: f64, v: f64) -> bool {
    // eyes are left standing (opaque)
    if in_ellipse(u, v, -55.0, 140.0, 35.0, 25.0) || in_ellipse(u, v, 55.0, 140.0, 35.0, 25.0) {
        return false;
    }
    let head = in_ellipse(u, v, 0.0, 125.0, 150.0, 125.0);
    let ears = in_triangle([u, v], [-145.0, 160.0], [-50.0, 235.0], [-125.0, 320.0])
        || in_triangle([u, v], [145.0, 160.0], [50.0, 235.0], [125.0, 320.0]);
    let body = in_ellipse(u, v, 0.0, -120.0, 165.0, 165.0);
    // tail: a thick quadratic Bézier hooking up on the right
    let tail = (0..=64).any(|k| {
        let t = k as f64 / 64.0;
        let s = 1.0 - t;
        let bu = s * s * 140.0 + 2.0 * s * t * 300.0 + t * t * 215.0;
        let bv = s * s * -235.0 + 2.0 * s * t * -120.0 + t * t * 40.0;
        (u - bu).hypot(v - bv) <= 24.0
    });
    head || ears || body || tail
}
