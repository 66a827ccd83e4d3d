//! Forward model of a grating ghost image.
//!
//! A sample point `p` at height `dz` is traced to the mask plane as `w`; the
//! mask plane is then rotated by `rotation` about the axis and the grating
//! translated by `M·shift`, so `q = R·w + M·shift` is tested against the
//! grating. `shift` is expressed in sample-plane µm and `M` is the effective
//! magnification, which makes the model exactly periodic in `shift`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::optics::{effective_magnification, Grating, OpticalSystem, OpticsError, Vec3};
use crate::reconstruction::{Binning, RealImage};

use super::blur::blur;

pub type GratingSpec = Grating;

/// Model parameters. Lengths are sample-plane µm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    pub sigma_um: f64,
    pub amplitude: f64,
    pub baseline: f64,
    pub shift_um: [f64; 2],
    pub rotation_rad: f64,
    /// Sample displacement along the electron beam.
    pub dz_um: f64,
}

impl FitParams {
    pub fn new(sigma_um: f64, amplitude: f64, baseline: f64) -> Self {
        Self {
            sigma_um,
            amplitude,
            baseline,
            shift_um: [0.0, 0.0],
            rotation_rad: 0.0,
            dz_um: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.sigma_um > 0.0
            && self.amplitude > 0.0
            && [
                self.baseline,
                self.shift_um[0],
                self.shift_um[1],
                self.rotation_rad,
                self.dz_um,
            ]
            .iter()
            .all(|v| v.is_finite())
            && self.sigma_um.is_finite()
            && self.amplitude.is_finite()
    }
}

fn rotate(a: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn trace_at(sys: &OpticalSystem, p: [f64; 2], dz: f64) -> Result<[f64; 2], OpticsError> {
    sys.trace_point(Vec3::new(p[0], p[1], dz))
}

/// Point-sampled grating transmission at each bin centre, in `{0, 1}`.
pub fn ideal_target_image(
    spec: &GratingSpec,
    sys: &OpticalSystem,
    grid: Binning,
) -> Result<RealImage, OpticsError> {
    point_sampled(&FitParams::new(0.0, 1.0, 0.0), spec, sys, grid)
}

fn point_sampled(
    params: &FitParams,
    spec: &GratingSpec,
    sys: &OpticalSystem,
    grid: Binning,
) -> Result<RealImage, OpticsError> {
    let m = effective_magnification(sys)?;
    let mut ideal = RealImage::zeros(grid);
    for (k, c) in grid.centers().enumerate() {
        let w = trace_at(sys, c, params.dz_um)?;
        let r = rotate(params.rotation_rad, w);
        let q = [r[0] + m * params.shift_um[0], r[1] + m * params.shift_um[1]];
        ideal.values[k] = if spec.transmits(q) { 1.0 } else { 0.0 };
    }
    Ok(ideal)
}

/// `amplitude · blur(ideal, σ) + baseline` over the point-sampled ideal image.
pub fn model_image(
    params: &FitParams,
    spec: &GratingSpec,
    sys: &OpticalSystem,
    grid: Binning,
) -> Result<RealImage, OpticsError> {
    Ok(finish(&point_sampled(params, spec, sys, grid)?, params))
}

fn finish(ideal: &RealImage, params: &FitParams) -> RealImage {
    let mut out = blur(ideal, params.sigma_um);
    for v in &mut out.values {
        *v = params.amplitude * *v + params.baseline;
    }
    out
}

/// Mean of a square wave with duty `d` over `[φ − h/2, φ + h/2]`.
fn coverage(phi: f64, width: f64, duty: f64) -> f64 {
    let cumulative = |x: f64| x.floor() * duty + (x - x.floor()).min(duty);
    if width <= 1e-12 {
        return if phi - phi.floor() < duty { 1.0 } else { 0.0 };
    }
    (cumulative(phi + 0.5 * width) - cumulative(phi - 0.5 * width)) / width
}

/// Traced map at one sample height: image point and local Jacobian per bin.
struct Layer {
    w: Vec<[f64; 2]>,
    jac: Vec<[[f64; 2]; 2]>,
}

/// Spacing of the cached height layers.
pub const LAYER_SPACING_UM: f64 = 0.5;
/// Heights beyond this are rejected by the fit.
pub const MAX_DZ_UM: f64 = 40.0;

/// Caches the traced map over the bins and evaluates the bin-averaged model.
///
/// Every bin is split into `supersample²` cells; each cell contributes the
/// exact mean of the grating over its footprint along the local grating
/// gradient, so the model varies continuously with every geometric
/// parameter. Heights between cached layers are linearly interpolated.
pub struct ModelContext {
    spec: GratingSpec,
    sys: OpticalSystem,
    grid: Binning,
    supersample: usize,
    magnification: f64,
    layers: Mutex<BTreeMap<i64, Arc<Layer>>>,
}

impl ModelContext {
    pub fn new(
        spec: GratingSpec,
        sys: OpticalSystem,
        grid: Binning,
        supersample: usize,
    ) -> Result<Self, OpticsError> {
        sys.validate()?;
        Ok(Self {
            spec,
            magnification: effective_magnification(&sys)?,
            sys,
            grid,
            supersample: supersample.max(1),
            layers: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn grid(&self) -> Binning {
        self.grid
    }

    pub fn spec(&self) -> &GratingSpec {
        &self.spec
    }

    pub fn magnification(&self) -> f64 {
        self.magnification
    }

    fn layer(&self, k: i64) -> Result<Arc<Layer>, OpticsError> {
        if let Some(l) = self.layers.lock().expect("layer cache").get(&k) {
            return Ok(l.clone());
        }
        let dz = k as f64 * LAYER_SPACING_UM;
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let w: Vec<[f64; 2]> = self
            .grid
            .centers()
            .map(|c| trace_at(&self.sys, c, dz))
            .collect::<Result<_, _>>()?;
        let b = self.grid.bin_um;
        let mut jac = Vec::with_capacity(w.len());
        for j in 0..ny {
            for i in 0..nx {
                // central differences between neighbouring bin centres
                let (il, ir) = (i.saturating_sub(1), (i + 1).min(nx - 1));
                let (jl, jr) = (j.saturating_sub(1), (j + 1).min(ny - 1));
                let dx = (ir - il) as f64 * b;
                let dy = (jr - jl) as f64 * b;
                let (a, c) = (w[j * nx + ir], w[j * nx + il]);
                let (d, e) = (w[jr * nx + i], w[jl * nx + i]);
                jac.push([
                    [(a[0] - c[0]) / dx, (d[0] - e[0]) / dy],
                    [(a[1] - c[1]) / dx, (d[1] - e[1]) / dy],
                ]);
            }
        }
        let layer = Arc::new(Layer { w, jac });
        self.layers
            .lock()
            .expect("layer cache")
            .insert(k, layer.clone());
        Ok(layer)
    }

    /// Bin-averaged ideal image (values in `[0, 1]`) for the geometric part
    /// of `params`.
    pub fn ideal(&self, params: &FitParams) -> Result<RealImage, OpticsError> {
        if !(params.dz_um.abs() <= MAX_DZ_UM) {
            return Err(OpticsError::OutOfRange);
        }
        let s = params.dz_um / LAYER_SPACING_UM;
        let k0 = s.floor() as i64;
        let t = s - k0 as f64;
        let lo = self.layer(k0)?;
        let hi = if t > 0.0 {
            self.layer(k0 + 1)?
        } else {
            lo.clone()
        };
        let m = self.magnification;
        let shift = [m * params.shift_um[0], m * params.shift_um[1]];
        let (sin, cos) = params.rotation_rad.sin_cos();
        let n = self.spec.normal();
        // grating normal pulled back through the rotation
        let nr = [cos * n[0] + sin * n[1], -sin * n[0] + cos * n[1]];
        let offset = n[0] * shift[0] + n[1] * shift[1] - self.spec.phase_um;
        let inv_p = 1.0 / self.spec.period_um;
        let ss = self.supersample;
        let cell = self.grid.bin_um / ss as f64;
        let mut img = RealImage::zeros(self.grid);
        for (k, v) in img.values.iter_mut().enumerate() {
            let (wl, wh) = (lo.w[k], hi.w[k]);
            let w = [wl[0] + t * (wh[0] - wl[0]), wl[1] + t * (wh[1] - wl[1])];
            let (jl, jh) = (lo.jac[k], hi.jac[k]);
            let j = [
                [
                    jl[0][0] + t * (jh[0][0] - jl[0][0]),
                    jl[0][1] + t * (jh[0][1] - jl[0][1]),
                ],
                [
                    jl[1][0] + t * (jh[1][0] - jl[1][0]),
                    jl[1][1] + t * (jh[1][1] - jl[1][1]),
                ],
            ];
            // phase gradient with respect to the sample point, per period
            let g = [
                (nr[0] * j[0][0] + nr[1] * j[1][0]) * inv_p,
                (nr[0] * j[0][1] + nr[1] * j[1][1]) * inv_p,
            ];
            // a square cell projects onto g with the variance of a uniform
            // of width cell·|g|
            let width = cell * g[0].hypot(g[1]);
            let phi0 = ((nr[0] * w[0] + nr[1] * w[1]) + offset) * inv_p;
            let mut acc = 0.0;
            for a in 0..ss {
                let dx = (a as f64 + 0.5) * cell - 0.5 * self.grid.bin_um;
                for b in 0..ss {
                    let dy = (b as f64 + 0.5) * cell - 0.5 * self.grid.bin_um;
                    acc += coverage(phi0 + g[0] * dx + g[1] * dy, width, self.spec.duty);
                }
            }
            *v = acc / (ss * ss) as f64;
        }
        Ok(img)
    }

    /// Full bin-averaged model image.
    pub fn model(&self, params: &FitParams) -> Result<RealImage, OpticsError> {
        Ok(finish(&self.ideal(params)?, params))
    }
}

/// Applies blur, amplitude and baseline to a precomputed ideal image.
pub fn model_from_ideal(ideal: &RealImage, params: &FitParams) -> RealImage {
    finish(ideal, params)
}
