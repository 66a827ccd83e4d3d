//! Separable Gaussian convolution on binned images.

use crate::reconstruction::RealImage;

/// Kernel support in standard deviations.
pub const TRUNCATION_SIGMAS: f64 = 5.0;

/// Sampled Gaussian with standard deviation `sigma_bins`, truncated at 5σ.
fn kernel(sigma_bins: f64) -> Vec<f64> {
    let r = (TRUNCATION_SIGMAS * sigma_bins).ceil() as usize;
    let inv = 1.0 / (2.0 * sigma_bins * sigma_bins);
    (0..=2 * r)
        .map(|k| {
            let d = k as f64 - r as f64;
            (-d * d * inv).exp()
        })
        .collect()
}

fn convolve_line(src: &[f64], dst: &mut [f64], stride: usize, n: usize, k: &[f64]) {
    let r = k.len() / 2;
    for i in 0..n {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        let (mut acc, mut norm) = (0.0, 0.0);
        for j in lo..=hi {
            let w = k[j + r - i];
            acc += w * src[j * stride];
            norm += w;
        }
        // kernel renormalised where it hangs over the edge
        dst[i * stride] = acc / norm;
    }
}

/// Gaussian blur with `sigma_um` in the image's own units. `σ = 0` is the
/// identity.
pub fn blur(img: &RealImage, sigma_um: f64) -> RealImage {
    assert!(
        sigma_um >= 0.0 && sigma_um.is_finite(),
        "sigma must be finite and non-negative"
    );
    let mut out = img.clone();
    if sigma_um == 0.0 {
        return out;
    }
    let k = kernel(sigma_um / img.binning.bin_um);
    let (nx, ny) = (img.binning.nx, img.binning.ny);
    let mut tmp = vec![0.0; img.values.len()];
    for j in 0..ny {
        let row = j * nx;
        convolve_line(&img.values[row..], &mut tmp[row..], 1, nx, &k);
    }
    for i in 0..nx {
        convolve_line(&tmp[i..], &mut out.values[i..], nx, ny, &k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::Binning;

    fn image(n: usize, f: impl Fn(usize, usize) -> f64) -> RealImage {
        let mut img = RealImage::zeros(Binning::centered([0.0, 0.0], 1.0, n));
        for j in 0..n {
            for i in 0..n {
                img.values[j * n + i] = f(i, j);
            }
        }
        img
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = image(16, |i, j| (i * 7 + j * 3) as f64);
        assert_eq!(blur(&img, 0.0), img);
    }

    #[test]
    fn point_variance_equals_sigma_squared() {
        let n = 101;
        let img = image(n, |i, j| if i == 50 && j == 50 { 1.0 } else { 0.0 });
        let sigma = 3.0;
        let b = blur(&img, sigma);
        let total: f64 = b.values.iter().sum();
        let (mut vx, mut vy) = (0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                let v = b.values[j * n + i] / total;
                vx += v * (i as f64 - 50.0).powi(2);
                vy += v * (j as f64 - 50.0).powi(2);
            }
        }
        for v in [vx, vy] {
            assert!((v / (sigma * sigma) - 1.0).abs() < 0.01, "{v}");
        }
    }

    #[test]
    fn square_wave_fundamental_attenuates_per_fourier() {
        let n = 256;
        let p = 16.0;
        let img = image(n, |i, _| if (i / 8) % 2 == 0 { 1.0 } else { 0.0 });
        let sigma = 3.0;
        let b = blur(&img, sigma);
        // fundamental over the central 128 columns (8 whole periods)
        let amp = |im: &RealImage| {
            let (mut c, mut s) = (0.0, 0.0);
            for i in 64..192 {
                let ph = std::f64::consts::TAU * i as f64 / p;
                let v = im.values[128 * n + i];
                c += v * ph.cos();
                s += v * ph.sin();
            }
            c.hypot(s)
        };
        let ratio = amp(&b) / amp(&img);
        let expected = (-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma / (p * p)).exp();
        assert!(
            (ratio / expected - 1.0).abs() < 0.02,
            "{ratio} vs {expected}"
        );
    }

    #[test]
    fn constant_survives_edges() {
        let img = image(20, |_, _| 2.5);
        let b = blur(&img, 4.0);
        assert!(b.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn gaussian_semigroup_away_from_edges() {
        let n = 128;
        let img = image(n, |i, j| {
            let (x, y) = (i as f64 - 64.0, j as f64 - 64.0);
            if x.abs() < 12.0 && (y.abs() < 6.0 || (x + y).abs() < 4.0) {
                1.0
            } else {
                0.0
            }
        });
        let (s1, s2) = (1.5, 2.5);
        let twice = blur(&blur(&img, s1), s2);
        let once = blur(&img, s1.hypot(s2));
        let (mut diff, mut norm) = (0.0, 0.0);
        for j in 24..104 {
            for i in 24..104 {
                let k = j * n + i;
                diff += (twice.values[k] - once.values[k]).abs();
                norm += once.values[k].abs();
            }
        }
        assert!(diff / norm < 0.01, "{}", diff / norm);
    }
}
