//! Image-quality indices: PSNR and mean local SSIM.

use alloc::string::String;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math;

/// Peak signal-to-noise ratio in dB with the given peak value.
///
/// Returns `f64::INFINITY` when the images are identical (zero MSE).
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::SizeMismatch {
            what: "psnr images",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len() as f64;
    let mse = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * math::log10(peak * peak / mse))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

/// Normalized 11x11 Gaussian window, sigma 1.5.
fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW as f64 - 1.0) / 2.0;
    let mut sum = 0.0;
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let dy = i as f64 - c;
            let dx = j as f64 - c;
            let g = math::exp(-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
            w[i * SSIM_WINDOW + j] = g;
            sum += g;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean local SSIM over all fully interior 11x11 windows.
///
/// Standard constants: Gaussian window sigma 1.5, K1 = 0.01, K2 = 0.03,
/// dynamic range 255.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::SizeMismatch {
            what: "ssim images",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::InvalidParameter {
            name: "image side",
            reason: "ssim needs images at least 11 pixels on each side",
        });
    }
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let w = gaussian_window();
    let (width, height) = (a.width(), a.height());
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(height - SSIM_WINDOW) {
        for x0 in 0..=(width - SSIM_WINDOW) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let wk = w[i * SSIM_WINDOW + j];
                    let va = a.at(x0 + j, y0 + i);
                    let vb = b.at(x0 + j, y0 + i);
                    mu_a += wk * va;
                    mu_b += wk * vb;
                    aa += wk * va * va;
                    bb += wk * vb * vb;
                    ab += wk * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let val = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += val;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// One row of the experiment report.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub method: String,
    pub sinogram_noise: f64,
    /// Reference noise level, or `None` for methods that ignore the
    /// reference image (FBP, TV).
    pub reference_noise: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
}

/// Convenience: PSNR and SSIM of `recon` against `truth` at peak 255.
pub fn quality(truth: &Image, recon: &Image) -> Result<(f64, f64)> {
    Ok((psnr(truth, recon, 255.0)?, ssim(truth, recon)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image(w: usize, h: usize) -> Image {
        let mut img = Image::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, ((x * 7 + y * 13) % 256) as f64);
            }
        }
        img
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = ramp_image(16, 16);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_full_scale_offset_is_zero() {
        let a = Image::zeros(8, 8);
        let b = Image::constant(8, 8, 255.0);
        let v = psnr(&a, &b, 255.0).unwrap();
        assert!(v.abs() < 1e-12, "psnr {v}");
    }

    #[test]
    fn psnr_constant_offset_closed_form() {
        let a = ramp_image(32, 32);
        let mut b = a.clone();
        for v in b.as_mut_slice() {
            *v += 10.0;
        }
        let expected = 20.0 * (255.0f64 / 10.0).log10();
        let got = psnr(&a, &b, 255.0).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, want {expected}");
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = ramp_image(16, 16);
        let mut b = a.clone();
        b.set(3, 4, 77.0);
        assert_eq!(
            psnr(&a, &b, 255.0).unwrap(),
            psnr(&b, &a, 255.0).unwrap()
        );
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = ramp_image(24, 24);
        let v = ssim(&a, &a).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "ssim {v}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::zeros(8, 8);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_constant_offset_matches_luminance_factor() {
        let a = ramp_image(20, 20);
        let offset = 25.0;
        let mut b = a.clone();
        for v in b.as_mut_slice() {
            *v += offset;
        }
        // With b = a + c the contrast/structure factor is exactly 1, so the
        // SSIM map reduces to the luminance term computed from window means.
        let w = gaussian_window();
        let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
        let mut expected = 0.0;
        let mut count = 0usize;
        for y0 in 0..=(20 - SSIM_WINDOW) {
            for x0 in 0..=(20 - SSIM_WINDOW) {
                let mut mu = 0.0;
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        mu += w[i * SSIM_WINDOW + j] * a.at(x0 + j, y0 + i);
                    }
                }
                let mu_b = mu + offset;
                expected += (2.0 * mu * mu_b + c1) / (mu * mu + mu_b * mu_b + c1);
                count += 1;
            }
        }
        expected /= count as f64;
        let got = ssim(&a, &b).unwrap();
        assert!(
            (got - expected).abs() < 1e-9,
            "got {got}, want {expected}"
        );
    }

    #[test]
    fn ssim_inverted_contrast_is_negative() {
        // Zero-mean checkerboard-like pattern; inversion flips the sign of
        // every fluctuation so the covariance term goes negative.
        let n = 22;
        let mut a = Image::zeros(n, n);
        for y in 0..n {
            for x in 0..n {
                let s = if (x + y) % 2 == 0 { 60.0 } else { -60.0 };
                a.set(x, y, s);
            }
        }
        let mut b = a.clone();
        for v in b.as_mut_slice() {
            *v = 255.0 - *v;
        }
        let v = ssim(&a, &b).unwrap();
        assert!(v < 0.0, "ssim {v}");
    }

    #[test]
    fn ssim_symmetric_and_flip_invariant() {
        let a = ramp_image(20, 20);
        let mut b = a.clone();
        for (i, v) in b.as_mut_slice().iter_mut().enumerate() {
            *v += ((i % 17) as f64) - 8.0;
        }
        let s_ab = ssim(&a, &b).unwrap();
        let s_ba = ssim(&b, &a).unwrap();
        assert!((s_ab - s_ba).abs() < 1e-12);

        let flip = |img: &Image| {
            let mut out = Image::zeros(img.width(), img.height());
            for y in 0..img.height() {
                for x in 0..img.width() {
                    out.set(img.width() - 1 - x, y, img.at(x, y));
                }
            }
            out
        };
        let s_flipped = ssim(&flip(&a), &flip(&b)).unwrap();
        assert!((s_ab - s_flipped).abs() < 1e-12);
        assert!(s_ab <= 1.0 + 1e-12);
    }
}
