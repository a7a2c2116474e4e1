//! Image quality: PSNR and Gaussian-window SSIM.

use crate::error::{Error, Result};
use crate::image::ImagePlane;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 255.0;

/// `10 log10(peak^2 / MSE)`; identical images give `+inf`.
pub fn psnr(reference: &ImagePlane, test: &ImagePlane, peak: f64) -> Result<f64> {
    reference.check_same_dims(test)?;
    let mse = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of a row-major plane.
fn filter_valid(
    data: &[f64],
    height: usize,
    width: usize,
    taps: &[f64],
) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (height - k + 1, width - k + 1);
    let mut rows = vec![0.0; height * ow];
    for r in 0..height {
        for c in 0..ow {
            rows[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * data[r * width + c + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(r + i) * ow + c])
                .sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 255).
pub fn ssim(reference: &ImagePlane, test: &ImagePlane) -> Result<f64> {
    reference.check_same_dims(test)?;
    let (h, w) = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let a = reference.pixels();
    let b = test.pixels();
    let product =
        |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let (mu_a, oh, ow) = filter_valid(a, h, w, &taps);
    let (mu_b, ..) = filter_valid(b, h, w, &taps);
    let (aa, ..) = filter_valid(&product(&|x, _| x * x), h, w, &taps);
    let (bb, ..) = filter_valid(&product(&|_, y| y * y), h, w, &taps);
    let (ab, ..) = filter_valid(&product(&|x, y| x * y), h, w, &taps);
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    let total: f64 = (0..oh * ow)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / (oh * ow) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 2-D window sums at every valid position, no separability.
    fn ssim_direct(a: &ImagePlane, b: &ImagePlane) -> f64 {
        let g = gaussian_taps(11, 1.5);
        let (h, w) = a.dims();
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..=h - 11 {
            for c in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i] * g[j];
                        let (x, y) = (a[(r + i, c + j)], b[(r + i, c + j)]);
                        ma += wt * x;
                        mb += wt * y;
                        saa += wt * x * x;
                        sbb += wt * y * y;
                        sab += wt * x * y;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    fn checkerboard() -> ImagePlane {
        ImagePlane::from_fn(32, 32, |r, c| {
            if (r / 4 + c / 4) % 2 == 0 {
                220.0
            } else {
                30.0
            }
        })
    }

    fn box_blur(img: &ImagePlane) -> ImagePlane {
        ImagePlane::from_fn(img.height(), img.width(), |r, c| {
            let mut s = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    s += img.get_clamped(r as isize + dr, c as isize + dc);
                }
            }
            s / 9.0
        })
    }

    #[test]
    fn psnr_closed_forms() {
        let a = ImagePlane::filled(8, 8, 100.0);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        let b = ImagePlane::filled(8, 8, 116.0);
        let v = psnr(&a, &b, 255.0).unwrap();
        assert!((v - 24.05).abs() < 0.01, "{v}");
        assert!((v - 10.0 * (255.0f64 * 255.0 / 256.0).log10()).abs() < 1e-12);
        let black = ImagePlane::filled(4, 4, 0.0);
        let white = ImagePlane::filled(4, 4, 255.0);
        assert!(psnr(&black, &white, 255.0).unwrap().abs() < 1e-12);
        assert_eq!(psnr(&a, &b, 255.0).unwrap(), psnr(&b, &a, 255.0).unwrap());
        assert!(psnr(&a, &ImagePlane::filled(8, 9, 0.0), 255.0).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = checkerboard();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = box_blur(&a);
        let ab = ssim(&a, &b).unwrap();
        assert!(ab < 1.0);
        assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let (c, delta) = (90.0, 25.0);
        let a = ImagePlane::filled(16, 16, c);
        let b = ImagePlane::filled(16, 16, c + delta);
        let c1 = (0.01f64 * 255.0).powi(2);
        let expect = (2.0 * c * (c + delta) + c1) / (c * c + (c + delta) * (c + delta) + c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_direct_convolution() {
        let a = checkerboard();
        let b = box_blur(&a);
        assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-9);
        let noisy = ImagePlane::from_fn(24, 40, |r, c| ((r * 37 + c * 11) % 23) as f64 * 10.0);
        let smooth = ImagePlane::from_fn(24, 40, |r, c| (r + c) as f64 * 3.0);
        assert!((ssim(&noisy, &smooth).unwrap() - ssim_direct(&noisy, &smooth)).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_or_mismatched() {
        let a = ImagePlane::filled(10, 20, 1.0);
        assert!(ssim(&a, &a).is_err());
        assert!(ssim(&checkerboard(), &ImagePlane::filled(32, 31, 0.0)).is_err());
    }
}
