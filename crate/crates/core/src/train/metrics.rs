//! Image quality metrics.

use crate::error::{Error, Result};

/// Cap returned for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio for values in [0, 1], averaged over all channels.
pub fn psnr(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} pixels", a.len()),
            got: format!("{} pixels", b.len()),
        });
    }
    let se: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(psnr_from_mse(se / (3 * a.len()) as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter keeping only fully covered ("valid") positions.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03 and dynamic range 1, averaged over valid window positions and the three
/// channels.
pub fn ssim(a: &[[f64; 3]], b: &[[f64; 3]], width: usize, height: usize) -> Result<f64> {
    if a.len() != b.len() || a.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: format!("{width}x{height} pixels in both images"),
            got: format!("{} and {}", a.len(), b.len()),
        });
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::DimensionMismatch {
            expected: format!("at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
            got: format!("{width}x{height}"),
        });
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.iter().map(|p| p[c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(&x, width, height, &k);
        let (my, _, _) = filter_valid(&y, width, height, &k);
        let (sxx, _, _) = filter_valid(&xx, width, height, &k);
        let (syy, _, _) = filter_valid(&yy, width, height, &k);
        let (sxy, _, _) = filter_valid(&xy, width, height, &k);
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cov = sxy[i] - mx[i] * my[i];
            acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / 3.0)
}
