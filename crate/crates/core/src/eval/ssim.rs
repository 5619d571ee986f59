//! Structural similarity with the standard Gaussian window.

use crate::error::{Error, Result};

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter over the valid region: `(w - 10) x (h - 10)`.
fn filter(img: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two grey images with dynamic range `range`.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize, range: f64) -> Result<f64> {
    if a.len() != width * height || b.len() != a.len() {
        return Err(Error::shape("ssim images", &[width * height], &[a.len(), b.len()]));
    }
    if width < WINDOW || height < WINDOW {
        return Err(Error::InvalidArgument(format!("ssim needs at least {WINDOW}x{WINDOW} pixels")));
    }
    let k = gaussian_kernel();
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filter(a, width, height, &k);
    let mu_b = filter(b, width, height, &k);
    let aa = filter(&prod(a, a), width, height, &k);
    let bb = filter(&prod(b, b), width, height, &k);
    let ab = filter(&prod(a, b), width, height, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn random_image(seed: u64) -> Vec<f64> {
        let mut r = Rng::new(seed);
        (0..32 * 32).map(|_| r.uniform_range(0.0, 255.0)).collect()
    }

    #[test]
    fn identical_images_score_one() {
        let a = random_image(1);
        assert_eq!(ssim(&a, &a, 32, 32, 255.0).unwrap(), 1.0);
    }

    #[test]
    fn negative_scores_below_self() {
        let a = random_image(2);
        let neg: Vec<f64> = a.iter().map(|v| 255.0 - v).collect();
        let s = ssim(&a, &neg, 32, 32, 255.0).unwrap();
        assert!(s < 0.0, "{s}");
    }

    #[test]
    fn symmetric_and_decreasing_in_noise() {
        let a = random_image(3);
        let mut means = Vec::new();
        for level in [5.0, 20.0, 60.0] {
            let mut acc = 0.0;
            for seed in 0..20 {
                let mut r = Rng::new(100 + seed);
                let b: Vec<f64> = a.iter().map(|v| v + level * r.normal()).collect();
                let s = ssim(&a, &b, 32, 32, 255.0).unwrap();
                assert!((s - ssim(&b, &a, 32, 32, 255.0).unwrap()).abs() < 1e-12);
                acc += s;
            }
            means.push(acc / 20.0);
        }
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    #[test]
    fn rejects_small_images() {
        assert!(ssim(&[0.0; 25], &[0.0; 25], 5, 5, 255.0).is_err());
    }
}
