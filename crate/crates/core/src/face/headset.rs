//! Headset camera simulation with per-session domain gap.

use serde::{Deserialize, Serialize};

use super::avatar::{Avatar, FaceMesh, TextureMap, MODULES};
use super::render::render;
use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Grayscale image, row-major, nominal range `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("gray image", &[height, width], &[data.len()]));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at continuous pixel coordinates (centers at `i + 0.5`),
    /// clamped to the border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let xf = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let yf = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = xf.floor() as usize;
        let y0 = yf.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (xf - x0 as f64, yf - y0 as f64);
        let g = |xx, yy| self.get(xx, yy) as f64;
        let top = g(x0, y0) + (g(x1, y0) - g(x0, y0)) * fx;
        let bot = g(x0, y1) + (g(x1, y1) - g(x0, y1)) * fx;
        top + (bot - top) * fy
    }

    /// Left-right mirror.
    pub fn flipped(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.push(self.get(x, y));
            }
        }
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Session-level capture conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub gain: f64,
    pub bias: f64,
    /// Radial falloff strength; the corner pixels are dimmed by this fraction.
    pub vignette: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Constant stray-light level added to every pixel.
    pub background: f64,
}

impl DomainParams {
    pub fn identity() -> Self {
        DomainParams {
            gain: 1.0,
            bias: 0.0,
            vignette: 0.0,
            noise: 0.0,
            background: 0.0,
        }
    }

    /// Draw session conditions; distinct sessions get visibly distinct gaps.
    pub fn sample(rng: &mut Rng) -> Self {
        DomainParams {
            gain: rng.uniform_range(0.7, 1.3),
            bias: rng.uniform_range(-0.08, 0.08),
            vignette: rng.uniform_range(0.0, 0.35),
            noise: rng.uniform_range(0.005, 0.03),
            background: rng.uniform_range(0.0, 0.12),
        }
    }
}

/// Clean grayscale render of module `k`'s camera (channel mean, black background).
pub fn clean_module_render(avatar: &Avatar, mesh: &FaceMesh, tex: &TextureMap, k: usize) -> Result<GrayImage> {
    if k >= MODULES {
        return Err(Error::InvalidArgument(format!("module index {k} >= {MODULES}")));
    }
    let img = render(mesh, avatar.uv(), tex, &avatar.module_camera(k))?;
    GrayImage::new(img.width, img.height, img.grey().into_iter().map(|g| g as f32).collect())
}

/// Apply `domain` to a clean image: `gain * vignette * clean + bias + background + noise`.
pub fn apply_domain(clean: &GrayImage, domain: &DomainParams, rng: &mut Rng) -> GrayImage {
    let (w, h) = (clean.width as f64, clean.height as f64);
    let mut data = Vec::with_capacity(clean.data.len());
    for y in 0..clean.height {
        for x in 0..clean.width {
            let dx = (x as f64 + 0.5 - w / 2.0) / (w / 2.0);
            let dy = (y as f64 + 0.5 - h / 2.0) / (h / 2.0);
            let vig = 1.0 - domain.vignette * (dx * dx + dy * dy) / 2.0;
            let n = if domain.noise > 0.0 { domain.noise * rng.normal() } else { 0.0 };
            let v = domain.gain * vig * clean.get(x, y) as f64 + domain.bias + domain.background + n;
            data.push(v as f32);
        }
    }
    GrayImage {
        width: clean.width,
        height: clean.height,
        data,
    }
}

/// Render module `k` and pass it through the session's capture conditions.
pub fn simulate_headset_capture(
    avatar: &Avatar,
    mesh: &FaceMesh,
    tex: &TextureMap,
    k: usize,
    domain: &DomainParams,
    rng: &mut Rng,
) -> Result<GrayImage> {
    let clean = clean_module_render(avatar, mesh, tex, k)?;
    Ok(apply_domain(&clean, domain, rng))
}

/// Random crop/zoom/rotation jitter applied to training images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Maximum relative zoom, e.g. 0.08 for +-8%.
    pub zoom: f64,
    pub rotate_deg: f64,
    /// Maximum translation in pixels of the full-resolution image.
    pub shift_px: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            zoom: 0.08,
            rotate_deg: 5.0,
            shift_px: 4.0,
        }
    }
}

/// One drawn similarity transform (shared by every image of a training window).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub scale: f64,
    pub angle: f64,
    pub shift: [f64; 2],
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation {
            scale: 1.0,
            angle: 0.0,
            shift: [0.0, 0.0],
        }
    }

    pub fn draw(cfg: &AugmentConfig, rng: &mut Rng) -> Self {
        if !cfg.enabled {
            return Augmentation::identity();
        }
        Augmentation {
            scale: 1.0 + rng.uniform_range(-cfg.zoom, cfg.zoom),
            angle: rng.uniform_range(-cfg.rotate_deg, cfg.rotate_deg).to_radians(),
            shift: [rng.uniform_range(-cfg.shift_px, cfg.shift_px), rng.uniform_range(-cfg.shift_px, cfg.shift_px)],
        }
    }

    /// Resample `img` through the transform (about the image center).
    pub fn apply(&self, img: &GrayImage) -> GrayImage {
        if *self == Augmentation::identity() {
            return img.clone();
        }
        let (cx, cy) = (img.width as f64 / 2.0, img.height as f64 / 2.0);
        let (s, c) = self.angle.sin_cos();
        let mut data = Vec::with_capacity(img.data.len());
        for y in 0..img.height {
            for x in 0..img.width {
                // inverse map: output pixel -> source pixel
                let ox = x as f64 + 0.5 - cx - self.shift[0];
                let oy = y as f64 + 0.5 - cy - self.shift[1];
                let sx = (c * ox + s * oy) / self.scale + cx;
                let sy = (-s * ox + c * oy) / self.scale + cy;
                data.push(img.sample(sx, sy) as f32);
            }
        }
        GrayImage {
            width: img.width,
            height: img.height,
            data,
        }
    }
}

/// Average-pool by `factor` and standardize to zero mean, unit variance.
pub fn preprocess(img: &GrayImage, factor: usize) -> Vec<f64> {
    let f = factor.max(1);
    let (w, h) = (img.width / f, img.height / f);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    s += img.get(x * f + dx, y * f + dy) as f64;
                }
            }
            out.push(s / (f * f) as f64);
        }
    }
    let n = out.len() as f64;
    let mean = out.iter().sum::<f64>() / n;
    let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-6;
    for v in &mut out {
        *v = (*v - mean) / sd;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::{AvatarConfig, ExpressionParams};

    fn avatar() -> Avatar {
        Avatar::new(AvatarConfig::default()).unwrap()
    }

    #[test]
    fn identity_domain_returns_clean_render() {
        let a = avatar();
        let mut rng = Rng::new(3);
        for k in 0..MODULES {
            let clean = clean_module_render(&a, &a.template, &a.base_texture, k).unwrap();
            let img = simulate_headset_capture(&a, &a.template, &a.base_texture, k, &DomainParams::identity(), &mut rng).unwrap();
            assert_eq!(img, clean);
            assert!(clean.data.iter().filter(|v| **v > 0.0).count() > clean.data.len() / 2);
        }
    }

    #[test]
    fn zero_gain_gives_constant_image() {
        let a = avatar();
        let d = DomainParams {
            gain: 0.0,
            bias: 0.1,
            vignette: 0.3,
            noise: 0.0,
            background: 0.05,
        };
        let img = simulate_headset_capture(&a, &a.template, &a.base_texture, 2, &d, &mut Rng::new(0)).unwrap();
        let expect = (0.1f64 + 0.05) as f32;
        assert!(img.data.iter().all(|v| *v == expect));
    }

    #[test]
    fn sessions_differ_but_clean_renders_match() {
        let a = avatar();
        let mut p = ExpressionParams::rest();
        p.jaw = 0.4;
        let (m, t) = a.synthesize(&p).unwrap();
        let d1 = DomainParams::sample(&mut Rng::new(1));
        let d2 = DomainParams::sample(&mut Rng::new(2));
        let i1 = simulate_headset_capture(&a, &m, &t, 2, &d1, &mut Rng::new(10)).unwrap();
        let i2 = simulate_headset_capture(&a, &m, &t, 2, &d2, &mut Rng::new(11)).unwrap();
        assert_ne!(i1, i2);
        let c1 = clean_module_render(&a, &m, &t, 2).unwrap();
        let c2 = clean_module_render(&a, &m, &t, 2).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn eye_cameras_see_mirrored_images_on_symmetric_face() {
        let a = avatar();
        let l = clean_module_render(&a, &a.template, &a.base_texture, 0).unwrap();
        let r = clean_module_render(&a, &a.template, &a.base_texture, 1).unwrap();
        let f = r.flipped();
        let diff: f64 = l.data.iter().zip(&f.data).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / l.data.len() as f64;
        assert!(diff < 0.01, "mean mirrored difference {diff}");
    }

    #[test]
    fn identity_augmentation_is_a_no_op_and_preprocess_standardizes() {
        let img = GrayImage::new(8, 8, (0..64).map(|i| i as f32 / 64.0).collect()).unwrap();
        assert_eq!(Augmentation::identity().apply(&img), img);
        let v = preprocess(&img, 4);
        assert_eq!(v.len(), 4);
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
    }
}
