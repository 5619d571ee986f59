//! Orthographic triangle rasterizer with bilinear texture lookup.

use serde::{Deserialize, Serialize};

use super::avatar::{Avatar, FaceMesh, TextureMap};
use crate::error::{Error, Result};

/// Unit direction from which the face is viewed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewDirection([f64; 3]);

impl ViewDirection {
    /// Frontal view `(0, 0, 1)`.
    pub const FRONTAL: ViewDirection = ViewDirection([0.0, 0.0, 1.0]);

    /// Normalizes `v`. Vectors already within 1e-12 of unit length are kept
    /// as-is so renormalizing a `ViewDirection` never changes its bits.
    pub fn new(v: [f64; 3]) -> Result<Self> {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidArgument(format!("view direction {v:?} has no direction")));
        }
        if (n - 1.0).abs() <= 1e-12 {
            return Ok(ViewDirection(v));
        }
        Ok(ViewDirection([v[0] / n, v[1] / n, v[2] / n]))
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn renormalized(&self) -> ViewDirection {
        ViewDirection::new(self.0).expect("unit vector stays valid")
    }
}

/// Orthographic camera looking along `-view`, centered on a point of the
/// image plane with a half-extent in model units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoCamera {
    pub view: ViewDirection,
    pub center: [f64; 2],
    pub half_extent: f64,
    pub width: usize,
    pub height: usize,
}

impl OrthoCamera {
    fn basis(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let v = self.view.0;
        // right = up_world x v, with up_world = +y
        let r = [v[2], 0.0, -v[0]];
        let rn = (r[0] * r[0] + r[2] * r[2]).sqrt();
        let right = if rn < 1e-12 { [1.0, 0.0, 0.0] } else { [r[0] / rn, 0.0, r[2] / rn] };
        let up = [
            v[1] * right[2] - v[2] * right[1],
            v[2] * right[0] - v[0] * right[2],
            v[0] * right[1] - v[1] * right[0],
        ];
        (right, up, v)
    }

    /// Screen position `(x, y)` in pixels and depth (larger is nearer).
    pub fn project(&self, p: [f64; 3]) -> [f64; 3] {
        let (r, u, v) = self.basis();
        self.project_with(p, r, u, v)
    }

    fn project_with(&self, p: [f64; 3], r: [f64; 3], u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
        let dot = |a: [f64; 3]| a[0] * p[0] + a[1] * p[1] + a[2] * p[2];
        let sx = (dot(r) - self.center[0]) / self.half_extent * (self.width as f64 / 2.0) + self.width as f64 / 2.0;
        let sy = self.height as f64 / 2.0 - (dot(u) - self.center[1]) / self.half_extent * (self.height as f64 / 2.0);
        [sx, sy, dot(v)]
    }

    /// Image-plane coordinates of a model point (before pixel mapping).
    pub fn plane_coords(&self, p: [f64; 3]) -> [f64; 2] {
        let (r, u, _) = self.basis();
        [
            r[0] * p[0] + r[1] * p[1] + r[2] * p[2],
            u[0] * p[0] + u[1] * p[1] + u[2] * p[2],
        ]
    }

    /// Model-space length of one pixel.
    pub fn pixel_size(&self) -> f64 {
        2.0 * self.half_extent / self.width as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    /// RGB in `[0, 1]`, black where uncovered.
    pub rgb: Vec<[f64; 3]>,
    pub covered: Vec<bool>,
    /// Interpolated uv where covered, `[0, 0]` elsewhere.
    pub uv: Vec<[f64; 2]>,
}

impl RenderedImage {
    pub fn grey(&self) -> Vec<f64> {
        self.rgb.iter().map(|c| (c[0] + c[1] + c[2]) / 3.0).collect()
    }

    pub fn covered_count(&self) -> usize {
        self.covered.iter().filter(|c| **c).count()
    }
}

/// Bilinear lookup with edge clamping; texel centers at `(i + 0.5) / size`.
pub fn sample_texture(tex: &TextureMap, uv: [f64; 2]) -> [f64; 3] {
    let s = tex.size as f64;
    let x = (uv[0] * s - 0.5).clamp(0.0, s - 1.0);
    let y = (uv[1] * s - 0.5).clamp(0.0, s - 1.0);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(tex.size - 1);
    let y1 = (y0 + 1).min(tex.size - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let t = |xx: usize, yy: usize| tex.texels[yy * tex.size + xx];
    let (a, b, c, d) = (t(x0, y0), t(x1, y0), t(x0, y1), t(x1, y1));
    let mut out = [0.0; 3];
    for i in 0..3 {
        let top = a[i] + (b[i] - a[i]) * fx;
        let bot = c[i] + (d[i] - c[i]) * fx;
        out[i] = top + (bot - top) * fy;
    }
    out
}

/// Rasterize `mesh` with per-vertex `uv` and `tex` through `camera`.
///
/// Coverage is inclusive on edges, the depth test keeps strictly nearer
/// fragments (first triangle wins ties), and projected triangles with zero
/// area are skipped.
pub fn render(mesh: &FaceMesh, uv: &[[f64; 2]], tex: &TextureMap, camera: &OrthoCamera) -> Result<RenderedImage> {
    if uv.len() != mesh.vertices.len() {
        return Err(Error::shape("render uv", &[mesh.vertices.len(), 2], &[uv.len(), 2]));
    }
    let (w, h) = (camera.width, camera.height);
    let (r, u, v) = camera.basis();
    let proj: Vec<[f64; 3]> = mesh.vertices.iter().map(|&p| camera.project_with(p, r, u, v)).collect();
    let mut depth = vec![f64::NEG_INFINITY; w * h];
    let mut out_uv = vec![[0.0; 2]; w * h];
    let mut covered = vec![false; w * h];

    for f in mesh.faces.iter() {
        let (a, b, c) = (proj[f[0]], proj[f[1]], proj[f[2]]);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if area.abs() < 1e-12 || !area.is_finite() {
            continue;
        }
        let minx = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let maxx = (a[0].max(b[0]).max(c[0]).ceil().min(w as f64 - 1.0)).max(-1.0);
        let miny = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let maxy = (a[1].max(b[1]).max(c[1]).ceil().min(h as f64 - 1.0)).max(-1.0);
        if maxx < 0.0 || maxy < 0.0 {
            continue;
        }
        let (maxx, maxy) = (maxx as usize, maxy as usize);
        for py in miny..=maxy {
            let y = py as f64 + 0.5;
            for px in minx..=maxx {
                let x = px as f64 + 0.5;
                let w0 = ((b[0] - x) * (c[1] - y) - (c[0] - x) * (b[1] - y)) / area;
                let w1 = ((c[0] - x) * (a[1] - y) - (a[0] - x) * (c[1] - y)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                let idx = py * w + px;
                if z > depth[idx] {
                    depth[idx] = z;
                    covered[idx] = true;
                    let (ua, ub, uc) = (uv[f[0]], uv[f[1]], uv[f[2]]);
                    out_uv[idx] = [
                        w0 * ua[0] + w1 * ub[0] + w2 * uc[0],
                        w0 * ua[1] + w1 * ub[1] + w2 * uc[1],
                    ];
                }
            }
        }
    }
    let rgb = covered
        .iter()
        .zip(&out_uv)
        .map(|(&cov, &t)| {
            if cov {
                let c = sample_texture(tex, t);
                [c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0), c[2].clamp(0.0, 1.0)]
            } else {
                [0.0; 3]
            }
        })
        .collect();
    Ok(RenderedImage {
        width: w,
        height: h,
        rgb,
        covered,
        uv: out_uv,
    })
}

impl Avatar {
    /// Frontal camera framing the whole face including full jaw travel.
    pub fn frontal_camera(&self, view: ViewDirection) -> OrthoCamera {
        OrthoCamera {
            view,
            center: [0.0, -0.12],
            half_extent: 1.15,
            width: self.config.render_size,
            height: self.config.render_size,
        }
    }

    /// Oblique headset camera of module `k`. The right-eye camera mirrors
    /// the left-eye one through the `x = 0` plane.
    pub fn module_camera(&self, k: usize) -> OrthoCamera {
        let (dir, anchor, half) = match k {
            0 | 1 => {
                let c = self.landmarks.eye_center[k];
                let s = if k == 0 { -1.0 } else { 1.0 };
                ([s * 0.25, -0.3, 1.0], [c[0], c[1] - 0.03], 0.42)
            }
            _ => ([0.0, -0.45, 1.0], [0.5, 0.8], 0.62),
        };
        let view = ViewDirection::new(dir).expect("fixed camera direction");
        let p = self.template_point(anchor);
        let mut cam = OrthoCamera {
            view,
            center: [0.0, 0.0],
            half_extent: half,
            width: self.config.image_size,
            height: self.config.image_size,
        };
        cam.center = cam.plane_coords(p);
        cam
    }

    /// Template position at uv `p` (nearest vertex).
    fn template_point(&self, p: [f64; 2]) -> [f64; 3] {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, q) in self.atlas.uv.iter().enumerate() {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if d < bd {
                bd = d;
                best = i;
            }
        }
        self.template.vertices[best]
    }

    pub fn render_frontal(&self, mesh: &FaceMesh, tex: &TextureMap, view: ViewDirection) -> Result<RenderedImage> {
        render(mesh, &self.atlas.uv, tex, &self.frontal_camera(view))
    }

    /// Frontal render of the rest face; its uv buffer defines module regions.
    pub fn rest_render(&self) -> Result<RenderedImage> {
        self.render_frontal(&self.template, &self.base_texture, ViewDirection::FRONTAL)
    }
}

pub fn render_frontal(avatar: &Avatar, mesh: &FaceMesh, tex: &TextureMap, view: ViewDirection) -> Result<RenderedImage> {
    avatar.render_frontal(mesh, tex, view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::AvatarConfig;
    use std::sync::Arc;

    fn avatar() -> Avatar {
        Avatar::new(AvatarConfig::default()).unwrap()
    }

    #[test]
    fn white_texture_renders_white() {
        let a = avatar();
        let tex = TextureMap::filled(a.config.texture_size, [1.0; 3]);
        let img = a.render_frontal(&a.template, &tex, ViewDirection::FRONTAL).unwrap();
        assert!(img.covered_count() > 1000);
        for (c, cov) in img.rgb.iter().zip(&img.covered) {
            if *cov {
                assert_eq!(*c, [1.0; 3]);
            } else {
                assert_eq!(*c, [0.0; 3]);
            }
        }
    }

    #[test]
    fn renormalized_view_renders_identically() {
        let a = avatar();
        let v = ViewDirection::new([0.1, -0.2, 1.0]).unwrap();
        let r1 = a.render_frontal(&a.template, &a.base_texture, v).unwrap();
        let r2 = a.render_frontal(&a.template, &a.base_texture, v.renormalized()).unwrap();
        assert_eq!(v, v.renormalized());
        assert_eq!(r1, r2);
    }

    #[test]
    fn one_pixel_translation_shifts_image() {
        let a = avatar();
        let cam = a.frontal_camera(ViewDirection::FRONTAL);
        let shift = cam.pixel_size();
        let moved = FaceMesh {
            vertices: a.template.vertices.iter().map(|p| [p[0] + shift, p[1], p[2]]).collect(),
            faces: Arc::clone(&a.template.faces),
        };
        let r0 = render(&a.template, a.uv(), &a.base_texture, &cam).unwrap();
        let r1 = render(&moved, a.uv(), &a.base_texture, &cam).unwrap();
        let w = cam.width;
        let mut checked = 0;
        for y in 1..cam.height - 1 {
            for x in 1..w - 2 {
                let i = y * w + x;
                // interior: pixel and its neighbours covered in both renders
                let interior = [i - 1, i, i + 1, i - w, i + w].iter().all(|&j| r0.covered[j]);
                if interior {
                    assert!(r1.covered[i + 1]);
                    for c in 0..3 {
                        assert!((r0.rgb[i][c] - r1.rgb[i + 1][c]).abs() < 1e-9);
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn degenerate_triangles_are_skipped() {
        let mesh = FaceMesh {
            vertices: vec![[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]],
            faces: Arc::new(vec![[0, 1, 2]]),
        };
        let cam = OrthoCamera {
            view: ViewDirection::FRONTAL,
            center: [0.0, 0.0],
            half_extent: 1.0,
            width: 8,
            height: 8,
        };
        let tex = TextureMap::filled(2, [1.0; 3]);
        let img = render(&mesh, &[[0.0; 2]; 3], &tex, &cam).unwrap();
        assert_eq!(img.covered_count(), 0);
    }

    #[test]
    fn nearer_triangle_wins_depth_test() {
        let mesh = FaceMesh {
            vertices: vec![
                [-1.0, -1.0, 0.0],
                [1.0, -1.0, 0.0],
                [0.0, 1.0, 0.0],
                [-1.0, -1.0, 0.5],
                [1.0, -1.0, 0.5],
                [0.0, 1.0, 0.5],
            ],
            faces: Arc::new(vec![[0, 1, 2], [3, 4, 5]]),
        };
        let uv = [[0.25, 0.5], [0.25, 0.5], [0.25, 0.5], [0.75, 0.5], [0.75, 0.5], [0.75, 0.5]];
        let tex = TextureMap {
            size: 2,
            texels: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        };
        let cam = OrthoCamera {
            view: ViewDirection::FRONTAL,
            center: [0.0, 0.0],
            half_extent: 1.0,
            width: 8,
            height: 8,
        };
        let img = render(&mesh, &uv, &tex, &cam).unwrap();
        let center = 4 * 8 + 4;
        assert_eq!(img.rgb[center], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn eye_cameras_mirror_each_other() {
        let a = avatar();
        let (l, r) = (a.module_camera(0), a.module_camera(1));
        let vl = l.view.as_array();
        let vr = r.view.as_array();
        assert_eq!(vl[0], -vr[0]);
        assert!((l.center[0] + r.center[0]).abs() < 1e-12);
        assert!((l.center[1] - r.center[1]).abs() < 1e-12);
    }
}
