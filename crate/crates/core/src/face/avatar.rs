//! Template geometry, uv atlas and module masks for one synthetic identity.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::expression::{paint_features, ExpressionParams, FeatureLayout};
use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Number of face modules (left eye, right eye, lower face).
pub const MODULES: usize = 3;
pub const MODULE_NAMES: [&str; MODULES] = ["left-eye", "right-eye", "lower-face"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvatarConfig {
    /// Vertices per side of the face grid; `G = grid^2`.
    pub grid: usize,
    /// Texture map side length; `T = texture_size^2`.
    pub texture_size: usize,
    /// Side length of frontal renders used by the loss-free metrics.
    pub render_size: usize,
    /// Side length of each headset camera image.
    pub image_size: usize,
    pub identity_seed: u64,
    /// Mirror-symmetric identity (shape and skin).
    pub symmetric: bool,
    /// Chin displacement at full jaw opening, in model units.
    pub jaw_max: f64,
    pub lid_amplitude: f64,
    pub brow_amplitude: f64,
    pub mouth_amplitude: f64,
}

impl Default for AvatarConfig {
    fn default() -> Self {
        AvatarConfig {
            grid: 19,
            texture_size: 32,
            render_size: 64,
            image_size: 64,
            identity_seed: 1,
            symmetric: true,
            jaw_max: 0.22,
            lid_amplitude: 0.05,
            brow_amplitude: 0.05,
            mouth_amplitude: 0.05,
        }
    }
}

impl AvatarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 5 {
            return Err(Error::Config(format!("avatar.grid must be >= 5, got {}", self.grid)));
        }
        if self.texture_size < 4 || self.render_size < 8 || self.image_size < 8 {
            return Err(Error::Config("avatar resolutions too small".into()));
        }
        if !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!("avatar.image_size must be a multiple of 4, got {}", self.image_size)));
        }
        for (name, v) in [
            ("jaw_max", self.jaw_max),
            ("lid_amplitude", self.lid_amplitude),
            ("brow_amplitude", self.brow_amplitude),
            ("mouth_amplitude", self.mouth_amplitude),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("avatar.{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Arc<Vec<[usize; 3]>>,
}

/// Row-major texels; texel `(x, y)` sits at uv `((x+.5)/size, (y+.5)/size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub size: usize,
    pub texels: Vec<[f64; 3]>,
}

impl TextureMap {
    pub fn filled(size: usize, rgb: [f64; 3]) -> Self {
        TextureMap {
            size,
            texels: vec![rgb; size * size],
        }
    }

    pub fn texel_uv(&self, index: usize) -> [f64; 2] {
        texel_uv(self.size, index)
    }
}

pub fn texel_uv(size: usize, index: usize) -> [f64; 2] {
    let x = index % size;
    let y = index / size;
    [(x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64]
}

/// Per-vertex uv coordinates and the texel -> nearest-vertex ownership map.
#[derive(Debug, Clone, PartialEq)]
pub struct UvAtlas {
    pub uv: Vec<[f64; 2]>,
    pub texture_size: usize,
    /// Owner vertex of every texel (uv-nearest, ties to the lowest index).
    pub owner: Vec<usize>,
    /// Number of texels owned by each vertex.
    pub counts: Vec<usize>,
}

impl UvAtlas {
    pub fn new(uv: Vec<[f64; 2]>, texture_size: usize) -> Self {
        let t = texture_size * texture_size;
        let mut owner = Vec::with_capacity(t);
        for i in 0..t {
            let p = texel_uv(texture_size, i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (vi, q) in uv.iter().enumerate() {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = vi;
                }
            }
            owner.push(best);
        }
        let mut counts = vec![0; uv.len()];
        for &o in &owner {
            counts[o] += 1;
        }
        UvAtlas {
            uv,
            texture_size,
            owner,
            counts,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.uv.len()
    }

    pub fn texel_count(&self) -> usize {
        self.owner.len()
    }

    /// Owner of the texel containing `uv`.
    pub fn owner_at(&self, uv: [f64; 2]) -> usize {
        let s = self.texture_size;
        let x = ((uv[0] * s as f64).floor() as isize).clamp(0, s as isize - 1) as usize;
        let y = ((uv[1] * s as f64).floor() as isize).clamp(0, s as isize - 1) as usize;
        self.owner[y * s + x]
    }
}

/// Fixed vertex set of one face module, with the texels those vertices own.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleMask {
    pub index: usize,
    pub name: &'static str,
    pub vertices: Vec<usize>,
    pub vertex_flags: Vec<bool>,
    pub texel_flags: Vec<bool>,
}

impl ModuleMask {
    pub fn contains_vertex(&self, v: usize) -> bool {
        self.vertex_flags[v]
    }
}

/// Flat layout of a face: `3G` geometry values followed by `3T` texture values.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceLayout {
    pub vertices: usize,
    pub texels: usize,
    /// Per-element weights of the reconstruction loss: 1 on geometry and
    /// `1/n_owner` on texture, so the weighted squared error is the squared
    /// geometry L2 norm plus the sum of vertex-pooled texture errors.
    pub loss_weights: Vec<f64>,
}

impl FaceLayout {
    pub fn len(&self) -> usize {
        3 * self.vertices + 3 * self.texels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn geometry_len(&self) -> usize {
        3 * self.vertices
    }

    pub fn vertex_of_element(&self, e: usize, atlas: &UvAtlas) -> usize {
        if e < 3 * self.vertices {
            e / 3
        } else {
            atlas.owner[(e - 3 * self.vertices) / 3]
        }
    }
}

/// Eye/mouth anchor vertices used for read-back of knob effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks {
    pub eye_center: [[f64; 2]; 2],
    pub upper_lid: [usize; 2],
    pub lower_lid: [usize; 2],
    pub chin: usize,
    pub mouth_center: [f64; 2],
}

/// One synthetic identity: topology, rest pose, atlas and masks.
#[derive(Debug, Clone)]
pub struct Avatar {
    pub config: AvatarConfig,
    pub template: FaceMesh,
    pub base_texture: TextureMap,
    pub skin_texture: TextureMap,
    pub atlas: UvAtlas,
    pub masks: Vec<ModuleMask>,
    pub layout: FaceLayout,
    pub landmarks: Landmarks,
    pub(crate) features: FeatureLayout,
}

fn nearest_vertex(uv: &[[f64; 2]], p: [f64; 2]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, q) in uv.iter().enumerate() {
        let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// Upper bound (in uv) of the eye modules and lower bound of the lower face.
pub const EYE_MASK_MAX_V: f64 = 0.612;
pub const LOWER_MASK_MIN_V: f64 = 0.555;

impl Avatar {
    pub fn new(config: AvatarConfig) -> Result<Self> {
        config.validate()?;
        let n = config.grid;
        let step = 1.0 / (n - 1) as f64;
        let mut uv = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                uv.push([i as f64 * step, j as f64 * step]);
            }
        }
        let mut faces = Vec::with_capacity(2 * (n - 1) * (n - 1));
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let a = j * n + i;
                let b = a + 1;
                let c = a + n;
                let d = c + 1;
                faces.push([a, b, c]);
                faces.push([b, d, c]);
            }
        }

        let mut rng = Rng::new(config.identity_seed).split_named("identity-shape");
        // low-frequency identity bumps; mirrored when symmetric
        let bumps: Vec<([f64; 2], f64, f64)> = (0..4)
            .map(|_| {
                let c = [rng.uniform_range(0.1, 0.45), rng.uniform_range(0.1, 0.9)];
                (c, rng.uniform_range(0.12, 0.25), rng.uniform_range(-0.03, 0.03))
            })
            .collect();
        let shape_at = |p: [f64; 2]| -> f64 {
            let mut z = 0.0;
            for &(c, r, a) in &bumps {
                let mut add = |cx: f64| {
                    let d2 = ((p[0] - cx).powi(2) + (p[1] - c[1]).powi(2)) / (r * r);
                    z += a * (-d2).exp();
                };
                add(c[0]);
                if config.symmetric {
                    add(1.0 - c[0]);
                }
            }
            z
        };
        let vertices: Vec<[f64; 3]> = uv
            .iter()
            .map(|&p| {
                let x = (p[0] - 0.5) * 1.8;
                let y = (0.5 - p[1]) * 1.98;
                let bulge = 0.35 * (1.0 - 0.5 * (x * x / 0.81 + y * y / 0.98));
                let nose = 0.14 * (-((x * x) / 0.006 + (y + 0.1).powi(2) / 0.05)).exp();
                [x, y, bulge + nose + shape_at(p)]
            })
            .collect();
        let template = FaceMesh {
            vertices,
            faces: Arc::new(faces),
        };

        let atlas = UvAtlas::new(uv.clone(), config.texture_size);

        let eps = 1e-9;
        let eye_l: Vec<bool> = uv.iter().map(|p| p[0] <= 0.5 + eps && p[1] <= EYE_MASK_MAX_V).collect();
        let eye_r: Vec<bool> = uv.iter().map(|p| p[0] >= 0.5 - eps && p[1] <= EYE_MASK_MAX_V).collect();
        let lower: Vec<bool> = uv.iter().map(|p| p[1] >= LOWER_MASK_MIN_V).collect();
        let masks = [eye_l, eye_r, lower]
            .into_iter()
            .enumerate()
            .map(|(k, flags)| {
                let texel_flags = atlas.owner.iter().map(|&o| flags[o]).collect();
                ModuleMask {
                    index: k,
                    name: MODULE_NAMES[k],
                    vertices: flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect(),
                    vertex_flags: flags,
                    texel_flags,
                }
            })
            .collect::<Vec<_>>();

        let eye_center = [[1.0 / 3.0, 0.3889], [2.0 / 3.0, 0.3889]];
        let lid_offset = 0.0556;
        let upper_lid = [
            nearest_vertex(&uv, [eye_center[0][0], eye_center[0][1] - lid_offset]),
            nearest_vertex(&uv, [eye_center[1][0], eye_center[1][1] - lid_offset]),
        ];
        let lower_lid = [
            nearest_vertex(&uv, [eye_center[0][0], eye_center[0][1] + lid_offset]),
            nearest_vertex(&uv, [eye_center[1][0], eye_center[1][1] + lid_offset]),
        ];
        let chin = nearest_vertex(&uv, [0.5, 1.0]);
        let landmarks = Landmarks {
            eye_center,
            upper_lid,
            lower_lid,
            chin,
            mouth_center: [0.5, 0.778],
        };

        let g = uv.len();
        let t = atlas.texel_count();
        let mut loss_weights = vec![1.0; 3 * g];
        for &o in &atlas.owner {
            let w = 1.0 / atlas.counts[o] as f64;
            loss_weights.extend_from_slice(&[w, w, w]);
        }
        let layout = FaceLayout {
            vertices: g,
            texels: t,
            loss_weights,
        };

        let features = FeatureLayout::new(&config, &atlas.uv, &landmarks);
        let skin_texture = skin_texture(&config);
        let mut base_texture = skin_texture.clone();
        paint_features(&features, &mut base_texture, &ExpressionParams::rest(), None);

        Ok(Avatar {
            config,
            template,
            base_texture,
            skin_texture,
            atlas,
            masks,
            layout,
            landmarks,
            features,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertices.len()
    }

    pub fn texel_count(&self) -> usize {
        self.atlas.texel_count()
    }

    pub fn uv(&self) -> &[[f64; 2]] {
        &self.atlas.uv
    }

    /// Flatten a face into the `FaceLayout` order.
    pub fn flatten(&self, mesh: &FaceMesh, tex: &TextureMap) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout.len());
        for p in &mesh.vertices {
            v.extend_from_slice(p);
        }
        for c in &tex.texels {
            v.extend_from_slice(c);
        }
        v
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<(FaceMesh, TextureMap)> {
        if flat.len() != self.layout.len() {
            return Err(Error::shape("face vector", &[self.layout.len()], &[flat.len()]));
        }
        let g = self.layout.vertices;
        let vertices = flat[..3 * g].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let texels = flat[3 * g..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok((
            FaceMesh {
                vertices,
                faces: self.template.faces.clone(),
            },
            TextureMap {
                size: self.config.texture_size,
                texels,
            },
        ))
    }

    /// Rest face (template mesh + base texture) as a flat vector.
    pub fn rest_vector(&self) -> Vec<f64> {
        self.flatten(&self.template, &self.base_texture)
    }

    /// Flat-vector element flags covered by module `k`.
    pub fn element_mask(&self, k: usize) -> Vec<bool> {
        let m = &self.masks[k];
        let mut flags = Vec::with_capacity(self.layout.len());
        for &f in &m.vertex_flags {
            flags.extend_from_slice(&[f, f, f]);
        }
        for &f in &m.texel_flags {
            flags.extend_from_slice(&[f, f, f]);
        }
        flags
    }

    /// Module mask uv centroid and equal-area squared radius.
    pub fn module_extent(&self, k: usize) -> ([f64; 2], f64) {
        let m = &self.masks[k];
        let n = m.vertices.len() as f64;
        let (mut cu, mut cv) = (0.0, 0.0);
        for &v in &m.vertices {
            cu += self.atlas.uv[v][0];
            cv += self.atlas.uv[v][1];
        }
        let centroid = [cu / n, cv / n];
        let area = m.texel_flags.iter().filter(|f| **f).count() as f64 / self.texel_count() as f64;
        (centroid, area / std::f64::consts::PI)
    }
}

fn skin_texture(config: &AvatarConfig) -> TextureMap {
    let mut rng = Rng::new(config.identity_seed).split_named("identity-skin");
    let tone = [
        0.86 + rng.uniform_range(-0.04, 0.04),
        0.66 + rng.uniform_range(-0.04, 0.04),
        0.56 + rng.uniform_range(-0.04, 0.04),
    ];
    let blobs: Vec<([f64; 2], f64, f64)> = (0..6)
        .map(|_| {
            (
                [rng.uniform_range(0.05, 0.45), rng.uniform_range(0.05, 0.95)],
                rng.uniform_range(0.03, 0.1),
                rng.uniform_range(-0.06, 0.06),
            )
        })
        .collect();
    let s = config.texture_size;
    let texels = (0..s * s)
        .map(|i| {
            let p = texel_uv(s, i);
            let mut shade = 0.0;
            for &(c, r, a) in &blobs {
                let mut add = |cx: f64| {
                    let d2 = ((p[0] - cx).powi(2) + (p[1] - c[1]).powi(2)) / (r * r);
                    shade += a * (-d2).exp();
                };
                add(c[0]);
                if config.symmetric {
                    add(1.0 - c[0]);
                } else {
                    add(c[0] + 0.5);
                }
            }
            // cheek blush
            let blush = 0.06
                * ((-((p[0] - 0.25).powi(2) + (p[1] - 0.62).powi(2)) / 0.006).exp()
                    + (-((p[0] - 0.75).powi(2) + (p[1] - 0.62).powi(2)) / 0.006).exp());
            // static brows
            let brow = |cx: f64| (-((p[0] - cx).powi(2) / 0.006 + (p[1] - 0.25).powi(2) / 0.0004)).exp();
            let brows = 0.45 * (brow(1.0 / 3.0) + brow(2.0 / 3.0));
            // nostrils
            let nostril = |cx: f64| (-((p[0] - cx).powi(2) + (p[1] - 0.64).powi(2)) / 0.0005).exp();
            let nostrils = 0.3 * (nostril(0.46) + nostril(0.54));
            let dark = (brows + nostrils).min(0.8);
            [
                ((tone[0] + shade + blush) * (1.0 - dark)),
                ((tone[1] + shade) * (1.0 - dark)),
                ((tone[2] + shade) * (1.0 - dark)),
            ]
        })
        .collect();
    TextureMap { size: s, texels }
}
