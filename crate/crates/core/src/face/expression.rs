//! Semantic expression knobs and the blendshape/texture generator.

use serde::{Deserialize, Serialize};

use super::avatar::{Avatar, AvatarConfig, FaceMesh, Landmarks, TextureMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Knob {
    LeftEye,
    RightEye,
    LeftBrow,
    RightBrow,
    Jaw,
    Stretch,
    Smile,
    GazeX,
    GazeY,
}

impl Knob {
    pub const ALL: [Knob; 9] = [
        Knob::LeftEye,
        Knob::RightEye,
        Knob::LeftBrow,
        Knob::RightBrow,
        Knob::Jaw,
        Knob::Stretch,
        Knob::Smile,
        Knob::GazeX,
        Knob::GazeY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Knob::LeftEye => "left-eye",
            Knob::RightEye => "right-eye",
            Knob::LeftBrow => "left-brow",
            Knob::RightBrow => "right-brow",
            Knob::Jaw => "jaw",
            Knob::Stretch => "stretch",
            Knob::Smile => "smile",
            Knob::GazeX => "gaze-x",
            Knob::GazeY => "gaze-y",
        }
    }

    /// Owning module; gaze is shared by both eye modules and returns `None`.
    pub fn module(self) -> Option<usize> {
        match self {
            Knob::LeftEye | Knob::LeftBrow => Some(0),
            Knob::RightEye | Knob::RightBrow => Some(1),
            Knob::Jaw | Knob::Stretch | Knob::Smile => Some(2),
            Knob::GazeX | Knob::GazeY => None,
        }
    }
}

/// Knob values, each in `[-1, 1]`. Eye openness: `-1` closed, `0` relaxed, `1` wide.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpressionParams {
    pub left_eye: f64,
    pub right_eye: f64,
    pub left_brow: f64,
    pub right_brow: f64,
    pub jaw: f64,
    pub stretch: f64,
    pub smile: f64,
    pub gaze: [f64; 2],
}

impl ExpressionParams {
    pub const LEN: usize = 9;

    pub fn rest() -> Self {
        ExpressionParams::default()
    }

    pub fn get(&self, knob: Knob) -> f64 {
        match knob {
            Knob::LeftEye => self.left_eye,
            Knob::RightEye => self.right_eye,
            Knob::LeftBrow => self.left_brow,
            Knob::RightBrow => self.right_brow,
            Knob::Jaw => self.jaw,
            Knob::Stretch => self.stretch,
            Knob::Smile => self.smile,
            Knob::GazeX => self.gaze[0],
            Knob::GazeY => self.gaze[1],
        }
    }

    pub fn set(&mut self, knob: Knob, value: f64) {
        let slot = match knob {
            Knob::LeftEye => &mut self.left_eye,
            Knob::RightEye => &mut self.right_eye,
            Knob::LeftBrow => &mut self.left_brow,
            Knob::RightBrow => &mut self.right_brow,
            Knob::Jaw => &mut self.jaw,
            Knob::Stretch => &mut self.stretch,
            Knob::Smile => &mut self.smile,
            Knob::GazeX => &mut self.gaze[0],
            Knob::GazeY => &mut self.gaze[1],
        };
        *slot = value;
    }

    pub fn to_array(&self) -> [f64; 9] {
        Knob::ALL.map(|k| self.get(k))
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        let mut p = ExpressionParams::rest();
        for (k, v) in Knob::ALL.iter().zip(a) {
            p.set(*k, v);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        for k in Knob::ALL {
            let v = self.get(k);
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::KnobOutOfRange { knob: k.name(), value: v });
            }
        }
        Ok(())
    }

    /// Copy module `k`'s knobs from `other` (eye modules also take gaze).
    pub fn take_module(&mut self, k: usize, other: &ExpressionParams) {
        for knob in Knob::ALL {
            let owned = match knob.module() {
                Some(m) => m == k,
                None => k < 2,
            };
            if owned {
                self.set(knob, other.get(knob));
            }
        }
    }
}

/// Sparse per-vertex displacement of one knob, split by knob sign.
/// A knob value `x` adds `x * positive` when `x > 0` and `|x| * negative`
/// when `x < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnobField {
    pub knob: Knob,
    pub positive: Vec<(usize, [f64; 3])>,
    pub negative: Vec<(usize, [f64; 3])>,
}

impl KnobField {
    /// Displacement of `vertex` at knob value `x`.
    pub fn displacement(&self, vertex: usize, x: f64) -> [f64; 3] {
        let (table, s) = if x >= 0.0 { (&self.positive, x) } else { (&self.negative, -x) };
        table
            .iter()
            .find(|(v, _)| *v == vertex)
            .map(|(_, d)| [d[0] * s, d[1] * s, d[2] * s])
            .unwrap_or([0.0; 3])
    }
}

/// Uv-space placement of painted features plus geometric field tables.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FeatureLayout {
    pub eye_center: [[f64; 2]; 2],
    pub mouth_center: [f64; 2],
    pub fields: Vec<KnobField>,
}

/// Compact bump `(1 - (d/r)^2)^2`, exactly zero for `d >= r`.
fn bump(p: [f64; 2], c: [f64; 2], r: f64) -> f64 {
    let q = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (r * r);
    if q >= 1.0 {
        0.0
    } else {
        (1.0 - q) * (1.0 - q)
    }
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

const LID_RADIUS: f64 = 0.1;
const BROW_RADIUS: f64 = 0.12;
const BROW_V: f64 = 0.25;
const CORNER_RADIUS: f64 = 0.12;
const MOUTH_HALF_WIDTH: f64 = 0.11;
/// Aperture change per unit openness when closing / opening.
pub const LID_CLOSE_GAIN: f64 = 1.3;
pub const LID_OPEN_GAIN: f64 = 0.65;
const JAW_START_V: f64 = 0.62;
const CLENCH_RATIO: f64 = 0.25;

fn sparse(uv: &[[f64; 2]], f: impl Fn([f64; 2]) -> [f64; 3]) -> Vec<(usize, [f64; 3])> {
    uv.iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let d = f(p);
            (d != [0.0; 3]).then_some((i, d))
        })
        .collect()
}

/// Vertical jaw ramp times lateral falloff; 1 at the chin.
pub(crate) fn jaw_weight(p: [f64; 2]) -> f64 {
    let ramp = smoothstep((p[1] - JAW_START_V) / (1.0 - JAW_START_V));
    let lateral = (1.0 - ((p[0] - 0.5) / 0.5).powi(2)).max(0.0).powi(2);
    ramp * lateral
}

impl FeatureLayout {
    pub fn new(config: &AvatarConfig, uv: &[[f64; 2]], lm: &Landmarks) -> Self {
        let mut fields = Vec::new();
        for (e, knob) in [(0usize, Knob::LeftEye), (1, Knob::RightEye)] {
            let up = uv[lm.upper_lid[e]];
            let lo = uv[lm.lower_lid[e]];
            let a = config.lid_amplitude;
            let lid = |gain: f64| {
                move |p: [f64; 2]| [0.0, 0.5 * gain * a * (bump(p, up, LID_RADIUS) - bump(p, lo, LID_RADIUS)), 0.0]
            };
            fields.push(KnobField {
                knob,
                positive: sparse(uv, lid(LID_OPEN_GAIN)),
                negative: sparse(uv, lid(-LID_CLOSE_GAIN)),
            });
        }
        for (e, knob) in [(0usize, Knob::LeftBrow), (1, Knob::RightBrow)] {
            let c = [lm.eye_center[e][0], BROW_V];
            let a = config.brow_amplitude;
            let inward = if e == 0 { 1.0 } else { -1.0 };
            fields.push(KnobField {
                knob,
                positive: sparse(uv, |p| [0.0, a * bump(p, c, BROW_RADIUS), 0.0]),
                negative: sparse(uv, |p| {
                    let b = bump(p, c, BROW_RADIUS);
                    [0.3 * a * inward * b, -0.6 * a * b, 0.0]
                }),
            });
        }
        let jm = config.jaw_max;
        fields.push(KnobField {
            knob: Knob::Jaw,
            positive: sparse(uv, |p| [0.0, -jm * jaw_weight(p), 0.0]),
            negative: sparse(uv, |p| [0.0, CLENCH_RATIO * jm * jaw_weight(p), 0.0]),
        });
        let mc = lm.mouth_center;
        let corners = [[mc[0] - MOUTH_HALF_WIDTH, mc[1]], [mc[0] + MOUTH_HALF_WIDTH, mc[1]]];
        let ma = config.mouth_amplitude;
        let corner_sum = |p: [f64; 2], f: &dyn Fn(f64, f64) -> [f64; 3]| {
            let mut d = [0.0; 3];
            for (side, c) in [(-1.0, corners[0]), (1.0, corners[1])] {
                let b = bump(p, c, CORNER_RADIUS);
                if b > 0.0 {
                    let v = f(side, b);
                    for i in 0..3 {
                        d[i] += v[i];
                    }
                }
            }
            d
        };
        fields.push(KnobField {
            knob: Knob::Stretch,
            positive: sparse(uv, |p| corner_sum(p, &|s, b| [s * ma * b, 0.0, 0.0])),
            negative: sparse(uv, |p| corner_sum(p, &|s, b| [-0.5 * s * ma * b, 0.0, 0.2 * ma * b])),
        });
        fields.push(KnobField {
            knob: Knob::Smile,
            positive: sparse(uv, |p| corner_sum(p, &|s, b| [0.4 * s * ma * b, ma * b, 0.0])),
            negative: sparse(uv, |p| corner_sum(p, &|_, b| [0.0, -0.7 * ma * b, 0.0])),
        });
        FeatureLayout {
            eye_center: lm.eye_center,
            mouth_center: mc,
            fields,
        }
    }
}

/// Ramp from 1 (inside, `d <= -w/2`) to 0 (outside, `d >= w/2`).
fn inside(d: f64) -> f64 {
    const W: f64 = 0.012;
    (0.5 - d / W).clamp(0.0, 1.0)
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

const EYE_BOX: [f64; 4] = [-0.15, 0.15, -0.26, 0.15];
const MOUTH_BOX: [f64; 4] = [-0.22, 0.22, -0.11, 0.12];
const EYE_HALF_WIDTH: f64 = 0.1;
const APERTURE_REST: f64 = 0.048;

/// Which module's paint box contains `p`, if any. Boxes are disjoint.
fn paint_owner(f: &FeatureLayout, p: [f64; 2]) -> Option<usize> {
    let in_box = |c: [f64; 2], b: [f64; 4]| {
        let (du, dv) = (p[0] - c[0], p[1] - c[1]);
        du >= b[0] && du <= b[1] && dv >= b[2] && dv <= b[3]
    };
    if in_box(f.eye_center[0], EYE_BOX) {
        Some(0)
    } else if in_box(f.eye_center[1], EYE_BOX) {
        Some(1)
    } else if in_box(f.mouth_center, MOUTH_BOX) {
        Some(2)
    } else {
        None
    }
}

/// Eye half-aperture in uv at openness `o`.
fn aperture(o: f64) -> f64 {
    if o < 0.0 {
        APERTURE_REST * (1.0 + o)
    } else {
        APERTURE_REST * (1.0 + 0.5 * o)
    }
}

fn paint_eye(f: &FeatureLayout, e: usize, p: [f64; 2], skin: [f64; 3], ex: &ExpressionParams) -> [f64; 3] {
    let c = f.eye_center[e];
    let (open, brow) = if e == 0 { (ex.left_eye, ex.left_brow) } else { (ex.right_eye, ex.right_brow) };
    let (du, dv) = (p[0] - c[0], p[1] - c[1]);
    let mut col = skin;

    // brow: forehead lines when raised, inner crease when lowered
    let bu = du / 0.1;
    if bu.abs() < 1.0 {
        let fall = 1.0 - bu * bu;
        for line in [0.17, 0.2] {
            let d = (p[1] - line).abs() - 0.004;
            col = scale(col, 1.0 - 0.3 * brow.max(0.0) * fall * inside(d));
        }
    }
    let inner = c[0] + if e == 0 { 0.11 } else { -0.11 };
    if (0.22..=0.32).contains(&p[1]) {
        let d = (p[0] - inner).abs() - 0.004;
        col = scale(col, 1.0 - 0.35 * (-brow).max(0.0) * inside(d));
    }

    let t = 1.0 - (du / EYE_HALF_WIDTH).powi(2);
    if t <= 0.0 {
        return col;
    }
    let h = aperture(open);
    let upper = -h * t;
    let lower = 0.8 * h * t;
    // signed distance to the aperture (negative inside)
    let d_ap = (upper - dv).max(dv - lower);
    let a = inside(d_ap) * (h / APERTURE_REST).min(1.0);

    // eyelid skin band, darker as the lid closes
    let lid_extent = 1.6 * APERTURE_REST * t;
    let d_lid = dv.abs() - lid_extent;
    let closure = (-open).max(0.0);
    col = scale(col, 1.0 - (0.08 + 0.25 * closure) * inside(d_lid));

    let gaze = [c[0] + 0.035 * ex.gaze[0], c[1] + 0.015 * ex.gaze[1]];
    let r = ((p[0] - gaze[0]).powi(2) + (p[1] - gaze[1]).powi(2)).sqrt();
    let mut eye = [0.95, 0.94, 0.92];
    eye = lerp(eye, [0.28, 0.42, 0.56], inside(r - 0.036));
    eye = lerp(eye, [0.04, 0.04, 0.05], inside(r - 0.015));
    col = lerp(col, eye, a);

    // lash line along the lid margin
    let lash = inside(d_ap.abs() - 0.003) * inside(d_lid);
    lerp(col, [0.1, 0.07, 0.07], 0.8 * lash)
}

fn paint_mouth(f: &FeatureLayout, p: [f64; 2], skin: [f64; 3], ex: &ExpressionParams) -> [f64; 3] {
    let c = f.mouth_center;
    let half_w = MOUTH_HALF_WIDTH * (1.0 + 0.25 * ex.stretch);
    let du = (p[0] - c[0]) / half_w;
    let t = 1.0 - du * du;
    if t <= 0.0 {
        return skin;
    }
    let vc = c[1] - 0.035 * ex.smile * du * du;
    let h = if ex.jaw >= 0.0 { 0.004 + 0.05 * ex.jaw } else { 0.004 * (1.0 + 0.5 * ex.jaw) };
    let upper = vc - h * t;
    let lower = vc + 1.2 * h * t;
    let d_open = (upper - p[1]).max(p[1] - lower);
    let lip = 0.018 * t.sqrt();
    let mut col = lerp(skin, [0.72, 0.32, 0.34], inside(d_open - lip));
    let mut interior = [0.25, 0.05, 0.06];
    // teeth band hangs from the upper lip
    interior = lerp(interior, [0.93, 0.91, 0.85], inside(p[1] - (upper + 0.02)));
    col = lerp(col, interior, inside(d_open));
    col
}

/// Paint each module's features onto `tex`, which must hold the skin texture
/// in every paint box. `only` restricts painting to one module.
pub(crate) fn paint_features(f: &FeatureLayout, tex: &mut TextureMap, ex: &ExpressionParams, only: Option<usize>) {
    let size = tex.size;
    for (i, texel) in tex.texels.iter_mut().enumerate() {
        let p = super::avatar::texel_uv(size, i);
        let Some(m) = paint_owner(f, p) else { continue };
        if only.is_some_and(|k| k != m) {
            continue;
        }
        *texel = match m {
            0 | 1 => paint_eye(f, m, p, *texel, ex),
            _ => paint_mouth(f, p, *texel, ex),
        };
    }
}

/// Mesh and texture for `params` on `avatar`'s identity.
pub fn synth_expression(avatar: &Avatar, params: &ExpressionParams) -> Result<(FaceMesh, TextureMap)> {
    params.validate()?;
    let mut vertices = avatar.template.vertices.clone();
    for field in &avatar.features.fields {
        let x = params.get(field.knob);
        if x == 0.0 {
            continue;
        }
        let (table, s) = if x > 0.0 { (&field.positive, x) } else { (&field.negative, -x) };
        for (v, d) in table {
            for i in 0..3 {
                vertices[*v][i] += s * d[i];
            }
        }
    }
    let mut texture = avatar.skin_texture.clone();
    paint_features(&avatar.features, &mut texture, params, None);
    Ok((
        FaceMesh {
            vertices,
            faces: avatar.template.faces.clone(),
        },
        texture,
    ))
}

impl Avatar {
    pub fn displacement_field(&self, knob: Knob) -> Option<&KnobField> {
        self.features.fields.iter().find(|f| f.knob == knob)
    }

    pub fn synthesize(&self, params: &ExpressionParams) -> Result<(FaceMesh, TextureMap)> {
        synth_expression(self, params)
    }

    /// Vertical lid gap of eye `e` in model units.
    pub fn eye_aperture(&self, mesh: &FaceMesh, e: usize) -> f64 {
        mesh.vertices[self.landmarks.upper_lid[e]][1] - mesh.vertices[self.landmarks.lower_lid[e]][1]
    }

    /// Eye-openness knob read back from a mesh's lid gap (inverse of the lid
    /// field; unclamped so amplified faces can exceed 1).
    pub fn regress_eye_openness(&self, mesh: &FaceMesh, e: usize) -> f64 {
        let a = self.config.lid_amplitude;
        if a == 0.0 {
            return 0.0;
        }
        let d = self.eye_aperture(mesh, e) - self.eye_aperture(&self.template, e);
        if d >= 0.0 {
            d / (LID_OPEN_GAIN * a)
        } else {
            d / (LID_CLOSE_GAIN * a)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::AvatarConfig;

    fn avatar() -> Avatar {
        Avatar::new(AvatarConfig::default()).unwrap()
    }

    #[test]
    fn rest_pose_is_template_and_base() {
        let a = avatar();
        let (m, t) = a.synthesize(&ExpressionParams::rest()).unwrap();
        assert_eq!(m, a.template);
        assert_eq!(t, a.base_texture);
    }

    #[test]
    fn left_eye_knob_leaves_other_modules_untouched() {
        let a = avatar();
        let mut p = ExpressionParams::rest();
        p.left_eye = -1.0;
        p.left_brow = 0.7;
        let (m, t) = a.synthesize(&p).unwrap();
        let mut changed = 0;
        for v in 0..a.vertex_count() {
            if m.vertices[v] != a.template.vertices[v] {
                changed += 1;
                assert!(a.masks[0].contains_vertex(v));
            }
            if a.masks[1].contains_vertex(v) && !a.masks[0].contains_vertex(v) {
                assert_eq!(m.vertices[v], a.template.vertices[v]);
            }
        }
        assert!(changed > 0);
        for i in 0..a.texel_count() {
            if t.texels[i] != a.base_texture.texels[i] {
                assert!(a.masks[0].texel_flags[i], "texel {i} outside left-eye mask changed");
            }
        }
    }

    #[test]
    fn full_jaw_moves_chin_by_configured_maximum() {
        let a = avatar();
        let mut p = ExpressionParams::rest();
        p.jaw = 1.0;
        let (m, _) = a.synthesize(&p).unwrap();
        let chin = a.landmarks.chin;
        let table = a.displacement_field(Knob::Jaw).unwrap();
        let d = table.displacement(chin, 1.0);
        assert_eq!(d[1], -a.config.jaw_max);
        let moved = a.template.vertices[chin][1] - m.vertices[chin][1];
        assert!((moved - a.config.jaw_max).abs() < 1e-15);
    }

    #[test]
    fn openness_read_back_inverts_lid_field() {
        let a = avatar();
        for o in [-1.0, -0.4, 0.0, 0.3, 1.0] {
            let mut p = ExpressionParams::rest();
            p.right_eye = o;
            let (m, _) = a.synthesize(&p).unwrap();
            assert!((a.regress_eye_openness(&m, 1) - o).abs() < 1e-12);
            assert_eq!(a.regress_eye_openness(&m, 0), 0.0);
        }
    }

    #[test]
    fn out_of_range_knob_is_rejected() {
        let a = avatar();
        let mut p = ExpressionParams::rest();
        p.smile = 1.5;
        assert!(matches!(a.synthesize(&p), Err(Error::KnobOutOfRange { knob: "smile", .. })));
    }

    #[test]
    fn array_round_trip() {
        let p = ExpressionParams {
            left_eye: 0.1,
            right_eye: 0.2,
            left_brow: 0.3,
            right_brow: 0.4,
            jaw: 0.5,
            stretch: 0.6,
            smile: 0.7,
            gaze: [0.8, 0.9],
        };
        assert_eq!(ExpressionParams::from_array(p.to_array()), p);
    }
}
