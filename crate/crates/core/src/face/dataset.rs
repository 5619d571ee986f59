//! Synthetic dome and headset splits, and their on-disk layout.
//!
//! ```text
//! <dir>/meta.json                    counts, seeds, resolutions, configs
//! <dir>/dome/frames.bin              knobs + mesh + texture per frame
//! <dir>/sessions/<id>/frames.bin     headset sequence of one session
//! <dir>/compositional/frames.bin     held-out compositional sequence
//! ```
//!
//! Every `.bin` starts with `b"MCAD"`, a version byte and a kind byte;
//! integers are `u32` and reals `f64` (images `f32`), all little-endian.
//! Dome record: 9 knobs, `3G` vertex coordinates, `3T` texel channels.
//! Headset header: session id, 5 domain params, count, K, width, height;
//! record: timestamp, capture id, sequence id, 9 knobs, K images.
//! Headset ground-truth faces are not stored: they are regenerated from the
//! knobs, which is exact because synthesis is deterministic.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::avatar::{Avatar, AvatarConfig, FaceMesh, TextureMap, MODULES, MODULE_NAMES};
use super::expression::ExpressionParams;
use super::headset::{apply_domain, clean_module_render, DomainParams, GrayImage};
use crate::error::{Error, Result};
use crate::numeric::Rng;
use crate::par::{self, Exec};

pub const DATA_MAGIC: &[u8; 4] = b"MCAD";
pub const DATA_VERSION: u8 = 1;
const KIND_DOME: u8 = 0;
const KIND_SESSION: u8 = 1;
const KIND_COMPOSITIONAL: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub dome_frames: usize,
    /// Total headset sessions; the last one is the test session.
    pub sessions: usize,
    pub train_session_frames: usize,
    pub test_session_frames: usize,
    pub compositional_frames: usize,
    /// Frames between expression keyframes along headset trajectories.
    pub keyframe_interval: usize,
    /// Largest |left - right| eye-openness gap allowed in training data.
    pub max_eye_gap: f64,
    /// Frames per independent sequence of the compositional split.
    pub compositional_segment: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 7,
            dome_frames: 2000,
            sessions: 3,
            train_session_frames: 600,
            test_session_frames: 200,
            compositional_frames: 200,
            keyframe_interval: 8,
            max_eye_gap: 0.5,
            compositional_segment: 24,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dome_frames == 0 {
            return Err(Error::Config("data.dome_frames must be > 0".into()));
        }
        if self.sessions < 2 {
            return Err(Error::Config("data.sessions must be >= 2 (train + test)".into()));
        }
        if self.keyframe_interval == 0 || self.compositional_segment == 0 {
            return Err(Error::Config("data intervals must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.max_eye_gap) {
            return Err(Error::Config("data.max_eye_gap must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn session_frames(&self, s: usize) -> usize {
        if s + 1 == self.sessions {
            self.test_session_frames
        } else {
            self.train_session_frames
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomeFrame {
    pub params: ExpressionParams,
    pub mesh: FaceMesh,
    pub texture: TextureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadsetFrame {
    /// One image per module camera.
    pub images: Vec<GrayImage>,
    pub timestamp: u32,
    pub capture_id: u32,
    /// Frames sharing a sequence id form one causal stream.
    pub sequence: u32,
    pub params: ExpressionParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: u32,
    pub domain: DomainParams,
    pub frames: Vec<HeadsetFrame>,
}

impl Session {
    /// Indices of the causal window of length `len` ending at `t`, left-padded
    /// with the first frame of `t`'s sequence.
    pub fn history(&self, t: usize, len: usize) -> Vec<usize> {
        let seq = self.frames[t].sequence;
        let mut start = t;
        while start > 0 && self.frames[start - 1].sequence == seq {
            start -= 1;
        }
        (0..len)
            .map(|i| {
                let back = len - 1 - i;
                if t >= start + back {
                    t - back
                } else {
                    start
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub avatar: AvatarConfig,
    pub dome: Vec<DomeFrame>,
    pub sessions: Vec<Session>,
    pub compositional: Session,
}

impl Dataset {
    pub fn train_sessions(&self) -> &[Session] {
        &self.sessions[..self.sessions.len() - 1]
    }

    pub fn test_session(&self) -> &Session {
        self.sessions.last().expect("validated: at least two sessions")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: u32,
    pub role: String,
    pub frames: usize,
    pub domain: DomainParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u8,
    pub data: DatasetConfig,
    pub avatar: AvatarConfig,
    pub modules: Vec<String>,
    pub vertices: usize,
    pub texels: usize,
    pub dome_frames: usize,
    pub sessions: Vec<SessionMeta>,
    pub compositional_frames: usize,
    pub compositional_domain: DomainParams,
}

fn uniform(rng: &mut Rng) -> f64 {
    rng.uniform_range(-1.0, 1.0)
}

/// Training law: eyes and brows move together (bounded left/right gap),
/// the mouth and gaze independently.
pub fn sample_training_params(rng: &mut Rng, max_gap: f64) -> ExpressionParams {
    let left_eye = uniform(rng);
    let right_eye = (left_eye + rng.uniform_range(-max_gap, max_gap)).clamp(-1.0, 1.0);
    let left_brow = uniform(rng);
    let right_brow = (left_brow + rng.uniform_range(-0.3, 0.3)).clamp(-1.0, 1.0);
    ExpressionParams {
        left_eye,
        right_eye,
        left_brow,
        right_brow,
        jaw: uniform(rng),
        stretch: uniform(rng),
        smile: uniform(rng),
        gaze: [uniform(rng), uniform(rng)],
    }
}

/// Compositional law: like training but the eyes disagree by more than
/// `max_gap + 0.1`, with `sign` fixing which eye is more open.
pub fn sample_compositional_params(rng: &mut Rng, max_gap: f64, sign: f64) -> ExpressionParams {
    let mut p = sample_training_params(rng, max_gap);
    let gap = rng.uniform_range(max_gap + 0.1, 1.6f64.max(max_gap + 0.2));
    let high = rng.uniform_range(-1.0 + gap, 1.0);
    let low = high - gap;
    if sign >= 0.0 {
        p.left_eye = high;
        p.right_eye = low;
    } else {
        p.left_eye = low;
        p.right_eye = high;
    }
    p
}

fn smoothstep(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

fn interpolate(a: &ExpressionParams, b: &ExpressionParams, s: f64) -> ExpressionParams {
    let (x, y) = (a.to_array(), b.to_array());
    let mut out = [0.0; 9];
    for i in 0..9 {
        out[i] = (x[i] + (y[i] - x[i]) * s).clamp(-1.0, 1.0);
    }
    ExpressionParams::from_array(out)
}

/// Smooth keyframe trajectory of `n` frames; keyframes come from `draw`.
pub fn trajectory(n: usize, interval: usize, rng: &mut Rng, mut draw: impl FnMut(&mut Rng) -> ExpressionParams) -> Vec<ExpressionParams> {
    let keys: Vec<ExpressionParams> = (0..n / interval + 2).map(|_| draw(rng)).collect();
    (0..n)
        .map(|t| {
            let k = t / interval;
            let s = smoothstep((t % interval) as f64 / interval as f64);
            interpolate(&keys[k], &keys[k + 1], s)
        })
        .collect()
}

fn capture(
    avatar: &Avatar,
    params: &ExpressionParams,
    domain: &DomainParams,
    rng: &mut Rng,
) -> Result<Vec<GrayImage>> {
    let (mesh, tex) = avatar.synthesize(params)?;
    (0..MODULES)
        .map(|k| {
            let clean = clean_module_render(avatar, &mesh, &tex, k)?;
            Ok(apply_domain(&clean, domain, rng))
        })
        .collect()
}

fn build_session(
    avatar: &Avatar,
    exec: Exec,
    id: u32,
    domain: DomainParams,
    params: Vec<(u32, ExpressionParams)>,
    rng: &Rng,
) -> Result<Session> {
    let frames = par::map_range(exec, params.len(), |t| -> Result<HeadsetFrame> {
        let (sequence, p) = params[t];
        let mut noise = rng.split(t as u64);
        Ok(HeadsetFrame {
            images: capture(avatar, &p, &domain, &mut noise)?,
            timestamp: t as u32,
            capture_id: id,
            sequence,
            params: p,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Session { id, domain, frames })
}

/// Generate every split from `(config, avatar)`. Frames use per-frame derived
/// streams, so the result does not depend on `exec`.
pub fn generate_dataset(config: &DatasetConfig, avatar: &Avatar, exec: Exec) -> Result<Dataset> {
    config.validate()?;
    let root = Rng::new(config.seed);

    let dome_rng = root.split_named("dome");
    let dome = par::map_range(exec, config.dome_frames, |i| -> Result<DomeFrame> {
        let mut r = dome_rng.split(i as u64);
        let params = sample_training_params(&mut r, config.max_eye_gap);
        let (mesh, texture) = avatar.synthesize(&params)?;
        Ok(DomeFrame { params, mesh, texture })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut sessions = Vec::with_capacity(config.sessions);
    for s in 0..config.sessions {
        let srng = root.split_named("session").split(s as u64);
        let domain = DomainParams::sample(&mut srng.split_named("domain"));
        let mut traj_rng = srng.split_named("trajectory");
        let params = trajectory(config.session_frames(s), config.keyframe_interval, &mut traj_rng, |r| {
            sample_training_params(r, config.max_eye_gap)
        });
        let params = params.into_iter().map(|p| (0u32, p)).collect();
        sessions.push(build_session(avatar, exec, s as u32, domain, params, &srng.split_named("noise"))?);
    }

    // compositional frames are captured under the test session's conditions
    let test = sessions.last().expect("validated");
    let crng = root.split_named("compositional");
    let mut traj_rng = crng.split_named("trajectory");
    let mut params = Vec::with_capacity(config.compositional_frames);
    let mut seq = 0u32;
    while params.len() < config.compositional_frames {
        let n = config.compositional_segment.min(config.compositional_frames - params.len());
        let sign = if traj_rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        let seg = trajectory(n, config.keyframe_interval, &mut traj_rng, |r| {
            sample_compositional_params(r, config.max_eye_gap, sign)
        });
        params.extend(seg.into_iter().map(|p| (seq, p)));
        seq += 1;
    }
    let compositional = build_session(avatar, exec, test.id, test.domain, params, &crng.split_named("noise"))?;

    Ok(Dataset {
        config: config.clone(),
        avatar: avatar.config.clone(),
        dome,
        sessions,
        compositional,
    })
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(v.len() * 8);
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        Ok(self.0.write_all(&buf)?)
    }
    fn f32s(&mut self, v: &[f32]) -> Result<()> {
        let mut buf = Vec::with_capacity(v.len() * 4);
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        Ok(self.0.write_all(&buf)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of data file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
    fn header(&mut self, kind: u8) -> Result<()> {
        if self.take(4)? != DATA_MAGIC {
            return Err(Error::Format("bad data file magic".into()));
        }
        let v = self.u8()?;
        if v != DATA_VERSION {
            return Err(Error::Format(format!("unsupported data version {v}")));
        }
        let k = self.u8()?;
        if k != kind {
            return Err(Error::Format(format!("expected data kind {kind}, found {k}")));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes in data file", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn params_from(v: &[f64]) -> ExpressionParams {
    ExpressionParams::from_array(v.try_into().expect("9 knobs"))
}

pub fn write_dome<W: Write>(w: W, frames: &[DomeFrame], g: usize, t: usize) -> Result<()> {
    let mut w = Writer(w);
    w.0.write_all(DATA_MAGIC)?;
    w.u8(DATA_VERSION)?;
    w.u8(KIND_DOME)?;
    w.u32(frames.len())?;
    w.u32(g)?;
    w.u32(t)?;
    for f in frames {
        w.f64s(&f.params.to_array())?;
        let verts: Vec<f64> = f.mesh.vertices.iter().flatten().copied().collect();
        let texels: Vec<f64> = f.texture.texels.iter().flatten().copied().collect();
        w.f64s(&verts)?;
        w.f64s(&texels)?;
    }
    Ok(())
}

pub fn read_dome(bytes: &[u8], avatar: &Avatar) -> Result<Vec<DomeFrame>> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(KIND_DOME)?;
    let n = r.u32()?;
    let g = r.u32()?;
    let t = r.u32()?;
    if g != avatar.vertex_count() || t != avatar.texel_count() {
        return Err(Error::shape("dome file", &[avatar.vertex_count(), avatar.texel_count()], &[g, t]));
    }
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let params = params_from(&r.f64s(9)?);
        let v = r.f64s(3 * g)?;
        let x = r.f64s(3 * t)?;
        frames.push(DomeFrame {
            params,
            mesh: FaceMesh {
                vertices: v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                faces: avatar.template.faces.clone(),
            },
            texture: TextureMap {
                size: avatar.config.texture_size,
                texels: x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            },
        });
    }
    r.finish()?;
    Ok(frames)
}

fn domain_array(d: &DomainParams) -> [f64; 5] {
    [d.gain, d.bias, d.vignette, d.noise, d.background]
}

pub fn write_session<W: Write>(w: W, s: &Session, compositional: bool) -> Result<()> {
    let mut w = Writer(w);
    w.0.write_all(DATA_MAGIC)?;
    w.u8(DATA_VERSION)?;
    w.u8(if compositional { KIND_COMPOSITIONAL } else { KIND_SESSION })?;
    w.u32(s.id as usize)?;
    w.f64s(&domain_array(&s.domain))?;
    w.u32(s.frames.len())?;
    let (k, iw, ih) = s
        .frames
        .first()
        .map(|f| (f.images.len(), f.images[0].width, f.images[0].height))
        .unwrap_or((MODULES, 0, 0));
    w.u32(k)?;
    w.u32(iw)?;
    w.u32(ih)?;
    for f in &s.frames {
        w.u32(f.timestamp as usize)?;
        w.u32(f.capture_id as usize)?;
        w.u32(f.sequence as usize)?;
        w.f64s(&f.params.to_array())?;
        for img in &f.images {
            if img.width != iw || img.height != ih {
                return Err(Error::shape("headset image", &[ih, iw], &[img.height, img.width]));
            }
            w.f32s(&img.data)?;
        }
    }
    Ok(())
}

pub fn read_session(bytes: &[u8], compositional: bool) -> Result<Session> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(if compositional { KIND_COMPOSITIONAL } else { KIND_SESSION })?;
    let id = r.u32()? as u32;
    let d = r.f64s(5)?;
    let domain = DomainParams {
        gain: d[0],
        bias: d[1],
        vignette: d[2],
        noise: d[3],
        background: d[4],
    };
    let n = r.u32()?;
    let k = r.u32()?;
    let iw = r.u32()?;
    let ih = r.u32()?;
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let timestamp = r.u32()? as u32;
        let capture_id = r.u32()? as u32;
        let sequence = r.u32()? as u32;
        let params = params_from(&r.f64s(9)?);
        let images = (0..k)
            .map(|_| GrayImage::new(iw, ih, r.f32s(iw * ih)?))
            .collect::<Result<Vec<_>>>()?;
        frames.push(HeadsetFrame {
            images,
            timestamp,
            capture_id,
            sequence,
            params,
        });
    }
    r.finish()?;
    Ok(Session { id, domain, frames })
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| Error::MissingArtifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    Ok(buf)
}

impl Dataset {
    pub fn meta(&self) -> DatasetMeta {
        let n = self.sessions.len();
        DatasetMeta {
            format_version: DATA_VERSION,
            data: self.config.clone(),
            avatar: self.avatar.clone(),
            modules: MODULE_NAMES.iter().map(|s| s.to_string()).collect(),
            vertices: self.avatar.grid * self.avatar.grid,
            texels: self.avatar.texture_size * self.avatar.texture_size,
            dome_frames: self.dome.len(),
            sessions: self
                .sessions
                .iter()
                .enumerate()
                .map(|(i, s)| SessionMeta {
                    id: s.id,
                    role: if i + 1 == n { "test" } else { "train" }.into(),
                    frames: s.frames.len(),
                    domain: s.domain,
                })
                .collect(),
            compositional_frames: self.compositional.frames.len(),
            compositional_domain: self.compositional.domain,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let g = self.avatar.grid * self.avatar.grid;
        let t = self.avatar.texture_size * self.avatar.texture_size;
        write_file(&dir.join("dome").join("frames.bin"), |b| write_dome(b, &self.dome, g, t))?;
        for s in &self.sessions {
            write_file(&dir.join("sessions").join(s.id.to_string()).join("frames.bin"), |b| {
                write_session(b, s, false)
            })?;
        }
        write_file(&dir.join("compositional").join("frames.bin"), |b| {
            write_session(b, &self.compositional, true)
        })?;
        let mut meta = serde_json::to_vec_pretty(&self.meta())?;
        meta.push(b'\n');
        fs::write(dir.join("meta.json"), meta)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<(Dataset, Avatar)> {
        let meta: DatasetMeta = serde_json::from_slice(&read_file(&dir.join("meta.json"))?)?;
        if meta.format_version != DATA_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {}", meta.format_version)));
        }
        let avatar = Avatar::new(meta.avatar.clone())?;
        let dome = read_dome(&read_file(&dir.join("dome").join("frames.bin"))?, &avatar)?;
        let sessions = meta
            .sessions
            .iter()
            .map(|s| read_session(&read_file(&dir.join("sessions").join(s.id.to_string()).join("frames.bin"))?, false))
            .collect::<Result<Vec<_>>>()?;
        let compositional = read_session(&read_file(&dir.join("compositional").join("frames.bin"))?, true)?;
        Ok((
            Dataset {
                config: meta.data,
                avatar: meta.avatar,
                dome,
                sessions,
                compositional,
            },
            avatar,
        ))
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_gray_png(img: &GrayImage, path: &Path) -> Result<()> {
    let bytes = img.data.iter().map(|v| to_u8(*v as f64)).collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| Error::Image("gray buffer size".into()))?;
    buf.save(path).map_err(|e| Error::Image(e.to_string()))
}

pub fn save_rgb_png(width: usize, height: usize, rgb: &[[f64; 3]], path: &Path) -> Result<()> {
    let bytes = rgb.iter().flat_map(|c| c.map(to_u8)).collect();
    let buf = image::RgbImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::Image("rgb buffer size".into()))?;
    buf.save(path).map_err(|e| Error::Image(e.to_string()))
}

/// Write the first `n` frames of each split as PNGs for inspection.
pub fn export_pngs(dataset: &Dataset, avatar: &Avatar, dir: &Path, n: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in dataset.dome.iter().take(n).enumerate() {
        let img = avatar.render_frontal(&f.mesh, &f.texture, super::render::ViewDirection::FRONTAL)?;
        save_rgb_png(img.width, img.height, &img.rgb, &dir.join(format!("dome_{i:04}.png")))?;
    }
    let splits = dataset
        .sessions
        .iter()
        .map(|s| (format!("session{}", s.id), s))
        .chain(std::iter::once(("compositional".to_string(), &dataset.compositional)));
    for (name, s) in splits {
        for f in s.frames.iter().take(n) {
            for (k, img) in f.images.iter().enumerate() {
                save_gray_png(img, &dir.join(format!("{name}_{:04}_cam{k}.png", f.timestamp)))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (DatasetConfig, Avatar) {
        let cfg = DatasetConfig {
            dome_frames: 20,
            sessions: 2,
            train_session_frames: 12,
            test_session_frames: 6,
            compositional_frames: 10,
            compositional_segment: 4,
            ..DatasetConfig::default()
        };
        (cfg, Avatar::new(AvatarConfig::default()).unwrap())
    }

    #[test]
    fn gap_constraints_hold() {
        let (cfg, a) = small();
        let d = generate_dataset(&cfg, &a, Exec::Parallel).unwrap();
        assert_eq!(d.dome.len(), 20);
        let train = d.dome.iter().map(|f| f.params).chain(d.sessions.iter().flat_map(|s| s.frames.iter().map(|f| f.params)));
        for p in train {
            assert!((p.left_eye - p.right_eye).abs() <= cfg.max_eye_gap + 1e-12);
        }
        assert_eq!(d.compositional.frames.len(), 10);
        for f in &d.compositional.frames {
            assert!((f.params.left_eye - f.params.right_eye).abs() > cfg.max_eye_gap);
        }
    }

    #[test]
    fn zero_compositional_frames_gives_empty_split() {
        let (mut cfg, a) = small();
        cfg.compositional_frames = 0;
        let d = generate_dataset(&cfg, &a, Exec::Sequential).unwrap();
        assert!(d.compositional.frames.is_empty());
    }

    #[test]
    fn history_pads_within_sequence() {
        let (cfg, a) = small();
        let d = generate_dataset(&cfg, &a, Exec::Sequential).unwrap();
        let c = &d.compositional;
        // sequences of 4: frame 5 is the second frame of sequence 1
        assert_eq!(c.history(5, 4), vec![4, 4, 4, 5]);
        assert_eq!(c.history(3, 4), vec![0, 1, 2, 3]);
        assert_eq!(d.sessions[0].history(0, 4), vec![0, 0, 0, 0]);
    }

    #[test]
    fn exec_modes_agree() {
        let (cfg, a) = small();
        let p = generate_dataset(&cfg, &a, Exec::Parallel).unwrap();
        let s = generate_dataset(&cfg, &a, Exec::Sequential).unwrap();
        assert_eq!(p, s);
    }
}
