//! Modular codec model: per-camera paths, shared decoder and blending.
//!
//! The holistic baseline is the same machinery with one path that reads all
//! cameras and no blending.

use serde::{Deserialize, Serialize};

use super::blend::{modulate_blend, modulate_blend_backward, BlendBasis, BlendField, ModuleSpec};
use super::net::{join_grads, ModulePath, PathShape};
use crate::codec::VaeModel;
use crate::error::{Error, Result};
use crate::face::{AugmentConfig, Avatar, ViewDirection};
use crate::numeric::{
    push_sequential, take_sequential, Blob, Gradients, Parameterized, Rng, Sequential, Tensor, Trace,
};

/// Ablation switches; all on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Learned modulated blend weights (off: equal weights).
    pub blend: bool,
    /// Fine-tune the shared decoder (off: frozen).
    pub end2end: bool,
    /// Gaussian noise on the part-code targets.
    pub soft_ex: bool,
    /// Full latent width (off: half width, applied when training the codecs).
    pub dimen: bool,
    /// Cross-module feature concatenation before the part-code head.
    pub skip_mod: bool,
    /// Temporal kernels (off: every kernel has width 1).
    pub tconv: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            blend: true,
            end2end: true,
            soft_ex: true,
            dimen: true,
            skip_mod: true,
            tconv: true,
        }
    }
}

impl Ablation {
    pub fn all_off() -> Self {
        Ablation {
            blend: false,
            end2end: false,
            soft_ex: false,
            dimen: false,
            skip_mod: false,
            tconv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McaConfig {
    /// Average-pooling factor applied to headset images.
    pub image_factor: usize,
    pub encoder_hidden: [usize; 2],
    pub synth_hidden: usize,
    pub synth_kernels: Vec<usize>,
    pub blend_grid: usize,
    pub sigma: f64,
    pub amplitude: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub soft_ex_alpha: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Samples per parallel gradient chunk; fixes the summation order.
    pub chunk: usize,
    pub lr: f64,
    pub decoder_lr_scale: f64,
    pub augment: AugmentConfig,
    pub ablation: Ablation,
}

impl Default for McaConfig {
    fn default() -> Self {
        McaConfig {
            image_factor: 4,
            encoder_hidden: [64, 32],
            synth_hidden: 32,
            synth_kernels: vec![2, 2, 2],
            blend_grid: 6,
            sigma: 0.1,
            amplitude: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            soft_ex_alpha: 0.5,
            epochs: 12,
            batch: 32,
            chunk: 8,
            lr: 1e-3,
            decoder_lr_scale: 0.1,
            augment: AugmentConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl McaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_factor == 0 || self.batch == 0 || self.chunk == 0 || self.synth_kernels.is_empty() {
            return Err(Error::Config("mca.image_factor, batch, chunk and synth_kernels must be non-zero".into()));
        }
        if self.synth_kernels.contains(&0) || self.blend_grid < 2 {
            return Err(Error::Config("mca kernels must be >= 1 and blend_grid >= 2".into()));
        }
        if !(self.sigma > 0.0 && self.amplitude >= 0.0 && self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("mca.sigma > 0 and non-negative amplitude and lambdas required".into()));
        }
        if !(self.lr > 0.0 && self.decoder_lr_scale >= 0.0 && self.soft_ex_alpha >= 0.0) {
            return Err(Error::Config("mca.lr > 0, decoder_lr_scale >= 0, soft_ex_alpha >= 0 required".into()));
        }
        Ok(())
    }

    /// Kernels after the temporal ablation.
    pub fn kernels(&self) -> Vec<usize> {
        if self.ablation.tconv {
            self.synth_kernels.clone()
        } else {
            vec![1; self.synth_kernels.len()]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlendMode {
    /// Learned weights through the modulation field.
    Modulated,
    /// `1/K` everywhere.
    Equal,
    /// One path, output used as is.
    Single,
}

/// Preprocessed camera images over a causal window: `[time][camera][pixel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub frames: Vec<Vec<Vec<f64>>>,
}

/// Training targets for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    /// Holistic code shared by every path's full-code term.
    pub full: Vec<f64>,
    /// Part-code target per path.
    pub parts: Vec<Vec<f64>>,
    /// Reconstruction target face (flat vector).
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Blended face (flat vector).
    pub face: Vec<f64>,
    pub field: BlendField,
    /// Part code per path at the last frame.
    pub part: Vec<Vec<f64>>,
    /// Full code per path.
    pub full: Vec<Vec<f64>>,
    /// Decoded face per path before blending.
    pub decoded: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub recon: f64,
    pub full_code: f64,
    pub part_code: f64,
}

impl LossTerms {
    pub fn total(&self, lambda1: f64, lambda2: f64) -> f64 {
        self.recon + lambda1 * self.full_code + lambda2 * self.part_code
    }

    pub fn add(&mut self, o: &LossTerms) {
        self.recon += o.recon;
        self.full_code += o.full_code;
        self.part_code += o.part_code;
    }
}

struct PathTrace {
    trunk: Trace,
    features: Tensor,
    head: Trace,
    part: Tensor,
    temporal: Vec<Trace>,
    full: Trace,
    full_out: Tensor,
    blend: Option<(Trace, Tensor)>,
}

struct BatchTrace {
    paths: Vec<PathTrace>,
    decoder: Trace,
    predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McaModel {
    pub config: McaConfig,
    pub paths: Vec<ModulePath>,
    pub specs: Vec<ModuleSpec>,
    pub mode: BlendMode,
    /// Holistic VAE whose decoder is the shared decoder.
    pub codec: VaeModel,
    pub basis: Option<BlendBasis>,
    /// Vertex of every flat face element.
    pub element_vertex: Vec<usize>,
    window: usize,
}

fn element_vertices(avatar: &Avatar) -> Vec<usize> {
    (0..avatar.layout.len())
        .map(|e| avatar.layout.vertex_of_element(e, &avatar.atlas))
        .collect()
}

impl McaModel {
    /// Modular model: path `k` reads camera `k` and predicts `part_latent` codes.
    pub fn new(
        avatar: &Avatar,
        codec: VaeModel,
        config: McaConfig,
        camera_dims: &[usize],
        part_latent: usize,
        rng: &Rng,
    ) -> Result<Self> {
        let specs = (0..avatar.masks.len())
            .map(|k| ModuleSpec::from_avatar(avatar, k, config.sigma, config.amplitude))
            .collect::<Result<Vec<_>>>()?;
        let cameras: Vec<Vec<usize>> = (0..specs.len()).map(|k| vec![k]).collect();
        let mode = if config.ablation.blend {
            BlendMode::Modulated
        } else {
            BlendMode::Equal
        };
        Self::build(avatar, codec, config, camera_dims, cameras, specs, mode, part_latent, rng)
    }

    /// Holistic baseline: one path over every camera, no blending.
    pub fn holistic(avatar: &Avatar, codec: VaeModel, config: McaConfig, camera_dims: &[usize], rng: &Rng) -> Result<Self> {
        let spec = ModuleSpec {
            index: 0,
            centroid: [0.5, 0.5],
            area: 0.5,
            amplitude: 1.0,
            sigma: config.sigma,
        };
        let latent = codec.latent;
        let mut config = config;
        config.ablation.skip_mod = false;
        config.ablation.blend = false;
        config.ablation.soft_ex = false;
        let cameras = vec![(0..camera_dims.len()).collect()];
        Self::build(avatar, codec, config, camera_dims, cameras, vec![spec], BlendMode::Single, latent, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build(
        avatar: &Avatar,
        codec: VaeModel,
        config: McaConfig,
        camera_dims: &[usize],
        cameras: Vec<Vec<usize>>,
        specs: Vec<ModuleSpec>,
        mode: BlendMode,
        part_latent: usize,
        rng: &Rng,
    ) -> Result<Self> {
        config.validate()?;
        if codec.mask.is_some() {
            return Err(Error::InvalidArgument("the shared decoder must be holistic".into()));
        }
        if cameras.len() != specs.len() || cameras.is_empty() {
            return Err(Error::shape("paths vs module specs", &[specs.len()], &[cameras.len()]));
        }
        if cameras.iter().flatten().any(|&c| c >= camera_dims.len()) {
            return Err(Error::InvalidArgument("path reads a camera that does not exist".into()));
        }
        let p_n = cameras.len();
        let kernels = config.kernels();
        let skip = config.ablation.skip_mod && p_n > 1;
        let uv = avatar.uv().to_vec();
        let mut paths = Vec::with_capacity(p_n);
        for (k, cams) in cameras.into_iter().enumerate() {
            let input = cams.iter().map(|&c| camera_dims[c]).sum();
            let shape = PathShape {
                input,
                hidden: config.encoder_hidden,
                head_input: config.encoder_hidden[1] * if skip { p_n } else { 1 },
                latent: part_latent,
                synth_hidden: config.synth_hidden,
                kernels: kernels.clone(),
                full_latent: codec.latent,
                blend: (mode == BlendMode::Modulated).then(|| (config.blend_grid, uv.clone())),
            };
            paths.push(ModulePath::new(cams, &shape, &mut rng.split(k as u64))?);
        }
        let basis = match mode {
            BlendMode::Modulated => Some(BlendBasis::new(&specs, &uv)?),
            _ => None,
        };
        let window = paths[0].receptive_field();
        Ok(McaModel {
            config,
            paths,
            specs,
            mode,
            codec,
            basis,
            element_vertex: element_vertices(avatar),
            window,
        })
    }

    pub fn modules(&self) -> usize {
        self.paths.len()
    }

    /// Frames per causal window (the synthesizer's receptive field).
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn part_latent(&self) -> usize {
        self.paths[0].head.fan_out()
    }

    fn skip(&self) -> bool {
        self.config.ablation.skip_mod && self.paths.len() > 1
    }

    fn decoder_trainable(&self) -> bool {
        self.config.ablation.end2end
    }

    /// Trainable parameter count (decoder included only when fine-tuned).
    pub fn trainable_params(&self) -> usize {
        self.num_params()
    }

    fn path_input(&self, p: usize, windows: &[Window]) -> Result<Tensor> {
        let t_n = self.window;
        let cams = &self.paths[p].cameras;
        let width = self.paths[p].trunk.fan_in();
        let mut data = Vec::with_capacity(windows.len() * t_n * width);
        for w in windows {
            if w.frames.len() != t_n {
                return Err(Error::shape("window length", &[t_n], &[w.frames.len()]));
            }
            for f in &w.frames {
                for &c in cams {
                    let img = f.get(c).ok_or_else(|| Error::shape("cameras per frame", &[c + 1], &[f.len()]))?;
                    data.extend_from_slice(img);
                }
            }
        }
        if data.len() != windows.len() * t_n * width {
            return Err(Error::shape("path input width", &[width], &[data.len() / (windows.len() * t_n).max(1)]));
        }
        Tensor::matrix(windows.len() * t_n, width, data)
    }

    fn blend_faces(&self, decoded: &[Vec<f64>], field: &BlendField) -> Vec<f64> {
        if self.mode == BlendMode::Single {
            return decoded[0].clone();
        }
        let mut y = vec![0.0; decoded[0].len()];
        for (k, face) in decoded.iter().enumerate() {
            let w = &field.weights[k];
            for ((acc, f), &v) in y.iter_mut().zip(face).zip(&self.element_vertex) {
                *acc += w[v] * f;
            }
        }
        y
    }

    fn field_for(&self, ws: &[Option<Vec<f64>>]) -> Result<BlendField> {
        let g = self.element_vertex.iter().copied().max().map_or(0, |m| m + 1);
        match self.mode {
            BlendMode::Modulated => {
                let ws: Vec<Vec<f64>> = ws.iter().map(|w| w.clone().expect("blend head present")).collect();
                modulate_blend(&ws, self.basis.as_ref().expect("basis for modulated blending"))
            }
            BlendMode::Equal | BlendMode::Single => Ok(BlendField::equal(self.paths.len(), g)),
        }
    }

    /// Part codes per path for a batch: `[B * T, latent]` each.
    pub fn encode_parts(&self, windows: &[Window]) -> Result<Vec<Tensor>> {
        let feats = self
            .paths
            .iter()
            .enumerate()
            .map(|(p, path)| path.trunk.forward(&self.path_input(p, windows)?))
            .collect::<Result<Vec<_>>>()?;
        self.paths
            .iter()
            .enumerate()
            .map(|(p, path)| path.head.forward(&self.head_input(&feats, p)?))
            .collect()
    }

    fn head_input(&self, feats: &[Tensor], p: usize) -> Result<Tensor> {
        if !self.skip() {
            return Ok(feats[p].clone());
        }
        let rows = feats[0].rows();
        let width: usize = feats.iter().map(|f| f.last_dim()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for f in feats {
                data.extend_from_slice(f.row(r));
            }
        }
        Tensor::matrix(rows, width, data)
    }

    fn forward_batch(&self, windows: &[Window], view: ViewDirection) -> Result<BatchTrace> {
        let b_n = windows.len();
        let t_n = self.window;
        let mut feats = Vec::with_capacity(self.paths.len());
        let mut trunk_traces = Vec::with_capacity(self.paths.len());
        for (p, path) in self.paths.iter().enumerate() {
            let (f, tr) = path.trunk.forward_trace(&self.path_input(p, windows)?)?;
            feats.push(f);
            trunk_traces.push(tr);
        }
        let mut path_traces = Vec::with_capacity(self.paths.len());
        let mut dec_in = Vec::with_capacity(b_n * self.paths.len() * self.codec.decoder_input_len());
        let mut full_codes: Vec<Tensor> = Vec::new();
        let mut blend_out: Vec<Option<Tensor>> = Vec::new();
        for ((p, path), trunk) in self.paths.iter().enumerate().zip(trunk_traces) {
            let (part, head) = path.head.forward_trace(&self.head_input(&feats, p)?)?;
            let l = part.last_dim();
            let mut temporal = Vec::with_capacity(b_n);
            let mut last = Vec::with_capacity(b_n * path.temporal.fan_out());
            for b in 0..b_n {
                let hist = Tensor::matrix(t_n, l, part.data()[b * t_n * l..(b + 1) * t_n * l].to_vec())?;
                let (h, tr) = path.temporal.forward_trace(&hist)?;
                last.extend_from_slice(h.row(t_n - 1));
                temporal.push(tr);
            }
            let last = Tensor::matrix(b_n, path.temporal.fan_out(), last)?;
            let (full_out, full) = path.full_head.forward_trace(&last)?;
            let blend = match &path.blend_head {
                Some(bh) => {
                    let (ws, tr) = bh.forward_trace(&last)?;
                    blend_out.push(Some(ws.clone()));
                    Some((tr, ws))
                }
                None => {
                    blend_out.push(None);
                    None
                }
            };
            full_codes.push(full_out.clone());
            path_traces.push(PathTrace {
                trunk,
                features: feats[p].clone(),
                head,
                part,
                temporal,
                full,
                full_out,
                blend,
            });
        }
        // decoder rows ordered (sample, path)
        for b in 0..b_n {
            for fc in &full_codes {
                self.codec.push_decoder_input(fc.row(b), view, &mut dec_in)?;
            }
        }
        let p_n = self.paths.len();
        let dec_in = Tensor::matrix(b_n * p_n, self.codec.decoder_input_len(), dec_in)?;
        let (out, decoder) = self.codec.decode_trace(&dec_in)?;
        let mut predictions = Vec::with_capacity(b_n);
        for b in 0..b_n {
            let decoded: Vec<Vec<f64>> = (0..p_n).map(|p| self.codec.to_face_units(out.row(b * p_n + p))).collect();
            let ws: Vec<Option<Vec<f64>>> = blend_out.iter().map(|o| o.as_ref().map(|t| t.row(b).to_vec())).collect();
            let field = self.field_for(&ws)?;
            let face = self.blend_faces(&decoded, &field);
            let part = path_traces
                .iter()
                .map(|pt| pt.part.row(b * t_n + t_n - 1).to_vec())
                .collect();
            let full = full_codes.iter().map(|f| f.row(b).to_vec()).collect();
            predictions.push(Prediction {
                face,
                field,
                part,
                full,
                decoded,
            });
        }
        Ok(BatchTrace {
            paths: path_traces,
            decoder,
            predictions,
        })
    }

    /// Part-code history `[T, latent]` of each path for one window.
    pub fn part_histories(&self, window: &Window) -> Result<Vec<Tensor>> {
        self.encode_parts(std::slice::from_ref(window))
    }

    /// Synthesis, decoding and blending from given part-code histories.
    pub fn synthesize_parts(&self, histories: &[Tensor], view: ViewDirection) -> Result<Prediction> {
        if histories.len() != self.paths.len() {
            return Err(Error::shape("part histories", &[self.paths.len()], &[histories.len()]));
        }
        let mut full = Vec::with_capacity(self.paths.len());
        let mut ws = Vec::with_capacity(self.paths.len());
        let mut dec_in = Vec::with_capacity(self.paths.len() * self.codec.decoder_input_len());
        for (path, hist) in self.paths.iter().zip(histories) {
            let (f, w) = path.synthesize(hist)?;
            self.codec.push_decoder_input(&f, view, &mut dec_in)?;
            full.push(f);
            ws.push(w);
        }
        let dec_in = Tensor::matrix(self.paths.len(), self.codec.decoder_input_len(), dec_in)?;
        let out = self.codec.decode_trace(&dec_in)?.0;
        let decoded: Vec<Vec<f64>> = (0..self.paths.len()).map(|p| self.codec.to_face_units(out.row(p))).collect();
        let field = self.field_for(&ws)?;
        Ok(Prediction {
            face: self.blend_faces(&decoded, &field),
            field,
            part: histories.iter().map(|h| h.row(h.rows() - 1).to_vec()).collect(),
            full,
            decoded,
        })
    }

    /// Predictions for a batch of windows seen from `view`.
    pub fn forward(&self, windows: &[Window], view: ViewDirection) -> Result<Vec<Prediction>> {
        Ok(self.forward_batch(windows, view)?.predictions)
    }

    pub fn predict(&self, window: &Window, view: ViewDirection) -> Result<Prediction> {
        Ok(self.forward(std::slice::from_ref(window), view)?.remove(0))
    }

    /// Loss terms for one prediction.
    pub fn loss_terms(&self, pred: &Prediction, sup: &Supervision) -> LossTerms {
        let recon = self.codec.weighted_distance(&pred.face, &sup.target);
        let full_code = pred.full.iter().map(|c| sq(c, &sup.full)).sum();
        let part_code = pred.part.iter().zip(&sup.parts).map(|(c, t)| sq(c, t)).sum();
        LossTerms {
            recon,
            full_code,
            part_code,
        }
    }

    /// Summed loss terms and gradients over a batch (frontal view). Gradients
    /// follow `params()` order.
    pub fn loss_and_grads(&self, windows: &[Window], sups: &[Supervision]) -> Result<(LossTerms, Gradients)> {
        if windows.len() != sups.len() {
            return Err(Error::shape("supervision per window", &[windows.len()], &[sups.len()]));
        }
        let b_n = windows.len();
        let t_n = self.window;
        let p_n = self.paths.len();
        let (l1, l2) = (self.config.lambda1, self.config.lambda2);
        let tr = self.forward_batch(windows, ViewDirection::FRONTAL)?;
        let mut terms = LossTerms::default();
        let a = self.codec.active_len();
        let g = self.element_vertex.iter().copied().max().map_or(0, |m| m + 1);
        let mut d_out = vec![0.0; b_n * p_n * a];
        let mut d_ws: Vec<Vec<f64>> = vec![Vec::with_capacity(b_n * g); p_n];
        for (b, (pred, sup)) in tr.predictions.iter().zip(sups).enumerate() {
            terms.add(&self.loss_terms(pred, sup));
            let dy: Vec<f64> = pred
                .face
                .iter()
                .zip(&sup.target)
                .zip(&self.codec.weights)
                .map(|((y, t), w)| 2.0 * w * (y - t))
                .collect();
            let mut dw = vec![vec![0.0; g]; p_n];
            for p in 0..p_n {
                let row = &mut d_out[(b * p_n + p) * a..(b * p_n + p + 1) * a];
                let weights = &pred.field.weights[p];
                let face = &pred.decoded[p];
                for e in 0..a {
                    let v = self.element_vertex[e];
                    let w = if self.mode == BlendMode::Single { 1.0 } else { weights[v] };
                    row[e] = w * dy[e] * self.codec.scale[e];
                    dw[p][v] += dy[e] * face[e];
                }
            }
            if self.mode == BlendMode::Modulated {
                let dws = modulate_blend_backward(&pred.field, self.basis.as_ref().expect("basis"), &dw);
                for (acc, d) in d_ws.iter_mut().zip(dws) {
                    acc.extend(d);
                }
            }
        }
        let (d_dec_in, dec_grads) = self.codec.decoder.backward(&tr.decoder, &Tensor::matrix(b_n * p_n, a, d_out)?)?;
        let di = self.codec.decoder_input_len();
        let full_l = self.codec.latent;

        let mut d_feats: Vec<Vec<f64>> = tr.paths.iter().map(|pt| vec![0.0; pt.features.len()]).collect();
        let mut path_grads: Vec<(Gradients, Gradients, Gradients, Gradients, Option<Gradients>)> = Vec::with_capacity(p_n);
        for (p, (path, pt)) in self.paths.iter().zip(&tr.paths).enumerate() {
            // full-code gradient
            let mut d_full = vec![0.0; b_n * full_l];
            for b in 0..b_n {
                let row = &d_dec_in.data()[(b * p_n + p) * di..(b * p_n + p) * di + full_l];
                let c = pt.full_out.row(b);
                for j in 0..full_l {
                    d_full[b * full_l + j] = row[j] + 2.0 * l1 * (c[j] - sups[b].full[j]);
                }
            }
            let (mut d_last, g_full) = path.full_head.backward(&pt.full, &Tensor::matrix(b_n, full_l, d_full)?)?;
            let g_blend = match (&path.blend_head, &pt.blend) {
                (Some(bh), Some((btr, ws))) => {
                    let up = Tensor::new(ws.shape().to_vec(), std::mem::take(&mut d_ws[p]))?;
                    let (d, gb) = bh.backward(btr, &up)?;
                    for (x, y) in d_last.data_mut().iter_mut().zip(d.data()) {
                        *x += y;
                    }
                    Some(gb)
                }
                _ => None,
            };
            // temporal, per sample
            let l = pt.part.last_dim();
            let hs = path.temporal.fan_out();
            let mut d_part = vec![0.0; pt.part.len()];
            let mut g_temporal: Option<Gradients> = None;
            for b in 0..b_n {
                let mut up = vec![0.0; t_n * hs];
                up[(t_n - 1) * hs..].copy_from_slice(d_last.row(b));
                let (dh, gt) = path.temporal.backward(&pt.temporal[b], &Tensor::matrix(t_n, hs, up)?)?;
                d_part[b * t_n * l..(b + 1) * t_n * l].copy_from_slice(dh.data());
                match &mut g_temporal {
                    Some(acc) => acc.add_assign(&gt),
                    None => g_temporal = Some(gt),
                }
                let r = b * t_n + t_n - 1;
                let c = pt.part.row(r);
                for j in 0..l {
                    d_part[r * l + j] += 2.0 * l2 * (c[j] - sups[b].parts[p][j]);
                }
            }
            let (d_head_in, g_head) = path.head.backward(&pt.head, &Tensor::matrix(b_n * t_n, l, d_part)?)?;
            if self.skip() {
                let h2 = path.feature_width();
                let width = d_head_in.last_dim();
                for r in 0..b_n * t_n {
                    for q in 0..p_n {
                        let src = &d_head_in.data()[r * width + q * h2..r * width + (q + 1) * h2];
                        for (x, y) in d_feats[q][r * h2..(r + 1) * h2].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
            } else {
                for (x, y) in d_feats[p].iter_mut().zip(d_head_in.data()) {
                    *x += y;
                }
            }
            path_grads.push((Gradients(Vec::new()), g_head, g_temporal.expect("non-empty batch"), g_full, g_blend));
        }
        let mut all = Vec::new();
        for (p, (path, pt)) in self.paths.iter().zip(&tr.paths).enumerate() {
            let up = Tensor::new(pt.features.shape().to_vec(), std::mem::take(&mut d_feats[p]))?;
            let (_, g_trunk) = path.trunk.backward(&pt.trunk, &up)?;
            let (_, g_head, g_temporal, g_full, g_blend) = std::mem::replace(
                &mut path_grads[p],
                (Gradients(Vec::new()), Gradients(Vec::new()), Gradients(Vec::new()), Gradients(Vec::new()), None),
            );
            let mut parts = vec![g_trunk, g_head, g_temporal, g_full];
            if let Some(gb) = g_blend {
                parts.push(gb);
            }
            all.push(join_grads(parts));
        }
        if self.decoder_trainable() {
            all.push(dec_grads);
        }
        Ok((terms, join_grads(all)))
    }

    pub fn to_blob(&self, seed: u64) -> Result<Blob> {
        let mut blob = Blob::new("mca", seed, serde_json::Value::Null);
        let mut path_meta = Vec::new();
        for (p, path) in self.paths.iter().enumerate() {
            let nets: Vec<serde_json::Value> = path
                .nets()
                .iter()
                .enumerate()
                .map(|(i, n)| push_sequential(&mut blob, &format!("path{p}.{i}"), n))
                .collect();
            path_meta.push(serde_json::json!({ "cameras": path.cameras, "nets": nets }));
        }
        let vae = self.codec.to_blob(seed);
        let enc = push_sequential(&mut blob, "codec.encoder", &self.codec.encoder);
        let dec = push_sequential(&mut blob, "codec.decoder", &self.codec.decoder);
        blob.meta = serde_json::json!({
            "config": self.config,
            "specs": self.specs,
            "mode": self.mode,
            "paths": path_meta,
            "codec": { "meta": vae.meta, "encoder": enc, "decoder": dec },
        });
        Ok(blob)
    }

    pub fn from_blob(blob: &Blob, avatar: &Avatar) -> Result<Self> {
        if blob.kind != "mca" {
            return Err(Error::Format(format!("expected an mca blob, found `{}`", blob.kind)));
        }
        let m = &blob.meta;
        let field = |v: &serde_json::Value, k: &str| -> Result<serde_json::Value> {
            v.get(k).cloned().ok_or_else(|| Error::Format(format!("mca blob missing `{k}`")))
        };
        let config: McaConfig = serde_json::from_value(field(m, "config")?)?;
        let specs: Vec<ModuleSpec> = serde_json::from_value(field(m, "specs")?)?;
        let mode: BlendMode = serde_json::from_value(field(m, "mode")?)?;
        let mut cursor = 0;
        let mut paths = Vec::new();
        for (p, pm) in field(m, "paths")?.as_array().cloned().unwrap_or_default().iter().enumerate() {
            let cameras: Vec<usize> = serde_json::from_value(field(pm, "cameras")?)?;
            let nets_meta = field(pm, "nets")?.as_array().cloned().unwrap_or_default();
            let mut nets: Vec<Sequential> = Vec::new();
            for (i, nm) in nets_meta.iter().enumerate() {
                nets.push(take_sequential(blob, &format!("path{p}.{i}"), nm, &mut cursor)?);
            }
            if nets.len() < 4 {
                return Err(Error::Format(format!("path {p} has {} networks", nets.len())));
            }
            let blend_head = if nets.len() > 4 { nets.pop() } else { None };
            let full_head = nets.pop().expect("checked");
            let temporal = nets.pop().expect("checked");
            let head = nets.pop().expect("checked");
            let trunk = nets.pop().expect("checked");
            paths.push(ModulePath {
                cameras,
                trunk,
                head,
                temporal,
                full_head,
                blend_head,
            });
        }
        if paths.is_empty() || paths.len() != specs.len() {
            return Err(Error::Format("mca blob paths and specs disagree".into()));
        }
        let cm = field(m, "codec")?;
        let mut vae_blob = Blob::new("vae", blob.seed, field(&cm, "meta")?);
        // rebuild a standalone vae blob so its own loader validates widths
        let encoder = take_sequential(blob, "codec.encoder", &field(&cm, "encoder")?, &mut cursor)?;
        let decoder = take_sequential(blob, "codec.decoder", &field(&cm, "decoder")?, &mut cursor)?;
        let enc_specs = push_sequential(&mut vae_blob, "encoder", &encoder);
        let dec_specs = push_sequential(&mut vae_blob, "decoder", &decoder);
        if let Some(obj) = vae_blob.meta.as_object_mut() {
            obj.insert("encoder".into(), enc_specs);
            obj.insert("decoder".into(), dec_specs);
        }
        let codec = VaeModel::from_blob(&vae_blob, avatar)?;
        let basis = match mode {
            BlendMode::Modulated => Some(BlendBasis::new(&specs, avatar.uv())?),
            _ => None,
        };
        let window = paths[0].receptive_field();
        Ok(McaModel {
            config,
            paths,
            specs,
            mode,
            codec,
            basis,
            element_vertex: element_vertices(avatar),
            window,
        })
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Parameterized for McaModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.paths.iter().flat_map(|p| p.params()).collect();
        if self.decoder_trainable() {
            v.extend(self.codec.decoder.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let trainable = self.decoder_trainable();
        let mut v: Vec<&mut Tensor> = self.paths.iter_mut().flat_map(|p| p.params_mut()).collect();
        if trainable {
            v.extend(self.codec.decoder.params_mut());
        }
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .paths
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.param_names().into_iter().map(move |s| format!("path{i}.{s}")))
            .collect();
        if self.decoder_trainable() {
            v.extend(self.codec.decoder.param_names().into_iter().map(|s| format!("decoder.{s}")));
        }
        v
    }
}
