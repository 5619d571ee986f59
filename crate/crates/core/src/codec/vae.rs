//! View-conditioned face VAE, holistic or restricted to one module mask.
//!
//! The decoder predicts a scaled residual from the rest face on the model's
//! active elements (all elements, or one module's masked elements); every
//! other element is the rest value. The encoder reads the same residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::{Avatar, ViewDirection};
use crate::hash::hash_tensors;
use crate::numeric::{
    push_sequential, take_sequential, Activation, AdamConfig, AdamState, Blob, LayerParams, Parameterized, Rng,
    Sequential, Tensor, Trace,
};

pub const VIEW_DIMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub latent: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub view_conditioned: bool,
    pub kl_weight: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Geometry residuals are divided by this before entering the networks.
    pub geometry_scale: f64,
    /// Training views are drawn as `normalize(U(-j, j), U(-j, j), 1)`.
    pub view_jitter: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent: 16,
            encoder_hidden: vec![96],
            decoder_hidden: vec![64, 128],
            view_conditioned: true,
            kl_weight: 1e-3,
            epochs: 40,
            batch: 32,
            lr: 2e-3,
            geometry_scale: 0.1,
            view_jitter: 0.2,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.batch == 0 {
            return Err(Error::Config("vae.latent and vae.batch must be > 0".into()));
        }
        if !(self.kl_weight >= 0.0 && self.lr > 0.0 && self.geometry_scale > 0.0) {
            return Err(Error::Config("vae.kl_weight >= 0, vae.lr > 0 and vae.geometry_scale > 0 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VaeTrainLog {
    pub steps: usize,
    pub initial_recon: f64,
    pub final_recon: f64,
    pub initial_kl: f64,
    pub final_kl: f64,
    pub curve: Vec<LossPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub latent: usize,
    pub mask: Option<usize>,
    pub view_conditioned: bool,
    pub geometry_scale: f64,
    /// Face-vector indices the model reads and writes.
    pub active: Vec<usize>,
    /// Network-unit to face-unit factor per active element.
    pub scale: Vec<f64>,
    /// Reconstruction weight per active element.
    pub weights: Vec<f64>,
    pub rest: Vec<f64>,
    pub encoder: Sequential,
    pub decoder: Sequential,
    pub log: VaeTrainLog,
}

fn mlp(sizes: &[usize], hidden: Activation, last: Activation, rng: &mut Rng) -> Sequential {
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == sizes.len() { last } else { hidden };
            LayerParams::dense(w[0], w[1], act, rng)
        })
        .collect();
    Sequential::new(layers).expect("consistent mlp widths")
}

impl VaeModel {
    pub fn new(avatar: &Avatar, mask: Option<usize>, cfg: &VaeConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let layout = &avatar.layout;
        let active: Vec<usize> = match mask {
            None => (0..layout.len()).collect(),
            Some(k) => {
                if k >= avatar.masks.len() {
                    return Err(Error::InvalidArgument(format!("mask index {k} out of range")));
                }
                avatar
                    .element_mask(k)
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| **f)
                    .map(|(i, _)| i)
                    .collect()
            }
        };
        let g3 = layout.geometry_len();
        let scale = active.iter().map(|&e| if e < g3 { cfg.geometry_scale } else { 1.0 }).collect();
        let weights = active.iter().map(|&e| layout.loss_weights[e]).collect();
        let a = active.len();
        let mut enc_sizes = vec![a];
        enc_sizes.extend(&cfg.encoder_hidden);
        enc_sizes.push(2 * cfg.latent);
        let dec_in = cfg.latent + if cfg.view_conditioned { VIEW_DIMS } else { 0 };
        let mut dec_sizes = vec![dec_in];
        dec_sizes.extend(&cfg.decoder_hidden);
        dec_sizes.push(a);
        let mut enc_rng = rng.split_named("encoder");
        let mut dec_rng = rng.split_named("decoder");
        Ok(VaeModel {
            latent: cfg.latent,
            mask,
            view_conditioned: cfg.view_conditioned,
            geometry_scale: cfg.geometry_scale,
            active,
            scale,
            weights,
            rest: avatar.rest_vector(),
            encoder: mlp(&enc_sizes, Activation::LeakyRelu, Activation::Identity, &mut enc_rng),
            decoder: mlp(&dec_sizes, Activation::LeakyRelu, Activation::Identity, &mut dec_rng),
            log: VaeTrainLog::default(),
        })
    }

    pub fn active_len(&self) -> usize {
        self.active.len()
    }

    pub fn decoder_input_len(&self) -> usize {
        self.latent + if self.view_conditioned { VIEW_DIMS } else { 0 }
    }

    /// Network-unit residual of `face` on the active elements.
    pub fn encoder_input(&self, face: &[f64]) -> Result<Vec<f64>> {
        if face.len() != self.rest.len() {
            return Err(Error::shape("face vector", &[self.rest.len()], &[face.len()]));
        }
        Ok(self
            .active
            .iter()
            .zip(&self.scale)
            .map(|(&e, s)| (face[e] - self.rest[e]) / s)
            .collect())
    }

    /// Append the decoder input row for `code` viewed from `view`.
    pub fn push_decoder_input(&self, code: &[f64], view: ViewDirection, out: &mut Vec<f64>) -> Result<()> {
        if code.len() != self.latent {
            return Err(Error::shape("latent code", &[self.latent], &[code.len()]));
        }
        out.extend_from_slice(code);
        if self.view_conditioned {
            out.extend_from_slice(&view.as_array());
        }
        Ok(())
    }

    /// Posterior mean and log-variance of `face`.
    pub fn encode_full(&self, face: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = Tensor::vector(self.encoder_input(face)?);
        let y = self.encoder.forward(&x)?.into_data();
        Ok((y[..self.latent].to_vec(), y[self.latent..].to_vec()))
    }

    /// Posterior mean.
    pub fn encode(&self, face: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_full(face)?.0)
    }

    /// Decoded values on the active elements, in face units.
    pub fn decode_active(&self, code: &[f64], view: ViewDirection) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(self.decoder_input_len());
        self.push_decoder_input(code, view, &mut input)?;
        let o = self.decoder.forward(&Tensor::vector(input))?;
        Ok(self.to_face_units(o.data()))
    }

    /// Map one decoder output row to active-element face values.
    pub fn to_face_units(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.scale)
            .zip(&self.active)
            .map(|((o, s), &e)| self.rest[e] + s * o)
            .collect()
    }

    /// Full face vector: rest everywhere except the active elements.
    pub fn decode(&self, code: &[f64], view: ViewDirection) -> Result<Vec<f64>> {
        let vals = self.decode_active(code, view)?;
        let mut face = self.rest.clone();
        for (&e, v) in self.active.iter().zip(vals) {
            face[e] = v;
        }
        Ok(face)
    }

    /// Batched decoder pass over `[B, decoder_input_len]` with trace.
    pub fn decode_trace(&self, input: &Tensor) -> Result<(Tensor, Trace)> {
        self.decoder.forward_trace(input)
    }

    /// Weighted squared distance between active-element vectors.
    pub fn weighted_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| w * (x - y) * (x - y)).sum()
    }

    /// Reconstruction loss of `face` through the posterior mean at the frontal view.
    pub fn reconstruction_loss(&self, face: &[f64]) -> Result<f64> {
        let code = self.encode(face)?;
        let dec = self.decode_active(&code, ViewDirection::FRONTAL)?;
        let target: Vec<f64> = self.active.iter().map(|&e| face[e]).collect();
        Ok(self.weighted_distance(&dec, &target))
    }

    pub fn decoder_hash(&self) -> String {
        hash_tensors(self.decoder.params())
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params()
    }

    pub fn to_blob(&self, seed: u64) -> Blob {
        let mut blob = Blob::new("vae", seed, serde_json::Value::Null);
        let enc = push_sequential(&mut blob, "encoder", &self.encoder);
        let dec = push_sequential(&mut blob, "decoder", &self.decoder);
        blob.meta = serde_json::json!({
            "latent": self.latent,
            "mask": self.mask,
            "view_conditioned": self.view_conditioned,
            "geometry_scale": self.geometry_scale,
            "encoder": enc,
            "decoder": dec,
            "log": self.log,
        });
        blob
    }

    pub fn from_blob(blob: &Blob, avatar: &Avatar) -> Result<Self> {
        if blob.kind != "vae" {
            return Err(Error::Format(format!("expected a vae blob, found `{}`", blob.kind)));
        }
        let m = &blob.meta;
        let field = |k: &str| m.get(k).ok_or_else(|| Error::Format(format!("vae blob missing `{k}`")));
        let cfg = VaeConfig {
            latent: serde_json::from_value(field("latent")?.clone())?,
            view_conditioned: serde_json::from_value(field("view_conditioned")?.clone())?,
            geometry_scale: serde_json::from_value(field("geometry_scale")?.clone())?,
            encoder_hidden: Vec::new(),
            decoder_hidden: Vec::new(),
            ..VaeConfig::default()
        };
        let mask: Option<usize> = serde_json::from_value(field("mask")?.clone())?;
        let mut model = VaeModel::new(avatar, mask, &cfg, &mut Rng::new(0))?;
        let mut cursor = 0;
        model.encoder = take_sequential(blob, "encoder", field("encoder")?, &mut cursor)?;
        model.decoder = take_sequential(blob, "decoder", field("decoder")?, &mut cursor)?;
        model.log = serde_json::from_value(field("log")?.clone())?;
        if model.encoder.fan_in() != model.active_len() || model.decoder.fan_out() != model.active_len() {
            return Err(Error::shape("vae blob widths", &[model.active_len()], &[model.encoder.fan_in()]));
        }
        Ok(model)
    }
}

/// Loss of one mini-batch (mean over rows) and its gradients.
struct BatchResult {
    recon: f64,
    kl: f64,
    enc_grads: crate::numeric::Gradients,
    dec_grads: crate::numeric::Gradients,
}

fn batch_step(model: &VaeModel, inputs: &[&[f64]], views: &[ViewDirection], eps: &[f64], kl_weight: f64) -> Result<BatchResult> {
    let b = inputs.len();
    let a = model.active_len();
    let l = model.latent;
    let x = Tensor::matrix(b, a, inputs.iter().flat_map(|r| r.iter().copied()).collect())?;
    let (stats, enc_trace) = model.encoder.forward_trace(&x)?;
    let stats = stats.into_data();
    let mut z = Vec::with_capacity(b * l);
    let mut dec_in = Vec::with_capacity(b * model.decoder_input_len());
    let mut kl = 0.0;
    for r in 0..b {
        let mu = &stats[r * 2 * l..r * 2 * l + l];
        let lv = &stats[r * 2 * l + l..(r + 1) * 2 * l];
        let zr: Vec<f64> = (0..l).map(|j| mu[j] + (0.5 * lv[j]).exp() * eps[r * l + j]).collect();
        for j in 0..l {
            kl += 0.5 * (mu[j] * mu[j] + lv[j].exp() - 1.0 - lv[j]);
        }
        model.push_decoder_input(&zr, views[r], &mut dec_in)?;
        z.extend(zr);
    }
    kl /= b as f64;
    let dec_in = Tensor::matrix(b, model.decoder_input_len(), dec_in)?;
    let (out, dec_trace) = model.decoder.forward_trace(&dec_in)?;
    let out = out.into_data();
    let mut recon = 0.0;
    let mut d_out = vec![0.0; b * a];
    let inv_b = 1.0 / b as f64;
    for r in 0..b {
        for e in 0..a {
            let s = model.scale[e];
            let w = model.weights[e] * s * s;
            let diff = out[r * a + e] - inputs[r][e];
            recon += w * diff * diff;
            d_out[r * a + e] = 2.0 * w * diff * inv_b;
        }
    }
    recon *= inv_b;
    let (d_in, dec_grads) = model.decoder.backward(&dec_trace, &Tensor::matrix(b, a, d_out)?)?;
    let d_in = d_in.into_data();
    let di = model.decoder_input_len();
    let mut d_stats = vec![0.0; b * 2 * l];
    for r in 0..b {
        for j in 0..l {
            let mu = stats[r * 2 * l + j];
            let lv = stats[r * 2 * l + l + j];
            let dz = d_in[r * di + j];
            d_stats[r * 2 * l + j] = dz + kl_weight * mu * inv_b;
            d_stats[r * 2 * l + l + j] =
                dz * eps[r * l + j] * 0.5 * (0.5 * lv).exp() + kl_weight * 0.5 * (lv.exp() - 1.0) * inv_b;
        }
    }
    let (_, enc_grads) = model.encoder.backward(&enc_trace, &Tensor::matrix(b, 2 * l, d_stats)?)?;
    Ok(BatchResult {
        recon,
        kl,
        enc_grads,
        dec_grads,
    })
}

fn mean_losses(model: &VaeModel, inputs: &[Vec<f64>]) -> Result<(f64, f64)> {
    let n = inputs.len().min(256);
    let (mut recon, mut kl) = (0.0, 0.0);
    for x in &inputs[..n] {
        let stats = model.encoder.forward(&Tensor::vector(x.clone()))?.into_data();
        let (mu, lv) = stats.split_at(model.latent);
        for j in 0..model.latent {
            kl += 0.5 * (mu[j] * mu[j] + lv[j].exp() - 1.0 - lv[j]);
        }
        let mut input = Vec::new();
        model.push_decoder_input(mu, ViewDirection::FRONTAL, &mut input)?;
        let out = model.decoder.forward(&Tensor::vector(input))?.into_data();
        recon += out
            .iter()
            .zip(x)
            .enumerate()
            .map(|(e, (o, t))| model.weights[e] * model.scale[e] * model.scale[e] * (o - t) * (o - t))
            .sum::<f64>();
    }
    Ok((recon / n as f64, kl / n as f64))
}

/// Draw a training view near the frontal direction.
pub fn jittered_view(rng: &mut Rng, jitter: f64) -> ViewDirection {
    if jitter == 0.0 {
        return ViewDirection::FRONTAL;
    }
    let x = rng.uniform_range(-jitter, jitter);
    let y = rng.uniform_range(-jitter, jitter);
    ViewDirection::new([x, y, 1.0]).expect("finite view")
}

/// Train a VAE (holistic when `mask` is `None`) on full face vectors.
pub fn train_vae(avatar: &Avatar, faces: &[Vec<f64>], mask: Option<usize>, cfg: &VaeConfig, rng: &Rng) -> Result<VaeModel> {
    if faces.is_empty() {
        return Err(Error::Empty("vae training split".into()));
    }
    let mut model = VaeModel::new(avatar, mask, cfg, &mut rng.split_named("init"))?;
    let inputs = faces.iter().map(|f| model.encoder_input(f)).collect::<Result<Vec<_>>>()?;
    let (r0, k0) = mean_losses(&model, &inputs)?;
    let mut log = VaeTrainLog {
        steps: 0,
        initial_recon: r0,
        final_recon: r0,
        initial_kl: k0,
        final_kl: k0,
        curve: Vec::new(),
    };
    let mut adam_enc = AdamState::for_model(AdamConfig::default(), &model.encoder);
    let mut adam_dec = AdamState::for_model(AdamConfig::default(), &model.decoder);
    let n = inputs.len();
    let batch = cfg.batch.min(n);
    let per_epoch = n / batch;
    let total = cfg.epochs * per_epoch;
    let mut order_rng = rng.split_named("order");
    let mut noise_rng = rng.split_named("noise");
    let l = model.latent;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        let order = order_rng.permutation(n);
        for chunk in order.chunks_exact(batch) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let views: Vec<ViewDirection> = (0..batch).map(|_| jittered_view(&mut noise_rng, cfg.view_jitter)).collect();
            let eps: Vec<f64> = (0..batch * l).map(|_| noise_rng.normal()).collect();
            let res = batch_step(&model, &rows, &views, &eps, cfg.kl_weight)?;
            let loss = res.recon + cfg.kl_weight * res.kl;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            // cosine decay to 5% of the base rate
            let progress = step as f64 / total.max(1) as f64;
            let lr = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            adam_enc.update(&mut model.encoder, &res.enc_grads, lr)?;
            adam_dec.update(&mut model.decoder, &res.dec_grads, lr)?;
            if step % 50 == 0 {
                log.curve.push(LossPoint {
                    step,
                    recon: res.recon,
                    kl: res.kl,
                });
            }
            step += 1;
        }
    }
    let (r1, k1) = mean_losses(&model, &inputs)?;
    log.steps = step;
    log.final_recon = r1;
    log.final_kl = k1;
    model.log = log;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::{AvatarConfig, ExpressionParams};
    use crate::numeric::{grad_check, Objective};

    fn small_avatar() -> Avatar {
        Avatar::new(AvatarConfig {
            grid: 7,
            texture_size: 8,
            ..AvatarConfig::default()
        })
        .unwrap()
    }

    struct VaeObjective {
        model: VaeModel,
        inputs: Vec<Vec<f64>>,
        views: Vec<ViewDirection>,
        eps: Vec<f64>,
    }

    impl Objective for VaeObjective {
        fn parameters(&self) -> Vec<f64> {
            let mut p = self.model.encoder.flat_params();
            p.extend(self.model.decoder.flat_params());
            p
        }
        fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
            let n = self.model.encoder.num_params();
            self.model.encoder.set_flat_params(&flat[..n])?;
            self.model.decoder.set_flat_params(&flat[n..])
        }
        fn evaluate(&self) -> Result<(f64, Vec<f64>)> {
            let rows: Vec<&[f64]> = self.inputs.iter().map(|r| r.as_slice()).collect();
            let res = batch_step(&self.model, &rows, &self.views, &self.eps, 0.3)?;
            let mut g = res.enc_grads.flatten();
            g.extend(res.dec_grads.flatten());
            Ok((res.recon + 0.3 * res.kl, g))
        }
    }

    #[test]
    fn vae_loss_gradients_match_finite_differences() {
        let a = small_avatar();
        let cfg = VaeConfig {
            latent: 3,
            encoder_hidden: vec![4],
            decoder_hidden: vec![4],
            ..VaeConfig::default()
        };
        let mut rng = Rng::new(5);
        let model = VaeModel::new(&a, Some(2), &cfg, &mut rng).unwrap();
        let mut p = ExpressionParams::rest();
        p.jaw = 0.8;
        p.smile = -0.4;
        let (m, t) = a.synthesize(&p).unwrap();
        let f = a.flatten(&m, &t);
        // a non-rest second face: the rest face puts every hidden unit on its kink
        p.jaw = -0.3;
        p.stretch = 0.6;
        let (m2, t2) = a.synthesize(&p).unwrap();
        let f2 = a.flatten(&m2, &t2);
        let inputs = vec![model.encoder_input(&f).unwrap(), model.encoder_input(&f2).unwrap()];
        let views = vec![ViewDirection::FRONTAL, jittered_view(&mut rng, 0.2)];
        let eps: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let mut obj = VaeObjective { model, inputs, views, eps };
        let report = grad_check(&mut obj, 1e-5).unwrap();
        let w = report.worst_index;
        assert!(
            report.max_relative_error < 1e-6,
            "{} at {w}: {} vs {} (encoder has {})",
            report.max_relative_error,
            report.analytic[w],
            report.numeric[w],
            obj.model.encoder.num_params()
        );
    }

    #[test]
    fn masked_decode_keeps_rest_outside_mask() {
        let a = small_avatar();
        let model = VaeModel::new(&a, Some(0), &VaeConfig::default(), &mut Rng::new(1)).unwrap();
        let rest = a.rest_vector();
        let flags = a.element_mask(0);
        let face = model.decode(&[0.7; 16], ViewDirection::FRONTAL).unwrap();
        for (i, f) in flags.iter().enumerate() {
            if !f {
                assert_eq!(face[i], rest[i]);
            }
        }
    }

    #[test]
    fn masked_encode_ignores_out_of_mask_content() {
        let a = small_avatar();
        let model = VaeModel::new(&a, Some(0), &VaeConfig::default(), &mut Rng::new(1)).unwrap();
        let mut face = a.rest_vector();
        let c0 = model.encode(&face).unwrap();
        let flags = a.element_mask(0);
        for (i, f) in flags.iter().enumerate() {
            if !f {
                face[i] += 0.3;
            }
        }
        assert_eq!(model.encode(&face).unwrap(), c0);
    }

    #[test]
    fn zero_epochs_records_initial_losses() {
        let a = small_avatar();
        let faces = vec![a.rest_vector(); 4];
        let cfg = VaeConfig {
            epochs: 0,
            ..VaeConfig::default()
        };
        let m = train_vae(&a, &faces, None, &cfg, &Rng::new(2)).unwrap();
        assert_eq!(m.log.steps, 0);
        assert_eq!(m.log.initial_recon, m.log.final_recon);
        assert!(train_vae(&a, &[], None, &cfg, &Rng::new(2)).is_err());
    }

    #[test]
    fn blob_round_trip_preserves_model() {
        let a = small_avatar();
        let faces = vec![a.rest_vector(); 8];
        let cfg = VaeConfig {
            epochs: 1,
            batch: 4,
            ..VaeConfig::default()
        };
        let m = train_vae(&a, &faces, Some(1), &cfg, &Rng::new(3)).unwrap();
        let bytes = m.to_blob(3).to_bytes().unwrap();
        let back = VaeModel::from_blob(&Blob::from_bytes(&bytes).unwrap(), &a).unwrap();
        assert_eq!(back.encoder, m.encoder);
        assert_eq!(back.decoder, m.decoder);
        assert_eq!(back.active, m.active);
        assert_eq!(back.log, m.log);
        assert_eq!(back, m);
    }
}
