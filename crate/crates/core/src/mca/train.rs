//! Supervision minting and the training loop shared by MCA and CA.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{BlendMode, LossTerms, McaConfig, McaModel, Supervision, Window};
use crate::codec::{
    align_exemplar_index, build_exemplar_bank, masked_target, perturb_bank_code, train_vae, ExemplarBank, VaeConfig,
    VaeModel,
};
use crate::error::{Error, Result};
use crate::face::{preprocess, Augmentation, Avatar, Dataset, ExpressionParams, HeadsetFrame, Session, ViewDirection};
use crate::numeric::{AdamConfig, AdamState, Blob, Gradients, Parameterized, Rng};
use crate::par::{self, Exec};

/// Holistic VAE, masked VAEs and their exemplar banks.
#[derive(Debug, Clone, PartialEq)]
pub struct Codecs {
    pub holistic: VaeModel,
    pub masked: Vec<VaeModel>,
    pub banks: Vec<ExemplarBank>,
}

fn read_blob(path: &Path) -> Result<Blob> {
    let bytes = std::fs::read(path).map_err(|e| Error::MissingArtifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Blob::from_bytes(&bytes)
}

impl Codecs {
    /// Files written by [`Codecs::save`], relative to the codec directory.
    pub fn file_names(modules: usize) -> Vec<String> {
        let mut names = vec!["holistic.vae".to_string()];
        for k in 0..modules {
            names.push(format!("masked{k}.vae"));
            names.push(format!("bank{k}.bin"));
        }
        names
    }

    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("holistic.vae"), self.holistic.to_blob(seed).to_bytes()?)?;
        for (k, (m, b)) in self.masked.iter().zip(&self.banks).enumerate() {
            std::fs::write(dir.join(format!("masked{k}.vae")), m.to_blob(seed).to_bytes()?)?;
            b.write(&dir.join(format!("bank{k}.bin")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, avatar: &Avatar, exec: Exec) -> Result<Self> {
        let holistic = VaeModel::from_blob(&read_blob(&dir.join("holistic.vae"))?, avatar)?;
        let mut masked = Vec::with_capacity(avatar.masks.len());
        let mut banks = Vec::with_capacity(avatar.masks.len());
        for k in 0..avatar.masks.len() {
            let m = VaeModel::from_blob(&read_blob(&dir.join(format!("masked{k}.vae")))?, avatar)?;
            banks.push(ExemplarBank::read(&dir.join(format!("bank{k}.bin")), &m, exec)?);
            masked.push(m);
        }
        Ok(Codecs { holistic, masked, banks })
    }
}

/// Flat face vectors of the dome split.
pub fn dome_faces(avatar: &Avatar, dataset: &Dataset) -> Vec<Vec<f64>> {
    dataset.dome.iter().map(|f| avatar.flatten(&f.mesh, &f.texture)).collect()
}

pub fn train_codecs(avatar: &Avatar, dataset: &Dataset, cfg: &VaeConfig, rng: &Rng, exec: Exec) -> Result<Codecs> {
    let faces = dome_faces(avatar, dataset);
    let holistic = train_vae(avatar, &faces, None, cfg, &rng.split_named("holistic"))?;
    let mut masked = Vec::with_capacity(avatar.masks.len());
    let mut banks = Vec::with_capacity(avatar.masks.len());
    for k in 0..avatar.masks.len() {
        let m = train_vae(avatar, &faces, Some(k), cfg, &rng.split_named(&format!("masked{k}")))?;
        banks.push(build_exemplar_bank(&m, &faces, exec)?);
        masked.push(m);
    }
    Ok(Codecs { holistic, masked, banks })
}

/// Supervision of one headset frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSupervision {
    /// Holistic code of the clean face.
    pub full: Vec<f64>,
    /// Aligned exemplar index per module.
    pub part_index: Vec<usize>,
    /// Frontal decode of `full`.
    pub target: Vec<f64>,
}

impl FrameSupervision {
    pub fn part_codes(&self, codecs: &Codecs) -> Vec<Vec<f64>> {
        self.part_index
            .iter()
            .zip(&codecs.banks)
            .map(|(&i, b)| b.codes[i].clone())
            .collect()
    }
}

/// Encode the clean face of `params`, decode it frontally and align each
/// module's masked decode to its exemplar bank.
pub fn supervise(avatar: &Avatar, codecs: &Codecs, params: &ExpressionParams) -> Result<FrameSupervision> {
    let (mesh, tex) = avatar.synthesize(params)?;
    let face = avatar.flatten(&mesh, &tex);
    let full = codecs.holistic.encode(&face)?;
    let target = codecs.holistic.decode(&full, ViewDirection::FRONTAL)?;
    let part_index = codecs
        .masked
        .iter()
        .zip(&codecs.banks)
        .map(|(m, b)| Ok(align_exemplar_index(b, &masked_target(m, &target))?.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSupervision {
        full,
        part_index,
        target,
    })
}

pub fn supervise_session(avatar: &Avatar, codecs: &Codecs, session: &Session, exec: Exec) -> Result<Vec<FrameSupervision>> {
    par::map(exec, &session.frames, |f| supervise(avatar, codecs, &f.params))
        .into_iter()
        .collect()
}

/// Preprocessed camera images of one frame.
pub fn frame_inputs(frame: &HeadsetFrame, factor: usize, aug: &Augmentation) -> Vec<Vec<f64>> {
    frame.images.iter().map(|img| preprocess(&aug.apply(img), factor)).collect()
}

/// Unaugmented inputs of every frame of `session`.
pub fn session_inputs(session: &Session, factor: usize, exec: Exec) -> Vec<Vec<Vec<f64>>> {
    par::map(exec, &session.frames, |f| frame_inputs(f, factor, &Augmentation::identity()))
}

/// Causal window ending at frame `t`.
pub fn window_at(session: &Session, inputs: &[Vec<Vec<f64>>], t: usize, len: usize) -> Window {
    Window {
        frames: session.history(t, len).into_iter().map(|i| inputs[i].clone()).collect(),
    }
}

/// Pixel count of each preprocessed camera image.
pub fn camera_dims(session: &Session, factor: usize) -> Vec<usize> {
    session.frames[0]
        .images
        .iter()
        .map(|img| (img.width / factor) * (img.height / factor))
        .collect()
}

/// One training split: sessions with their supervision and clean inputs.
pub struct TrainSet<'a> {
    pub sessions: Vec<&'a Session>,
    pub supervision: Vec<Vec<FrameSupervision>>,
    pub inputs: Vec<Vec<Vec<Vec<f64>>>>,
}

impl<'a> TrainSet<'a> {
    pub fn new(avatar: &Avatar, codecs: &Codecs, sessions: Vec<&'a Session>, factor: usize, exec: Exec) -> Result<Self> {
        if sessions.iter().all(|s| s.frames.is_empty()) {
            return Err(Error::Empty("training sessions".into()));
        }
        let supervision = sessions
            .iter()
            .map(|s| supervise_session(avatar, codecs, s, exec))
            .collect::<Result<Vec<_>>>()?;
        let inputs = sessions.iter().map(|s| session_inputs(s, factor, exec)).collect();
        Ok(TrainSet {
            sessions,
            supervision,
            inputs,
        })
    }

    pub fn samples(&self) -> Vec<(usize, usize)> {
        self.sessions
            .iter()
            .enumerate()
            .flat_map(|(s, sess)| (0..sess.frames.len()).map(move |t| (s, t)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub recon: f64,
    pub full_code: f64,
    pub part_code: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    /// Mean reconstruction term on the held-out windows.
    pub eval_recon: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: usize,
    pub params: usize,
    pub curve: Vec<CurvePoint>,
    pub snapshots: Vec<Snapshot>,
    /// `(step, loss)` of a non-finite loss; the model is the last good one.
    pub diverged: Option<(usize, f64)>,
}

/// Held-out windows used for periodic evaluation snapshots.
pub struct EvalSet {
    pub windows: Vec<Window>,
    pub sups: Vec<Supervision>,
}

impl EvalSet {
    pub fn mean_recon(&self, model: &McaModel, exec: Exec) -> Result<f64> {
        if self.windows.is_empty() {
            return Ok(0.0);
        }
        let idx: Vec<usize> = (0..self.windows.len()).collect();
        let total = par::map_chunks_reduce(
            exec,
            &idx,
            8,
            |c| -> Result<f64> {
                let ws: Vec<Window> = c.iter().map(|&i| self.windows[i].clone()).collect();
                let preds = model.forward(&ws, ViewDirection::FRONTAL)?;
                Ok(preds
                    .iter()
                    .zip(c)
                    .map(|(p, &i)| model.codec.weighted_distance(&p.face, &self.sups[i].target))
                    .sum())
            },
            |a, b| {
                *a = match (std::mem::replace(a, Ok(0.0)), b) {
                    (Ok(x), Ok(y)) => Ok(x + y),
                    (Err(e), _) | (_, Err(e)) => Err(e),
                }
            },
        )
        .expect("non-empty")?;
        Ok(total / self.windows.len() as f64)
    }
}

fn supervision_for(model: &McaModel, fs: &FrameSupervision, codecs: &Codecs, alpha: Option<f64>, rng: &mut Rng) -> Supervision {
    let parts = if model.mode == BlendMode::Single {
        vec![fs.full.clone()]
    } else {
        fs.part_index
            .iter()
            .zip(&codecs.banks)
            .map(|(&i, b)| match alpha {
                Some(a) => perturb_bank_code(b, i, a, rng),
                None => b.codes[i].clone(),
            })
            .collect()
    };
    Supervision {
        full: fs.full.clone(),
        parts,
        target: fs.target.clone(),
    }
}

pub fn eval_set(model: &McaModel, codecs: &Codecs, set: &TrainSet, max: usize) -> EvalSet {
    let mut windows = Vec::new();
    let mut sups = Vec::new();
    let mut dummy = Rng::new(0);
    'outer: for (s, sess) in set.sessions.iter().enumerate() {
        for t in 0..sess.frames.len() {
            if windows.len() >= max {
                break 'outer;
            }
            windows.push(window_at(sess, &set.inputs[s], t, model.window()));
            sups.push(supervision_for(model, &set.supervision[s][t], codecs, None, &mut dummy));
        }
    }
    EvalSet { windows, sups }
}

struct Optimizer {
    paths: Vec<AdamState>,
    decoder: Option<AdamState>,
}

impl Optimizer {
    fn new(model: &McaModel) -> Self {
        Optimizer {
            paths: model.paths.iter().map(|p| AdamState::for_model(AdamConfig::default(), p)).collect(),
            decoder: model
                .config
                .ablation
                .end2end
                .then(|| AdamState::for_model(AdamConfig::default(), &model.codec.decoder)),
        }
    }

    fn step(&mut self, model: &mut McaModel, grads: Gradients, lr: f64) -> Result<()> {
        let mut groups = grads.0.into_iter();
        for (path, st) in model.paths.iter_mut().zip(&mut self.paths) {
            let n = path.params().len();
            let g = Gradients(groups.by_ref().take(n).collect());
            st.update(path, &g, lr)?;
        }
        if let Some(st) = &mut self.decoder {
            let g = Gradients(groups.collect());
            st.update(&mut model.codec.decoder, &g, lr * model.config.decoder_lr_scale)?;
        }
        Ok(())
    }
}

/// Train `model` on `set`. Deterministic given `rng` for any `exec`.
pub fn train_model(
    mut model: McaModel,
    codecs: &Codecs,
    set: &TrainSet,
    eval: Option<&EvalSet>,
    rng: &Rng,
    exec: Exec,
) -> Result<(McaModel, TrainLog)> {
    let cfg = model.config.clone();
    let samples = set.samples();
    if samples.is_empty() {
        return Err(Error::Empty("training samples".into()));
    }
    let batch = cfg.batch.min(samples.len());
    let per_epoch = samples.len() / batch;
    let total = (cfg.epochs * per_epoch).max(1);
    let mut opt = Optimizer::new(&model);
    let mut log = TrainLog {
        params: model.num_params(),
        ..TrainLog::default()
    };
    let alpha = (cfg.ablation.soft_ex && model.mode != BlendMode::Single).then_some(cfg.soft_ex_alpha);
    let window = model.window();
    let mut order_rng = rng.split_named("order");
    let mut step = 0;
    if let Some(ev) = eval {
        log.snapshots.push(Snapshot {
            epoch: 0,
            eval_recon: ev.mean_recon(&model, exec)?,
        });
    }
    for epoch in 0..cfg.epochs {
        let order = order_rng.permutation(samples.len());
        for chunk in order.chunks_exact(batch) {
            let mut srng = rng.split(step as u64 + 1);
            // separate stream so toggling code noise leaves augmentation untouched
            let mut nrng = srng.split_named("code-noise");
            let mut windows = Vec::with_capacity(batch);
            let mut sups = Vec::with_capacity(batch);
            for &i in chunk {
                let (s, t) = samples[i];
                let sess = set.sessions[s];
                let aug = Augmentation::draw(&cfg.augment, &mut srng);
                let w = if aug == Augmentation::identity() {
                    window_at(sess, &set.inputs[s], t, window)
                } else {
                    Window {
                        frames: sess
                            .history(t, window)
                            .into_iter()
                            .map(|j| frame_inputs(&sess.frames[j], cfg.image_factor, &aug))
                            .collect(),
                    }
                };
                windows.push(w);
                sups.push(supervision_for(&model, &set.supervision[s][t], codecs, alpha, &mut nrng));
            }
            let idx: Vec<usize> = (0..batch).collect();
            let reduced = par::map_chunks_reduce(
                exec,
                &idx,
                cfg.chunk,
                |c| {
                    let w: Vec<Window> = c.iter().map(|&i| windows[i].clone()).collect();
                    let s: Vec<Supervision> = c.iter().map(|&i| sups[i].clone()).collect();
                    model.loss_and_grads(&w, &s)
                },
                |acc, next| {
                    *acc = match (std::mem::replace(acc, Err(Error::Empty("fold".into()))), next) {
                        (Ok((mut t, mut g)), Ok((t2, g2))) => {
                            t.add(&t2);
                            g.add_assign(&g2);
                            Ok((t, g))
                        }
                        (Err(e), _) | (_, Err(e)) => Err(e),
                    }
                },
            )
            .expect("non-empty batch");
            let (mut terms, mut grads) = reduced?;
            let inv = 1.0 / batch as f64;
            terms = LossTerms {
                recon: terms.recon * inv,
                full_code: terms.full_code * inv,
                part_code: terms.part_code * inv,
            };
            grads.scale(inv);
            let loss = terms.total(cfg.lambda1, cfg.lambda2);
            if !loss.is_finite() || grads.0.iter().flatten().any(|g| !g.is_finite()) {
                log.diverged = Some((step, loss));
                log.steps = step;
                return Ok((model, log));
            }
            let progress = step as f64 / total as f64;
            let lr = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            opt.step(&mut model, grads, lr)?;
            if step % 25 == 0 {
                log.curve.push(CurvePoint {
                    step,
                    recon: terms.recon,
                    full_code: terms.full_code,
                    part_code: terms.part_code,
                });
            }
            step += 1;
        }
        let last = epoch + 1 == cfg.epochs;
        if let Some(ev) = eval {
            if last || (epoch + 1) % 5 == 0 {
                log.snapshots.push(Snapshot {
                    epoch: epoch + 1,
                    eval_recon: ev.mean_recon(&model, exec)?,
                });
            }
        }
    }
    log.steps = step;
    Ok((model, log))
}

/// Build a modular model for `dataset` on top of `codecs`.
pub fn new_mca(avatar: &Avatar, dataset: &Dataset, codecs: &Codecs, config: McaConfig, rng: &Rng) -> Result<McaModel> {
    let dims = camera_dims(dataset.test_session(), config.image_factor);
    let part_latent = codecs.masked[0].latent;
    McaModel::new(avatar, codecs.holistic.clone(), config, &dims, part_latent, rng)
}

/// Build the holistic baseline for `dataset` on top of `codecs`.
pub fn new_ca(avatar: &Avatar, dataset: &Dataset, codecs: &Codecs, config: McaConfig, rng: &Rng) -> Result<McaModel> {
    let dims = camera_dims(dataset.test_session(), config.image_factor);
    McaModel::holistic(avatar, codecs.holistic.clone(), config, &dims, rng)
}
