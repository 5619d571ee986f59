//! Pipeline stages and their on-disk artifacts.
//!
//! Every stage writes into `<out>/<stage>-<key>/`, where `key` hashes the
//! configuration slice the stage depends on together with the keys of its
//! upstream stages. A `manifest.json` lists the SHA-256 of every file in the
//! directory; downstream stages re-verify it before reading, so a changed or
//! missing upstream artifact is detected instead of silently reused.
//! Dependency order: data -> codec -> mca / ca -> eval, and codec ->
//! expressiveness.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, evaluate_model, expressiveness_experiment, predict_session, session_truth, Comparison,
    ExpressivenessReport, FrameMetrics,
};
use crate::face::{save_rgb_png, Avatar, Dataset, ViewDirection};
use crate::hash::sha256_hex;
use crate::mca::train::{dome_faces, eval_set, new_ca, new_mca, session_inputs, window_at};
use crate::mca::{
    amplified_face, closed_eye_base, flexible_animation, train_codecs, train_model, Codecs, McaModel, TrainLog, TrainSet,
};
use crate::numeric::{Blob, Rng};
use crate::par::{self, Exec};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mca,
    Ca,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mca => "mca",
            ModelKind::Ca => "ca",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mca" => Ok(ModelKind::Mca),
            "ca" => Ok(ModelKind::Ca),
            _ => Err(Error::InvalidArgument(format!("unknown model `{s}` (expected mca or ca)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub key: String,
    pub seed: u64,
    /// Upstream stage name -> key.
    pub upstream: BTreeMap<String, String>,
    /// Relative path -> SHA-256 of the file contents.
    pub files: BTreeMap<String, String>,
}

fn key_of(value: &serde_json::Value) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?)[..16].to_string())
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            list_files(root, &p, out)?;
        } else if p.strip_prefix(root).ok() != Some(Path::new(MANIFEST)) {
            out.push(p);
        }
    }
    Ok(())
}

fn rel_name(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Hash every file under `dir` and write its manifest.
pub fn write_manifest(dir: &Path, stage: &str, key: &str, seed: u64, upstream: BTreeMap<String, String>) -> Result<Manifest> {
    let mut paths = Vec::new();
    list_files(dir, dir, &mut paths)?;
    let mut files = BTreeMap::new();
    for p in paths {
        files.insert(rel_name(dir, &p), sha256_hex(&std::fs::read(&p)?));
    }
    let m = Manifest {
        stage: stage.into(),
        key: key.into(),
        seed,
        upstream,
        files,
    };
    write_json(&dir.join(MANIFEST), &m)?;
    Ok(m)
}

/// Read a stage manifest and check every listed file against its hash.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = std::fs::read(&path).map_err(|e| Error::MissingArtifact {
        path: path.clone(),
        reason: format!("{e}; run the upstream stage first"),
    })?;
    let m: Manifest = serde_json::from_slice(&bytes)?;
    for (name, hash) in &m.files {
        let p = dir.join(name);
        let data = std::fs::read(&p).map_err(|e| Error::MissingArtifact {
            path: p.clone(),
            reason: e.to_string(),
        })?;
        if &sha256_hex(&data) != hash {
            return Err(Error::StaleArtifact {
                path: p,
                reason: "content does not match the stage manifest".into(),
            });
        }
    }
    Ok(m)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn save_face_png(avatar: &Avatar, face: &[f64], path: &Path) -> Result<()> {
    let (m, t) = avatar.unflatten(face)?;
    let img = avatar.render_frontal(&m, &t, ViewDirection::FRONTAL)?;
    save_rgb_png(img.width, img.height, &img.rgb, path)
}

/// Start a fresh stage directory (previous contents are replaced).
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mca_params: usize,
    pub ca_params: usize,
    pub splits: Vec<SplitReport>,
    /// Threshold checks that failed on the compositional split.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexReport {
    pub frames: usize,
    pub shuffle_seed: u64,
    /// Largest absolute difference between unshuffled flexible animation and
    /// standard inference (zero when the two paths agree bit for bit).
    pub identity_max_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplifyReport {
    pub module: usize,
    pub eye: usize,
    pub factor: f64,
    pub base_index: usize,
    pub base_openness: f64,
    pub open_eye_frames: usize,
    /// Share of open-eye frames whose regressed openness grew under amplification.
    pub increased_fraction: f64,
    /// On every frame, factor 1 reproduced the unamplified prediction and
    /// code bit for bit, and factor 0 returned exactly the closed-eye base.
    pub endpoints_exact: bool,
}

/// Stage runner bound to one resolved configuration and output root.
pub struct Pipeline {
    pub config: RunConfig,
    pub out: PathBuf,
    pub exec: Exec,
}

impl Pipeline {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>, exec: Exec) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            out: out.into(),
            exec,
        })
    }

    fn rng(&self) -> Rng {
        Rng::new(self.config.seed)
    }

    pub fn data_key(&self) -> Result<String> {
        key_of(&serde_json::json!({
            "avatar": self.config.avatar,
            "data": self.config.effective_data(),
        }))
    }

    pub fn codec_key(&self) -> Result<String> {
        key_of(&serde_json::json!({
            "data": self.data_key()?,
            "codec": self.config.effective_codec(),
            "seed": self.config.seed,
        }))
    }

    pub fn model_key(&self, kind: ModelKind) -> Result<String> {
        key_of(&serde_json::json!({
            "codec": self.codec_key()?,
            "mca": self.config.mca,
            "kind": kind,
            "seed": self.config.seed,
        }))
    }

    pub fn stage_dir(&self, stage: &str, key: &str) -> PathBuf {
        self.out.join(format!("{stage}-{key}"))
    }

    pub fn data_dir(&self) -> Result<PathBuf> {
        Ok(self.stage_dir("data", &self.data_key()?))
    }

    pub fn codec_dir(&self) -> Result<PathBuf> {
        Ok(self.stage_dir("codec", &self.codec_key()?))
    }

    pub fn model_dir(&self, kind: ModelKind) -> Result<PathBuf> {
        Ok(self.stage_dir(kind.name(), &self.model_key(kind)?))
    }

    fn finish(&self, dir: &Path, stage: &str, key: &str, upstream: BTreeMap<String, String>) -> Result<Manifest> {
        std::fs::write(dir.join(CONFIG_FILE), self.config.to_toml()?)?;
        write_manifest(dir, stage, key, self.config.seed, upstream)
    }

    pub fn gen_data(&self) -> Result<PathBuf> {
        let dir = self.data_dir()?;
        let avatar = Avatar::new(self.config.avatar.clone())?;
        let ds = crate::face::generate_dataset(&self.config.effective_data(), &avatar, self.exec)?;
        fresh_dir(&dir)?;
        ds.write(&dir)?;
        self.finish(&dir, "data", &self.data_key()?, BTreeMap::new())?;
        Ok(dir)
    }

    pub fn load_data(&self) -> Result<(Dataset, Avatar)> {
        let dir = self.data_dir()?;
        verify_manifest(&dir)?;
        Dataset::read(&dir)
    }

    pub fn train_codec(&self) -> Result<PathBuf> {
        let (ds, avatar) = self.load_data()?;
        let codecs = train_codecs(&avatar, &ds, &self.config.effective_codec(), &self.rng().split_named("codec"), self.exec)?;
        let dir = self.codec_dir()?;
        fresh_dir(&dir)?;
        codecs.save(&dir, self.config.seed)?;
        let up = BTreeMap::from([("data".to_string(), self.data_key()?)]);
        self.finish(&dir, "codec", &self.codec_key()?, up)?;
        Ok(dir)
    }

    pub fn load_codecs(&self, avatar: &Avatar) -> Result<Codecs> {
        let dir = self.codec_dir()?;
        let m = verify_manifest(&dir)?;
        if m.upstream.get("data") != Some(&self.data_key()?) {
            return Err(Error::StaleArtifact {
                path: dir,
                reason: "codec was trained on a different dataset".into(),
            });
        }
        Codecs::load(&dir, avatar, self.exec)
    }

    pub fn build_model(&self, kind: ModelKind, avatar: &Avatar, ds: &Dataset, codecs: &Codecs) -> Result<McaModel> {
        let rng = self.rng().split_named(kind.name()).split_named("init");
        match kind {
            ModelKind::Mca => new_mca(avatar, ds, codecs, self.config.mca.clone(), &rng),
            ModelKind::Ca => new_ca(avatar, ds, codecs, self.config.mca.clone(), &rng),
        }
    }

    /// Train on the training sessions with snapshots on the held-out session.
    pub fn fit(&self, kind: ModelKind, avatar: &Avatar, ds: &Dataset, codecs: &Codecs) -> Result<(McaModel, TrainLog)> {
        let model = self.build_model(kind, avatar, ds, codecs)?;
        let factor = self.config.mca.image_factor;
        let set = TrainSet::new(avatar, codecs, ds.train_sessions().iter().collect(), factor, self.exec)?;
        let held = TrainSet::new(avatar, codecs, vec![ds.test_session()], factor, self.exec)?;
        let ev = eval_set(&model, codecs, &held, 64);
        train_model(model, codecs, &set, Some(&ev), &self.rng().split_named(kind.name()).split_named("train"), self.exec)
    }

    pub fn train(&self, kind: ModelKind) -> Result<(PathBuf, TrainLog)> {
        let (ds, avatar) = self.load_data()?;
        let codecs = self.load_codecs(&avatar)?;
        let (model, log) = self.fit(kind, &avatar, &ds, &codecs)?;
        let dir = self.model_dir(kind)?;
        fresh_dir(&dir)?;
        std::fs::write(dir.join("model.bin"), model.to_blob(self.config.seed)?.to_bytes()?)?;
        write_json(&dir.join("train_log.json"), &log)?;
        let up = BTreeMap::from([("codec".to_string(), self.codec_key()?)]);
        self.finish(&dir, kind.name(), &self.model_key(kind)?, up)?;
        Ok((dir, log))
    }

    pub fn load_model(&self, kind: ModelKind, avatar: &Avatar) -> Result<McaModel> {
        let dir = self.model_dir(kind)?;
        let m = verify_manifest(&dir)?;
        if m.upstream.get("codec") != Some(&self.codec_key()?) {
            return Err(Error::StaleArtifact {
                path: dir,
                reason: "model was trained on different codecs".into(),
            });
        }
        let bytes = std::fs::read(dir.join("model.bin"))?;
        McaModel::from_blob(&Blob::from_bytes(&bytes)?, avatar)
    }

    pub fn eval_dir(&self) -> Result<PathBuf> {
        let key = key_of(&serde_json::json!({
            "mca": self.model_key(ModelKind::Mca)?,
            "ca": self.model_key(ModelKind::Ca)?,
            "eval": self.config.eval,
        }))?;
        Ok(self.stage_dir("eval", &key))
    }

    pub fn eval(&self) -> Result<(PathBuf, EvalReport)> {
        let (ds, avatar) = self.load_data()?;
        let mca = self.load_model(ModelKind::Mca, &avatar)?;
        let ca = self.load_model(ModelKind::Ca, &avatar)?;
        let dir = self.eval_dir()?;
        fresh_dir(&dir)?;
        let mut splits = Vec::new();
        let mut csv = String::from("split,frame,ca_mae,ca_rmse,ca_geo,ca_tex,ca_ssim,mca_mae,mca_rmse,mca_geo,mca_tex,mca_ssim\n");
        for (name, session) in [("compositional", &ds.compositional), ("test", ds.test_session())] {
            let fm: Vec<FrameMetrics> = evaluate_model(&avatar, &mca, session, self.exec)?;
            let fc: Vec<FrameMetrics> = evaluate_model(&avatar, &ca, session, self.exec)?;
            for (t, (c, m)) in fc.iter().zip(&fm).enumerate() {
                csv.push_str(&format!(
                    "{name},{t},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    c.mae, c.rmse, c.geo, c.tex, c.ssim, m.mae, m.rmse, m.geo, m.tex, m.ssim
                ));
            }
            splits.push(SplitReport {
                split: name.into(),
                comparison: aggregate(&fc, &fm)?,
            });
        }
        std::fs::write(dir.join("frames.csv"), csv)?;
        let th = &self.config.eval.thresholds;
        let comp = &splits[0].comparison;
        let mut violations = Vec::new();
        if comp.mca.rmse > th.max_mca_rmse {
            violations.push(format!("mca rmse {:.3} > {:.3}", comp.mca.rmse, th.max_mca_rmse));
        }
        if comp.pct_better < th.min_pct_better {
            violations.push(format!("%-better {:.1} < {:.1}", comp.pct_better, th.min_pct_better));
        }
        if th.mca_not_worse && comp.mca.rmse > comp.ca.rmse {
            violations.push(format!("mca rmse {:.3} > ca rmse {:.3}", comp.mca.rmse, comp.ca.rmse));
        }
        let n = self.config.eval.png_frames.min(ds.compositional.frames.len());
        if n > 0 {
            let sub = crate::face::Session {
                frames: ds.compositional.frames[..n].to_vec(),
                ..ds.compositional.clone()
            };
            let truth = session_truth(&avatar, &sub, self.exec)?;
            let pm = predict_session(&mca, &sub, self.exec)?;
            let pc = predict_session(&ca, &sub, self.exec)?;
            for t in 0..n {
                save_face_png(&avatar, &truth[t], &dir.join(format!("frame{t:03}_truth.png")))?;
                save_face_png(&avatar, &pm[t], &dir.join(format!("frame{t:03}_mca.png")))?;
                save_face_png(&avatar, &pc[t], &dir.join(format!("frame{t:03}_ca.png")))?;
            }
        }
        let report = EvalReport {
            mca_params: crate::numeric::Parameterized::num_params(&mca),
            ca_params: crate::numeric::Parameterized::num_params(&ca),
            splits,
            violations,
        };
        write_json(&dir.join("report.json"), &report)?;
        let up = BTreeMap::from([
            ("mca".to_string(), self.model_key(ModelKind::Mca)?),
            ("ca".to_string(), self.model_key(ModelKind::Ca)?),
        ]);
        let key = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        self.finish(&dir, "eval", &key, up)?;
        Ok((dir, report))
    }

    pub fn expressiveness(&self) -> Result<(PathBuf, ExpressivenessReport)> {
        let (ds, avatar) = self.load_data()?;
        let codecs = self.load_codecs(&avatar)?;
        let report = expressiveness_experiment(
            &avatar,
            &codecs,
            &dome_faces(&avatar, &ds),
            &session_truth(&avatar, &ds.compositional, self.exec)?,
            &self.config.eval.capacities,
            self.exec,
        )?;
        let key = key_of(&serde_json::json!({ "codec": self.codec_key()?, "capacities": self.config.eval.capacities }))?;
        let dir = self.stage_dir("expressiveness", &key);
        fresh_dir(&dir)?;
        write_json(&dir.join("summary.json"), &report)?;
        std::fs::write(dir.join("frames.csv"), report.per_frame_csv())?;
        let up = BTreeMap::from([("codec".to_string(), self.codec_key()?)]);
        self.finish(&dir, "expressiveness", &key, up)?;
        Ok((dir, report))
    }

    /// Frontal renders of `kind`'s predictions on the first `frames` frames of the compositional split.
    pub fn render(&self, kind: ModelKind, frames: usize, view: ViewDirection) -> Result<PathBuf> {
        let (ds, avatar) = self.load_data()?;
        let model = self.load_model(kind, &avatar)?;
        let key = key_of(&serde_json::json!({ "model": self.model_key(kind)?, "frames": frames, "view": view.as_array() }))?;
        let dir = self.stage_dir(&format!("render-{}", kind.name()), &key);
        fresh_dir(&dir)?;
        let session = &ds.compositional;
        let n = frames.min(session.frames.len());
        let inputs = session_inputs(session, model.config.image_factor, self.exec);
        for t in 0..n {
            let w = window_at(session, &inputs, t, model.window());
            let face = model.predict(&w, view)?.face;
            let (m, tex) = avatar.unflatten(&face)?;
            let img = avatar.render_frontal(&m, &tex, view)?;
            save_rgb_png(img.width, img.height, &img.rgb, &dir.join(format!("frame{t:03}.png")))?;
        }
        let up = BTreeMap::from([(kind.name().to_string(), self.model_key(kind)?)]);
        self.finish(&dir, "render", &key, up)?;
        Ok(dir)
    }

    /// Flexible animation on the held-out session with per-module shuffles.
    pub fn app_flex(&self) -> Result<(PathBuf, FlexReport)> {
        let (ds, avatar) = self.load_data()?;
        let model = self.load_model(ModelKind::Mca, &avatar)?;
        let session = ds.test_session();
        let streams = vec![session; session.frames.first().map_or(0, |f| f.images.len())];
        let seed = self.config.apps.shuffle_seed;
        let shuffled = flexible_animation(&model, &streams, Some(seed), self.exec)?;
        let plain = flexible_animation(&model, &streams, None, self.exec)?;
        let standard = predict_session(&model, session, self.exec)?;
        let diff = plain
            .iter()
            .zip(&standard)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        let key = key_of(&serde_json::json!({ "model": self.model_key(ModelKind::Mca)?, "apps": self.config.apps }))?;
        let dir = self.stage_dir("app-flex", &key);
        fresh_dir(&dir)?;
        for (t, f) in shuffled.iter().take(self.config.eval.png_frames).enumerate() {
            save_face_png(&avatar, f, &dir.join(format!("frame{t:03}.png")))?;
        }
        let report = FlexReport {
            frames: shuffled.len(),
            shuffle_seed: seed,
            identity_max_diff: diff,
        };
        write_json(&dir.join("summary.json"), &report)?;
        let up = BTreeMap::from([("mca".to_string(), self.model_key(ModelKind::Mca)?)]);
        self.finish(&dir, "app-flex", &key, up)?;
        Ok((dir, report))
    }

    /// Eye amplification on the held-out session.
    pub fn app_amplify(&self) -> Result<(PathBuf, AmplifyReport)> {
        let (ds, avatar) = self.load_data()?;
        let codecs = self.load_codecs(&avatar)?;
        let model = self.load_model(ModelKind::Mca, &avatar)?;
        let apps = &self.config.apps;
        let k = apps.amplify_module;
        let report_rows = amplify_session(&avatar, &model, &codecs, ds.test_session(), k, apps.amplify_factor, apps.open_eye_threshold, self.exec)?;
        let key = key_of(&serde_json::json!({ "model": self.model_key(ModelKind::Mca)?, "apps": self.config.apps }))?;
        let dir = self.stage_dir("app-amplify", &key);
        fresh_dir(&dir)?;
        let (report, rows) = report_rows;
        let mut csv = String::from("frame,true_openness,openness_factor1,openness_amplified\n");
        for r in &rows {
            csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.frame, r.truth, r.base, r.amplified));
        }
        std::fs::write(dir.join("frames.csv"), csv)?;
        write_json(&dir.join("summary.json"), &report)?;
        let session = ds.test_session();
        let inputs = session_inputs(session, model.config.image_factor, self.exec);
        let base = closed_eye_base(&avatar, &codecs.masked[k], &codecs.banks[k], k, self.exec)?;
        for (i, r) in rows.iter().filter(|r| r.open).take(self.config.eval.png_frames).enumerate() {
            let w = window_at(session, &inputs, r.frame, model.window());
            save_face_png(&avatar, &amplified_face(&model, &w, k, &base.code, 1.0)?, &dir.join(format!("open{i:02}_original.png")))?;
            save_face_png(&avatar, &amplified_face(&model, &w, k, &base.code, apps.amplify_factor)?, &dir.join(format!("open{i:02}_amplified.png")))?;
        }
        let up = BTreeMap::from([("mca".to_string(), self.model_key(ModelKind::Mca)?)]);
        self.finish(&dir, "app-amplify", &key, up)?;
        Ok((dir, report))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplifyRow {
    pub frame: usize,
    pub truth: f64,
    pub open: bool,
    pub base: f64,
    pub amplified: f64,
}

/// Regressed eye openness with and without amplification for every frame.
#[allow(clippy::too_many_arguments)]
pub fn amplify_session(
    avatar: &Avatar,
    model: &McaModel,
    codecs: &Codecs,
    session: &crate::face::Session,
    module: usize,
    factor: f64,
    open_threshold: f64,
    exec: Exec,
) -> Result<(AmplifyReport, Vec<AmplifyRow>)> {
    let base = closed_eye_base(avatar, &codecs.masked[module], &codecs.banks[module], module, exec)?;
    let eye = base.eye;
    let inputs = session_inputs(session, model.config.image_factor, exec);
    let rows: Vec<(AmplifyRow, bool)> = par::map_range(exec, session.frames.len(), |t| {
        let w = window_at(session, &inputs, t, model.window());
        let hist = model.part_histories(&w)?;
        let plain = model.synthesize_parts(&hist, ViewDirection::FRONTAL)?.face;
        let one = amplified_face(model, &w, module, &base.code, 1.0)?;
        let amp = amplified_face(model, &w, module, &base.code, factor)?;
        let code = hist[module].row(hist[module].rows() - 1);
        let zero_ok = crate::mca::eye_amplify(code, &base.code, 0.0)? == base.code
            && crate::mca::eye_amplify(code, &base.code, 1.0)? == code;
        let open = |f: &[f64]| -> Result<f64> { Ok(avatar.regress_eye_openness(&avatar.unflatten(f)?.0, eye)) };
        let p = &session.frames[t].params;
        let truth = if eye == 0 { p.left_eye } else { p.right_eye };
        Ok((
            AmplifyRow {
                frame: t,
                truth,
                open: truth > open_threshold,
                base: open(&one)?,
                amplified: open(&amp)?,
            },
            one == plain && zero_ok,
        ))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let exact = rows.iter().all(|(_, same)| *same);
    let rows: Vec<AmplifyRow> = rows.into_iter().map(|(r, _)| r).collect();
    let open: Vec<&AmplifyRow> = rows.iter().filter(|r| r.open).collect();
    let increased = open.iter().filter(|r| r.amplified > r.base).count();
    Ok((
        AmplifyReport {
            module,
            eye,
            factor,
            base_index: base.index,
            base_openness: base.openness,
            open_eye_frames: open.len(),
            increased_fraction: if open.is_empty() { 0.0 } else { increased as f64 / open.len() as f64 },
            endpoints_exact: exact,
        },
        rows,
    ))
}
