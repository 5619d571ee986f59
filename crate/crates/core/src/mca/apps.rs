//! Flexible animation and eye amplification.

use serde::{Deserialize, Serialize};

use super::model::{McaModel, Window};
use super::train::session_inputs;
use crate::codec::ExemplarBank;
use crate::codec::VaeModel;
use crate::error::{Error, Result};
use crate::face::{Avatar, Session, ViewDirection};
use crate::numeric::{Rng, Tensor};
use crate::par::{self, Exec};

/// Frame order of `session` with whole capture sequences permuted.
/// `None` keeps the recorded order.
pub fn shuffled_order(session: &Session, seed: Option<u64>) -> Vec<usize> {
    let mut clips: Vec<Vec<usize>> = Vec::new();
    for (i, f) in session.frames.iter().enumerate() {
        match clips.last_mut() {
            Some(c) if session.frames[c[0]].sequence == f.sequence => c.push(i),
            _ => clips.push(vec![i]),
        }
    }
    if let Some(seed) = seed {
        let mut rng = Rng::new(seed);
        // Fisher-Yates
        for i in (1..clips.len()).rev() {
            let j = rng.below(i + 1);
            clips.swap(i, j);
        }
    }
    clips.into_iter().flatten().collect()
}

/// Causal history of position `t` in a reordered stream, left-padded with the
/// first position of `t`'s sequence.
fn stream_history(session: &Session, order: &[usize], t: usize, len: usize) -> Vec<usize> {
    let seq = session.frames[order[t]].sequence;
    let mut start = t;
    while start > 0 && session.frames[order[start - 1]].sequence == seq {
        start -= 1;
    }
    (0..len)
        .map(|i| {
            let back = len - 1 - i;
            order[if t >= start + back { t - back } else { start }]
        })
        .collect()
}

/// Windows where camera `c` is read from `streams[c]`, each stream reordered
/// by its own shuffle (module `c` uses seed `seed + c`).
pub fn flexible_windows(model: &McaModel, streams: &[&Session], seed: Option<u64>, exec: Exec) -> Result<Vec<Window>> {
    let n = streams.first().ok_or_else(|| Error::Empty("animation streams".into()))?.frames.len();
    if let Some(s) = streams.iter().find(|s| s.frames.len() != n) {
        return Err(Error::shape("animation stream length", &[n], &[s.frames.len()]));
    }
    let cams = streams[0].frames.first().map_or(0, |f| f.images.len());
    if streams.len() != cams {
        return Err(Error::shape("one stream per camera", &[cams], &[streams.len()]));
    }
    let factor = model.config.image_factor;
    let inputs: Vec<Vec<Vec<Vec<f64>>>> = streams.iter().map(|s| session_inputs(s, factor, exec)).collect();
    let orders: Vec<Vec<usize>> = streams
        .iter()
        .enumerate()
        .map(|(c, s)| shuffled_order(s, seed.map(|v| v.wrapping_add(c as u64))))
        .collect();
    let len = model.window();
    Ok((0..n)
        .map(|t| {
            let hist: Vec<Vec<usize>> = (0..cams).map(|c| stream_history(streams[c], &orders[c], t, len)).collect();
            Window {
                frames: (0..len)
                    .map(|i| (0..cams).map(|c| inputs[c][hist[c][i]][c].clone()).collect())
                    .collect(),
            }
        })
        .collect())
}

/// Faces animated from independently shuffled per-camera streams.
pub fn flexible_animation(model: &McaModel, streams: &[&Session], seed: Option<u64>, exec: Exec) -> Result<Vec<Vec<f64>>> {
    let windows = flexible_windows(model, streams, seed, exec)?;
    par::map(exec, &windows, |w| Ok(model.predict(w, ViewDirection::FRONTAL)?.face))
        .into_iter()
        .collect()
}

/// `base + factor * (code - base)`, written so factor 1 returns `code` and
/// factor 0 returns `base` exactly.
pub fn eye_amplify(code: &[f64], base: &[f64], factor: f64) -> Result<Vec<f64>> {
    if code.len() != base.len() {
        return Err(Error::shape("amplified code", &[base.len()], &[code.len()]));
    }
    if !(factor >= 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("amplification factor must be finite and >= 0, got {factor}")));
    }
    Ok(code.iter().zip(base).map(|(c, b)| (1.0 - factor) * b + factor * c).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedEyeBase {
    pub module: usize,
    pub eye: usize,
    pub index: usize,
    pub openness: f64,
    pub code: Vec<f64>,
}

/// Bank exemplar of module `module` whose decoded eye is least open.
pub fn closed_eye_base(avatar: &Avatar, model: &VaeModel, bank: &ExemplarBank, module: usize, exec: Exec) -> Result<ClosedEyeBase> {
    let eye = eye_of_module(avatar, module)?;
    if bank.is_empty() {
        return Err(Error::Empty("exemplar bank".into()));
    }
    let openness: Vec<f64> = par::map(exec, &bank.codes, |c| {
        let (mesh, _) = avatar.unflatten(&model.decode(c, ViewDirection::FRONTAL)?)?;
        Ok(avatar.regress_eye_openness(&mesh, eye))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut index = 0;
    for (i, o) in openness.iter().enumerate() {
        if *o < openness[index] {
            index = i;
        }
    }
    Ok(ClosedEyeBase {
        module,
        eye,
        index,
        openness: openness[index],
        code: bank.codes[index].clone(),
    })
}

/// Eye index driven by module `module`.
pub fn eye_of_module(avatar: &Avatar, module: usize) -> Result<usize> {
    match avatar.masks.get(module).map(|m| m.name) {
        Some("left-eye") => Ok(0),
        Some("right-eye") => Ok(1),
        Some(name) => Err(Error::InvalidArgument(format!("module `{name}` is not an eye"))),
        None => Err(Error::InvalidArgument(format!("no module {module}"))),
    }
}

/// Prediction for `window` with the part codes of `module` amplified away
/// from `base` over the whole history.
pub fn amplified_face(model: &McaModel, window: &Window, module: usize, base: &[f64], factor: f64) -> Result<Vec<f64>> {
    if model.modules() <= module {
        return Err(Error::InvalidArgument(format!("model has no module {module}")));
    }
    let mut hist = model.part_histories(window)?;
    let h = &hist[module];
    let mut data = Vec::with_capacity(h.len());
    for r in 0..h.rows() {
        data.extend(eye_amplify(h.row(r), base, factor)?);
    }
    hist[module] = Tensor::matrix(h.rows(), h.last_dim(), data)?;
    Ok(model.synthesize_parts(&hist, ViewDirection::FRONTAL)?.face)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn amplify_endpoints_are_exact() {
        let mut r = Rng::new(3);
        for _ in 0..100 {
            let c: Vec<f64> = (0..8).map(|_| r.normal()).collect();
            let b: Vec<f64> = (0..8).map(|_| r.normal()).collect();
            assert_eq!(eye_amplify(&c, &b, 1.0).unwrap(), c);
            assert_eq!(eye_amplify(&c, &b, 0.0).unwrap(), b);
            let two = eye_amplify(&c, &b, 2.0).unwrap();
            for i in 0..8 {
                assert!((two[i] - (b[i] + 2.0 * (c[i] - b[i]))).abs() < 1e-12);
            }
        }
        assert!(eye_amplify(&[0.0], &[0.0, 1.0], 1.0).is_err());
        assert!(eye_amplify(&[0.0], &[0.0], -1.0).is_err());
    }
}
