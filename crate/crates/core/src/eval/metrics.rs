//! Per-frame reconstruction metrics and model-vs-model aggregation.
//!
//! Pixel metrics use the frontal render on a 0-255 scale over the union of
//! covered pixels of both renders. Texture error is also on 0-255.

use serde::{Deserialize, Serialize};

use super::ssim::ssim;
use crate::error::{Error, Result};
use crate::face::{pool_texel_errors, Avatar, RenderedImage, ViewDirection};

pub const PIXEL_SCALE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub geo: f64,
    pub tex: f64,
    pub ssim: f64,
}

/// Pixel MAE and RMSE over the union of covered pixels, all channels.
pub fn pixel_errors(a: &RenderedImage, b: &RenderedImage) -> Result<(f64, f64)> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::shape("render sizes", &[a.width, a.height], &[b.width, b.height]));
    }
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    for i in 0..a.rgb.len() {
        if !(a.covered[i] || b.covered[i]) {
            continue;
        }
        for c in 0..3 {
            let d = (a.rgb[i][c] - b.rgb[i][c]) * PIXEL_SCALE;
            abs += d.abs();
            sq += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((abs / n as f64, (sq / n as f64).sqrt()))
}

fn grey255(img: &RenderedImage) -> Vec<f64> {
    img.grey().into_iter().map(|g| g * PIXEL_SCALE).collect()
}

/// Metrics of a predicted flat face against the true flat face.
pub fn frame_metrics(avatar: &Avatar, pred: &[f64], truth: &[f64]) -> Result<FrameMetrics> {
    let n = avatar.layout.len();
    if pred.len() != n || truth.len() != n {
        return Err(Error::shape("face vectors", &[n], &[pred.len(), truth.len()]));
    }
    let (pm, pt) = avatar.unflatten(pred)?;
    let (tm, tt) = avatar.unflatten(truth)?;
    let ra = avatar.render_frontal(&pm, &pt, ViewDirection::FRONTAL)?;
    let rb = avatar.render_frontal(&tm, &tt, ViewDirection::FRONTAL)?;
    let (mae, rmse) = pixel_errors(&ra, &rb)?;
    let g3 = avatar.layout.geometry_len();
    let geo = (pred[..g3].iter().zip(&truth[..g3]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / g3 as f64).sqrt();
    let texel_err: Vec<f64> = pred[g3..]
        .chunks(3)
        .zip(truth[g3..].chunks(3))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| ((x - y) * PIXEL_SCALE).powi(2)).sum::<f64>() / 3.0)
        .collect();
    let pooled = pool_texel_errors(&texel_err, &avatar.atlas);
    let owners: Vec<f64> = pooled
        .iter()
        .zip(&avatar.atlas.counts)
        .filter(|(_, &c)| c > 0)
        .map(|(p, _)| *p)
        .collect();
    let tex = (owners.iter().sum::<f64>() / owners.len().max(1) as f64).sqrt();
    let ssim = ssim(&grey255(&ra), &grey255(&rb), ra.width, ra.height, PIXEL_SCALE)?;
    Ok(FrameMetrics {
        mae,
        rmse,
        geo,
        tex,
        ssim,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub geo: f64,
    pub tex: f64,
    pub ssim: f64,
}

pub fn mean_metrics(frames: &[FrameMetrics]) -> Result<MeanMetrics> {
    if frames.is_empty() {
        return Err(Error::Empty("metric frames".into()));
    }
    let n = frames.len() as f64;
    let mean = |f: fn(&FrameMetrics) -> f64| frames.iter().map(f).sum::<f64>() / n;
    Ok(MeanMetrics {
        mae: mean(|m| m.mae),
        rmse: mean(|m| m.rmse),
        geo: mean(|m| m.geo),
        tex: mean(|m| m.tex),
        ssim: mean(|m| m.ssim),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub frames: usize,
    pub ca: MeanMetrics,
    pub mca: MeanMetrics,
    /// Percentage of frames where MCA's RMSE is lower; ties count half.
    pub pct_better: f64,
}

pub fn percent_better(ca: &[f64], mca: &[f64]) -> Result<f64> {
    if ca.len() != mca.len() {
        return Err(Error::shape("paired frames", &[ca.len()], &[mca.len()]));
    }
    if ca.is_empty() {
        return Err(Error::Empty("paired frames".into()));
    }
    let score: f64 = ca
        .iter()
        .zip(mca)
        .map(|(c, m)| {
            if m < c {
                1.0
            } else if m == c {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Ok(100.0 * score / ca.len() as f64)
}

pub fn aggregate(ca: &[FrameMetrics], mca: &[FrameMetrics]) -> Result<Comparison> {
    let ca_rmse: Vec<f64> = ca.iter().map(|m| m.rmse).collect();
    let mca_rmse: Vec<f64> = mca.iter().map(|m| m.rmse).collect();
    Ok(Comparison {
        frames: ca.len(),
        pct_better: percent_better(&ca_rmse, &mca_rmse)?,
        ca: mean_metrics(ca)?,
        mca: mean_metrics(mca)?,
    })
}
