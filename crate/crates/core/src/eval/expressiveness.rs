//! Retrieval-by-clustering comparison of holistic and modular latent spaces.
//!
//! Dome codes are clustered (holistic: K·n clusters, modular: n per module).
//! Every cluster center is decoded and rendered frontally. For each test frame
//! the modular side picks, per region, the center of that module matching the
//! region's pixels best; the holistic side must pick one center for all regions
//! at once. Regions are the covered pixels of the rest render whose texture
//! owner vertex lies in the module mask.

use serde::{Deserialize, Serialize};

use super::cluster::{build_dendrogram, cluster_centers, Dendrogram};
use super::metrics::PIXEL_SCALE;
use crate::codec::VaeModel;
use crate::error::{Error, Result};
use crate::face::{Avatar, RenderedImage, ViewDirection};
use crate::mca::Codecs;
use crate::par::{self, Exec};

pub const DEFAULT_CAPACITIES: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    /// Clusters per module; the holistic model gets `modules * capacity`.
    pub capacity: usize,
    pub holistic_clusters: usize,
    pub holistic_rmse: f64,
    pub modular_rmse: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressivenessReport {
    pub frames: usize,
    pub region_pixels: Vec<usize>,
    pub results: Vec<CapacityResult>,
    /// `[capacity][frame] = (holistic, modular)` RMSE on 0-255.
    #[serde(skip)]
    pub per_frame: Vec<Vec<(f64, f64)>>,
}

impl ExpressivenessReport {
    pub fn per_frame_csv(&self) -> String {
        let mut s = String::from("capacity,frame,holistic_rmse,modular_rmse\n");
        for (r, frames) in self.results.iter().zip(&self.per_frame) {
            for (t, (h, m)) in frames.iter().enumerate() {
                s.push_str(&format!("{},{},{:.6},{:.6}\n", r.capacity, t, h, m));
            }
        }
        s
    }

    /// Modular error below holistic at every capacity.
    pub fn modular_always_better(&self) -> bool {
        self.results.iter().all(|r| r.modular_rmse < r.holistic_rmse)
    }

    /// Gap at the largest capacity is at least the gap at the smallest.
    pub fn gap_grows(&self) -> bool {
        match (self.results.first(), self.results.last()) {
            (Some(a), Some(b)) => b.gap >= a.gap,
            _ => false,
        }
    }
}

/// Pixel indices of each module region in the rest render.
pub fn module_regions(avatar: &Avatar) -> Result<Vec<Vec<usize>>> {
    let img = avatar.rest_render()?;
    let mut regions = vec![Vec::new(); avatar.masks.len()];
    for (p, (&cov, &uv)) in img.covered.iter().zip(&img.uv).enumerate() {
        if !cov {
            continue;
        }
        let v = avatar.atlas.owner_at(uv);
        for (k, m) in avatar.masks.iter().enumerate() {
            if m.contains_vertex(v) {
                regions[k].push(p);
            }
        }
    }
    if let Some(k) = regions.iter().position(|r| r.is_empty()) {
        return Err(Error::Empty(format!("pixel region of module {k}")));
    }
    Ok(regions)
}

fn render_flat(avatar: &Avatar, face: &[f64]) -> Result<RenderedImage> {
    let (m, t) = avatar.unflatten(face)?;
    avatar.render_frontal(&m, &t, ViewDirection::FRONTAL)
}

fn region_sq_error(a: &RenderedImage, b: &RenderedImage, region: &[usize]) -> f64 {
    region
        .iter()
        .map(|&p| (0..3).map(|c| ((a.rgb[p][c] - b.rgb[p][c]) * PIXEL_SCALE).powi(2)).sum::<f64>())
        .sum()
}

fn decoded_centers(avatar: &Avatar, model: &VaeModel, codes: &[Vec<f64>], tree: &Dendrogram, n: usize, exec: Exec) -> Result<Vec<RenderedImage>> {
    let centers = cluster_centers(codes, &tree.cut(n.min(codes.len()))?);
    par::map(exec, &centers, |c| render_flat(avatar, &model.decode(c, ViewDirection::FRONTAL)?))
        .into_iter()
        .collect()
}

/// Runs the experiment on the ground-truth `test_faces`.
pub fn expressiveness_experiment(
    avatar: &Avatar,
    codecs: &Codecs,
    dome_faces: &[Vec<f64>],
    test_faces: &[Vec<f64>],
    capacities: &[usize],
    exec: Exec,
) -> Result<ExpressivenessReport> {
    let k = avatar.masks.len();
    if codecs.masked.len() != k || codecs.banks.len() != k {
        return Err(Error::InvalidArgument(format!("missing codec: {k} modules, {} modular codecs", codecs.masked.len())));
    }
    if dome_faces.is_empty() || test_faces.is_empty() {
        return Err(Error::Empty("expressiveness faces".into()));
    }
    if capacities.contains(&0) {
        return Err(Error::InvalidArgument("capacity must be >= 1".into()));
    }
    let regions = module_regions(avatar)?;
    let denom = 3.0 * regions.iter().map(|r| r.len()).sum::<usize>() as f64;

    let holistic_codes: Vec<Vec<f64>> = par::map(exec, dome_faces, |f| codecs.holistic.encode(f)).into_iter().collect::<Result<_>>()?;
    let holistic_tree = build_dendrogram(&holistic_codes)?;
    let modular_trees: Vec<Dendrogram> = codecs.banks.iter().map(|b| build_dendrogram(&b.codes)).collect::<Result<_>>()?;
    let truth: Vec<RenderedImage> = par::map(exec, test_faces, |f| render_flat(avatar, f)).into_iter().collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(capacities.len());
    let mut per_frame = Vec::with_capacity(capacities.len());
    for &n in capacities {
        let hn = (k * n).min(holistic_codes.len());
        let holistic = decoded_centers(avatar, &codecs.holistic, &holistic_codes, &holistic_tree, hn, exec)?;
        let modular: Vec<Vec<RenderedImage>> = (0..k)
            .map(|m| decoded_centers(avatar, &codecs.masked[m], &codecs.banks[m].codes, &modular_trees[m], n, exec))
            .collect::<Result<_>>()?;
        let frames: Vec<(f64, f64)> = par::map(exec, &truth, |t| {
            let h = holistic
                .iter()
                .map(|c| regions.iter().map(|r| region_sq_error(c, t, r)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let m: f64 = regions
                .iter()
                .zip(&modular)
                .map(|(r, cs)| cs.iter().map(|c| region_sq_error(c, t, r)).fold(f64::INFINITY, f64::min))
                .sum();
            ((h / denom).sqrt(), (m / denom).sqrt())
        });
        let mean = |f: fn(&(f64, f64)) -> f64| frames.iter().map(f).sum::<f64>() / frames.len() as f64;
        let (h, m) = (mean(|p| p.0), mean(|p| p.1));
        results.push(CapacityResult {
            capacity: n,
            holistic_clusters: hn,
            holistic_rmse: h,
            modular_rmse: m,
            gap: h - m,
        });
        per_frame.push(frames);
    }
    Ok(ExpressivenessReport {
        frames: test_faces.len(),
        region_pixels: regions.iter().map(|r| r.len()).collect(),
        results,
        per_frame,
    })
}
