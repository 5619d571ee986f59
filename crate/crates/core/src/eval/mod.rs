//! Reconstruction metrics, clustering and the expressiveness experiment.

pub mod cluster;
pub mod expressiveness;
pub mod metrics;
pub mod ssim;

pub use cluster::{agglomerative_cluster, build_dendrogram, cluster_centers, within_cluster_ss, ClusterModel, Dendrogram, Merge};
pub use expressiveness::{expressiveness_experiment, module_regions, CapacityResult, ExpressivenessReport, DEFAULT_CAPACITIES};
pub use metrics::{aggregate, frame_metrics, mean_metrics, percent_better, pixel_errors, Comparison, FrameMetrics, MeanMetrics, PIXEL_SCALE};
pub use ssim::ssim;

use crate::error::Result;
use crate::face::{Avatar, Session, ViewDirection};
use crate::mca::train::{session_inputs, window_at};
use crate::mca::McaModel;
use crate::par::{self, Exec};

/// Blended prediction for every frame of `session`.
pub fn predict_session(model: &McaModel, session: &Session, exec: Exec) -> Result<Vec<Vec<f64>>> {
    let inputs = session_inputs(session, model.config.image_factor, exec);
    par::map_range(exec, session.frames.len(), |t| {
        let w = window_at(session, &inputs, t, model.window());
        Ok(model.predict(&w, ViewDirection::FRONTAL)?.face)
    })
    .into_iter()
    .collect()
}

/// Ground-truth flat face of every frame of `session`.
pub fn session_truth(avatar: &Avatar, session: &Session, exec: Exec) -> Result<Vec<Vec<f64>>> {
    par::map(exec, &session.frames, |f| {
        let (m, t) = avatar.synthesize(&f.params)?;
        Ok(avatar.flatten(&m, &t))
    })
    .into_iter()
    .collect()
}

/// Frame metrics of `model` on `session`.
pub fn evaluate_model(avatar: &Avatar, model: &McaModel, session: &Session, exec: Exec) -> Result<Vec<FrameMetrics>> {
    let preds = predict_session(model, session, exec)?;
    let truth = session_truth(avatar, session, exec)?;
    let pairs: Vec<(&Vec<f64>, &Vec<f64>)> = preds.iter().zip(&truth).collect();
    par::map(exec, &pairs, |(p, t)| frame_metrics(avatar, p, t)).into_iter().collect()
}
