//! Deterministic tensor math with hand-written reverse-mode gradients.

mod activation;
mod adam;
mod blob;
mod gradcheck;
mod layer;
mod network;
mod rng;
mod tensor;

pub use activation::{sigmoid, Activation, LEAKY_SLOPE};
pub use adam::{AdamConfig, AdamState};
pub use blob::{Blob, BlobHeader, TensorEntry, BLOB_MAGIC, BLOB_VERSION};
pub use gradcheck::{grad_check, grad_check_net, relative_error, GradCheckReport, NetObjective, Objective, MAX_CHECK_PARAMS};
pub use layer::{bilinear_taps, LayerCache, LayerGrads, LayerKind, LayerParams, LayerSpec};
pub use network::{Gradients, Parameterized, Sequential, Trace};
pub use rng::{label, splitmix64, Rng};
pub use tensor::{axpy, dot, gemm, squared_distance, Tensor};

use crate::error::Result;

/// Serialize a `Sequential` into `blob` under `prefix`, returning its spec list.
pub fn push_sequential(blob: &mut Blob, prefix: &str, net: &Sequential) -> serde_json::Value {
    for (i, l) in net.layers().iter().enumerate() {
        blob.push(format!("{prefix}.{i}.weights"), &l.weights);
        blob.push(format!("{prefix}.{i}.bias"), &l.bias);
        if let Some(t) = l.taps() {
            blob.push(format!("{prefix}.{i}.taps"), t);
        }
    }
    serde_json::to_value(net.specs()).expect("layer specs serialize")
}

/// Inverse of `push_sequential`; `cursor` walks `blob.tensors` in order.
pub fn take_sequential(
    blob: &Blob,
    prefix: &str,
    specs: &serde_json::Value,
    cursor: &mut usize,
) -> Result<Sequential> {
    let specs: Vec<LayerSpec> = serde_json::from_value(specs.clone())?;
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let w = blob.tensor(*cursor, &format!("{prefix}.{i}.weights"))?;
        let b = blob.tensor(*cursor + 1, &format!("{prefix}.{i}.bias"))?;
        *cursor += 2;
        let taps = if spec.kind == LayerKind::UpsampleHead {
            let t = blob.tensor(*cursor, &format!("{prefix}.{i}.taps"))?;
            *cursor += 1;
            Some(t)
        } else {
            None
        };
        layers.push(LayerParams::from_parts(spec, w, b, taps)?);
    }
    Sequential::new(layers)
}
