//! One encoder + synthesizer path: `E_k` followed by `S_k`.

use crate::error::Result;
use crate::numeric::{Activation, Gradients, LayerParams, Parameterized, Rng, Sequential, Tensor};

/// Layer sizes of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathShape {
    pub input: usize,
    pub hidden: [usize; 2],
    /// Width of the feature block the head reads (own features, or all
    /// paths' features when skip connections are on).
    pub head_input: usize,
    pub latent: usize,
    pub synth_hidden: usize,
    pub kernels: Vec<usize>,
    pub full_latent: usize,
    /// `Some((grid, vertex uv))` when the path predicts blend weights.
    pub blend: Option<(usize, Vec<[f64; 2]>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulePath {
    /// Cameras whose images are concatenated into this path's input.
    pub cameras: Vec<usize>,
    /// Image features: leaky then tanh.
    pub trunk: Sequential,
    /// Features (possibly from every path) to the part code.
    pub head: Sequential,
    /// Causal temporal convolutions over the part-code history.
    pub temporal: Sequential,
    pub full_head: Sequential,
    /// Dense map to a coarse uv grid, then sigmoid upsampling to vertices.
    pub blend_head: Option<Sequential>,
}

impl ModulePath {
    pub fn new(cameras: Vec<usize>, shape: &PathShape, rng: &mut Rng) -> Result<Self> {
        let mut r = rng.split_named("trunk");
        let trunk = Sequential::new(vec![
            LayerParams::dense(shape.input, shape.hidden[0], Activation::LeakyRelu, &mut r),
            LayerParams::dense(shape.hidden[0], shape.hidden[1], Activation::Tanh, &mut r),
        ])?;
        let head = Sequential::new(vec![LayerParams::dense(
            shape.head_input,
            shape.latent,
            Activation::Identity,
            &mut rng.split_named("head"),
        )])?;
        let mut r = rng.split_named("temporal");
        let mut layers = Vec::with_capacity(shape.kernels.len());
        let mut width = shape.latent;
        for &k in &shape.kernels {
            layers.push(LayerParams::tconv1d(width, shape.synth_hidden, k, Activation::LeakyRelu, &mut r));
            width = shape.synth_hidden;
        }
        let temporal = Sequential::new(layers)?;
        let full_head = Sequential::new(vec![LayerParams::dense(
            width,
            shape.full_latent,
            Activation::Identity,
            &mut rng.split_named("full"),
        )])?;
        let blend_head = match &shape.blend {
            Some((grid, uv)) => {
                let mut r = rng.split_named("blend");
                Some(Sequential::new(vec![
                    LayerParams::dense(width, grid * grid, Activation::Identity, &mut r),
                    LayerParams::upsample_head(*grid, uv, Activation::Sigmoid),
                ])?)
            }
            None => None,
        };
        Ok(ModulePath {
            cameras,
            trunk,
            head,
            temporal,
            full_head,
            blend_head,
        })
    }

    pub fn receptive_field(&self) -> usize {
        self.temporal.receptive_field()
    }

    pub fn feature_width(&self) -> usize {
        self.trunk.fan_out()
    }

    pub fn nets(&self) -> Vec<&Sequential> {
        let mut v = vec![&self.trunk, &self.head, &self.temporal, &self.full_head];
        if let Some(b) = &self.blend_head {
            v.push(b);
        }
        v
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Sequential> {
        let mut v = vec![&mut self.trunk, &mut self.head, &mut self.temporal, &mut self.full_head];
        if let Some(b) = &mut self.blend_head {
            v.push(b);
        }
        v
    }

    /// Synthesizer outputs `(full code, blend logits-after-sigmoid)` for one
    /// part-code history `[time, latent]`, read at the last frame.
    pub fn synthesize(&self, history: &Tensor) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let h = self.temporal.forward(history)?;
        let last = Tensor::vector(h.row(h.rows() - 1).to_vec());
        let full = self.full_head.forward(&last)?.into_data();
        let ws = match &self.blend_head {
            Some(b) => Some(b.forward(&last)?.into_data()),
            None => None,
        };
        Ok((full, ws))
    }
}

impl Parameterized for ModulePath {
    fn params(&self) -> Vec<&Tensor> {
        self.nets().into_iter().flat_map(|n| n.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.nets_mut().into_iter().flat_map(|n| n.params_mut()).collect()
    }

    fn param_names(&self) -> Vec<String> {
        let names = ["trunk", "head", "temporal", "full", "blend"];
        self.nets()
            .into_iter()
            .zip(names)
            .flat_map(|(n, p)| n.param_names().into_iter().map(move |s| format!("{p}.{s}")))
            .collect()
    }
}

/// Concatenate per-network gradients in `nets()` order.
pub fn join_grads(parts: Vec<Gradients>) -> Gradients {
    let mut out = Gradients(Vec::new());
    for p in parts {
        out.extend(p);
    }
    out
}
