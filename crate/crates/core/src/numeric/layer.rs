use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::rng::Rng;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    /// Causal temporal convolution over `[time, channels]`; `kernel` is the
    /// receptive field in frames. Lags before the first frame repeat it.
    Tconv1d { kernel: usize },
    /// Fixed bilinear upsampling from a coarse uv grid to scattered uv points,
    /// followed by a learned per-point gain and bias.
    UpsampleHead,
}

/// Serializable description of a layer's architecture (no weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    kind: LayerKind,
    fan_in: usize,
    fan_out: usize,
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
    /// Upsample head only: `[fan_out, 8]` rows of four (index, weight) pairs.
    taps: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    kind: LayerKind,
    input: Tensor,
    pre: Vec<f64>,
    output: Tensor,
    /// im2col buffer (tconv) or interpolated values before the gain (upsample).
    aux: Vec<f64>,
}

impl LayerCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn init_uniform(rng: &mut Rng, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-limit, limit)).collect()
}

fn init_limit(activation: Activation, fan_in: usize, fan_out: usize) -> f64 {
    if activation.is_rectifier() {
        (6.0 / fan_in as f64).sqrt()
    } else {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

/// Bilinear taps of `uv` on a `grid x grid` lattice spanning [0,1]^2.
pub fn bilinear_taps(grid: usize, uv: [f64; 2]) -> [(usize, f64); 4] {
    assert!(grid >= 2, "upsample grid must be at least 2x2");
    let scale = (grid - 1) as f64;
    let gx = (uv[0].clamp(0.0, 1.0) * scale).min(scale - 1e-12);
    let gy = (uv[1].clamp(0.0, 1.0) * scale).min(scale - 1e-12);
    let x0 = gx.floor() as usize;
    let y0 = gy.floor() as usize;
    let fx = gx - x0 as f64;
    let fy = gy - y0 as f64;
    let idx = |x: usize, y: usize| y * grid + x;
    [
        (idx(x0, y0), (1.0 - fx) * (1.0 - fy)),
        (idx(x0 + 1, y0), fx * (1.0 - fy)),
        (idx(x0, y0 + 1), (1.0 - fx) * fy),
        (idx(x0 + 1, y0 + 1), fx * fy),
    ]
}

impl LayerParams {
    pub fn dense(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = init_limit(activation, fan_in, fan_out);
        let w = init_uniform(rng, fan_in * fan_out, limit);
        LayerParams {
            kind: LayerKind::Dense,
            fan_in,
            fan_out,
            weights: Tensor::new(vec![fan_out, fan_in], w).expect("dense shape"),
            bias: Tensor::zeros(&[fan_out]),
            activation,
            taps: None,
        }
    }

    pub fn tconv1d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        assert!(kernel >= 1, "tconv kernel must be >= 1");
        let limit = init_limit(activation, in_channels * kernel, out_channels);
        let w = init_uniform(rng, out_channels * in_channels * kernel, limit);
        LayerParams {
            kind: LayerKind::Tconv1d { kernel },
            fan_in: in_channels,
            fan_out: out_channels,
            weights: Tensor::new(vec![out_channels, in_channels, kernel], w).expect("tconv shape"),
            bias: Tensor::zeros(&[out_channels]),
            activation,
            taps: None,
        }
    }

    /// Upsampling head from a `grid x grid` field to one value per `points` uv.
    pub fn upsample_head(grid: usize, points: &[[f64; 2]], activation: Activation) -> Self {
        let mut taps = Vec::with_capacity(points.len() * 8);
        for &uv in points {
            let t = bilinear_taps(grid, uv);
            for (i, _) in t {
                taps.push(i as f64);
            }
            for (_, w) in t {
                taps.push(w);
            }
        }
        let n = points.len();
        LayerParams {
            kind: LayerKind::UpsampleHead,
            fan_in: grid * grid,
            fan_out: n,
            weights: Tensor::new(vec![n], vec![1.0; n]).expect("gain shape"),
            bias: Tensor::zeros(&[n]),
            activation,
            taps: Some(Tensor::new(vec![n, 8], taps).expect("taps shape")),
        }
    }

    /// Rebuild a layer from its spec and stored tensors.
    pub fn from_parts(
        spec: &LayerSpec,
        weights: Tensor,
        bias: Tensor,
        taps: Option<Tensor>,
    ) -> Result<Self> {
        let expected_w = match spec.kind {
            LayerKind::Dense => vec![spec.fan_out, spec.fan_in],
            LayerKind::Tconv1d { kernel } => vec![spec.fan_out, spec.fan_in, kernel],
            LayerKind::UpsampleHead => vec![spec.fan_out],
        };
        if weights.shape() != expected_w.as_slice() {
            return Err(Error::shape("layer weights", &expected_w, weights.shape()));
        }
        if bias.shape() != [spec.fan_out] {
            return Err(Error::shape("layer bias", &[spec.fan_out], bias.shape()));
        }
        if spec.kind == LayerKind::UpsampleHead {
            match &taps {
                Some(t) if t.shape() == [spec.fan_out, 8] => {}
                Some(t) => return Err(Error::shape("upsample taps", &[spec.fan_out, 8], t.shape())),
                None => return Err(Error::Format("upsample head without taps".into())),
            }
        }
        Ok(LayerParams {
            kind: spec.kind,
            fan_in: spec.fan_in,
            fan_out: spec.fan_out,
            weights,
            bias,
            activation: spec.activation,
            taps: if spec.kind == LayerKind::UpsampleHead { taps } else { None },
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            kind: self.kind,
            fan_in: self.fan_in,
            fan_out: self.fan_out,
            activation: self.activation,
        }
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn taps(&self) -> Option<&Tensor> {
        self.taps.as_ref()
    }

    /// Temporal receptive field in frames (1 for non-temporal layers).
    pub fn receptive_field(&self) -> usize {
        match self.kind {
            LayerKind::Tconv1d { kernel } => kernel,
            _ => 1,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let shape = input.shape();
        match self.kind {
            LayerKind::Tconv1d { kernel } => {
                if shape.len() != 2 || shape[1] != self.fan_in {
                    return Err(Error::shape("tconv1d input [time, channels]", &[kernel, self.fan_in], shape));
                }
                if shape[0] < kernel {
                    return Err(Error::shape("tconv1d time axis shorter than receptive field", &[kernel, self.fan_in], shape));
                }
            }
            _ => {
                if shape.is_empty() || shape.len() > 2 || input.last_dim() != self.fan_in {
                    return Err(Error::shape("layer input", &[self.fan_in], shape));
                }
            }
        }
        Ok(())
    }

    fn output_shape(&self, input: &Tensor) -> Vec<usize> {
        let mut s = input.shape().to_vec();
        *s.last_mut().expect("non-empty shape") = self.fan_out;
        s
    }

    fn im2col(&self, input: &Tensor, kernel: usize) -> Vec<f64> {
        let t_len = input.shape()[0];
        let c = self.fan_in;
        let mut col = vec![0.0; t_len * c * kernel];
        for t in 0..t_len {
            for ch in 0..c {
                for j in 0..kernel {
                    let src = t.saturating_sub(j);
                    col[t * c * kernel + ch * kernel + j] = input.data()[src * c + ch];
                }
            }
        }
        col
    }

    fn linear_part(&self, input: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let rows = input.rows();
        let out = self.fan_out;
        let mut pre = vec![0.0; rows * out];
        let aux = match self.kind {
            LayerKind::Dense => {
                gemm(rows, self.fan_in, out, 1.0, input.data(), false, self.weights.data(), true, 0.0, &mut pre);
                Vec::new()
            }
            LayerKind::Tconv1d { kernel } => {
                let col = self.im2col(input, kernel);
                gemm(rows, self.fan_in * kernel, out, 1.0, &col, false, self.weights.data(), true, 0.0, &mut pre);
                col
            }
            LayerKind::UpsampleHead => {
                let taps = self.taps.as_ref().expect("upsample taps").data();
                let mut interp = vec![0.0; rows * out];
                for r in 0..rows {
                    let x = input.row(r);
                    for o in 0..out {
                        let t = &taps[o * 8..o * 8 + 8];
                        let v = x[t[0] as usize] * t[4]
                            + x[t[1] as usize] * t[5]
                            + x[t[2] as usize] * t[6]
                            + x[t[3] as usize] * t[7];
                        interp[r * out + o] = v;
                        pre[r * out + o] = self.weights.data()[o] * v;
                    }
                }
                interp
            }
        };
        let b = self.bias.data();
        for r in 0..rows {
            for (p, bo) in pre[r * out..(r + 1) * out].iter_mut().zip(b) {
                *p += bo;
            }
        }
        (pre, aux)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let (pre, _) = self.linear_part(input);
        let act = self.activation;
        let data: Vec<f64> = pre.into_iter().map(|z| act.apply(z)).collect();
        Tensor::new(self.output_shape(input), data)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, LayerCache)> {
        self.check_input(input)?;
        let (pre, aux) = self.linear_part(input);
        let act = self.activation;
        let data: Vec<f64> = pre.iter().map(|&z| act.apply(z)).collect();
        let output = Tensor::new(self.output_shape(input), data)?;
        let cache = LayerCache {
            kind: self.kind,
            input: input.clone(),
            pre,
            output: output.clone(),
            aux,
        };
        Ok((output, cache))
    }

    pub fn backward(&self, cache: &LayerCache, upstream: &Tensor) -> Result<(Tensor, LayerGrads)> {
        if cache.kind != self.kind || cache.input.last_dim() != self.fan_in || cache.output.last_dim() != self.fan_out {
            return Err(Error::MissingForwardCache(format!(
                "cache from a {:?} layer does not belong to this {:?} layer",
                cache.kind, self.kind
            )));
        }
        if upstream.shape() != cache.output.shape() {
            return Err(Error::shape("upstream gradient", cache.output.shape(), upstream.shape()));
        }
        let rows = cache.input.rows();
        let out = self.fan_out;
        let act = self.activation;
        let dz: Vec<f64> = upstream
            .data()
            .iter()
            .zip(&cache.pre)
            .zip(cache.output.data())
            .map(|((g, &z), &y)| g * act.derivative(z, y))
            .collect();

        let mut db = vec![0.0; out];
        for r in 0..rows {
            for (acc, g) in db.iter_mut().zip(&dz[r * out..(r + 1) * out]) {
                *acc += g;
            }
        }

        let mut dx = vec![0.0; cache.input.len()];
        let dw = match self.kind {
            LayerKind::Dense => {
                let mut dw = vec![0.0; out * self.fan_in];
                gemm(out, rows, self.fan_in, 1.0, &dz, true, cache.input.data(), false, 0.0, &mut dw);
                gemm(rows, out, self.fan_in, 1.0, &dz, false, self.weights.data(), false, 0.0, &mut dx);
                dw
            }
            LayerKind::Tconv1d { kernel } => {
                let width = self.fan_in * kernel;
                let mut dw = vec![0.0; out * width];
                gemm(out, rows, width, 1.0, &dz, true, &cache.aux, false, 0.0, &mut dw);
                let mut dcol = vec![0.0; rows * width];
                gemm(rows, out, width, 1.0, &dz, false, self.weights.data(), false, 0.0, &mut dcol);
                let c = self.fan_in;
                for t in 0..rows {
                    for ch in 0..c {
                        for j in 0..kernel {
                            let src = t.saturating_sub(j);
                            dx[src * c + ch] += dcol[t * width + ch * kernel + j];
                        }
                    }
                }
                dw
            }
            LayerKind::UpsampleHead => {
                let taps = self.taps.as_ref().expect("upsample taps").data();
                let gain = self.weights.data();
                let mut dw = vec![0.0; out];
                let fan_in = self.fan_in;
                for r in 0..rows {
                    let dxr = &mut dx[r * fan_in..(r + 1) * fan_in];
                    for o in 0..out {
                        let g = dz[r * out + o];
                        dw[o] += g * cache.aux[r * out + o];
                        let gg = g * gain[o];
                        let t = &taps[o * 8..o * 8 + 8];
                        dxr[t[0] as usize] += gg * t[4];
                        dxr[t[1] as usize] += gg * t[5];
                        dxr[t[2] as usize] += gg * t[6];
                        dxr[t[3] as usize] += gg * t[7];
                    }
                }
                dw
            }
        };
        let input_grad = Tensor::new(cache.input.shape().to_vec(), dx)?;
        Ok((input_grad, LayerGrads { weights: dw, bias: db }))
    }
}
