use super::layer::{LayerCache, LayerGrads, LayerParams, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradient buffers aligned one-to-one with a model's `params()` order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        Gradients(params.iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn from_layers(layers: Vec<LayerGrads>) -> Self {
        let mut out = Vec::with_capacity(layers.len() * 2);
        for g in layers {
            out.push(g.weights);
            out.push(g.bias);
        }
        Gradients(out)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.0.len(), other.0.len(), "gradient group count");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            assert_eq!(a.len(), b.len(), "gradient group length");
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn extend(&mut self, other: Gradients) {
        self.0.extend(other.0);
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Anything that owns trainable tensors in a fixed, stable order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Group names used in diagnostics; same order as `params`.
    fn param_names(&self) -> Vec<String>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.num_params();
        if flat.len() != total {
            return Err(Error::shape("set_flat_params", &[total], &[flat.len()]));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Store `grads` into each parameter's gradient buffer.
    fn load_grads(&mut self, grads: &Gradients) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != grads.0.len() {
            return Err(Error::shape("load_grads groups", &[params.len()], &[grads.0.len()]));
        }
        for (p, g) in params.iter_mut().zip(&grads.0) {
            p.set_grad(g.clone())?;
        }
        Ok(())
    }

    fn zero_grads(&self) -> Gradients {
        Gradients::zeros_like(&self.params())
    }
}

/// A feed-forward chain of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    layers: Vec<LayerParams>,
}

/// Per-layer caches from one traced forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<LayerCache>,
}

impl Trace {
    pub fn output(&self) -> Option<&Tensor> {
        self.caches.last().map(|c| c.output())
    }
}

impl Sequential {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::shape(
                    "Sequential layer chaining",
                    &[pair[0].fan_out()],
                    &[pair[1].fan_in()],
                ));
            }
        }
        Ok(Sequential { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec()).collect()
    }

    pub fn fan_in(&self) -> usize {
        self.layers.first().map(|l| l.fan_in()).unwrap_or(0)
    }

    pub fn fan_out(&self) -> usize {
        self.layers.last().map(|l| l.fan_out()).unwrap_or(0)
    }

    /// Temporal receptive field of the stack: `1 + sum(kernel - 1)`.
    pub fn receptive_field(&self) -> usize {
        1 + self.layers.iter().map(|l| l.receptive_field() - 1).sum::<usize>()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for l in &self.layers {
            x = l.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &Tensor) -> Result<(Tensor, Trace)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for l in &self.layers {
            let (y, c) = l.forward_cached(&x)?;
            caches.push(c);
            x = y;
        }
        Ok((x, Trace { caches }))
    }

    pub fn backward(&self, trace: &Trace, upstream: &Tensor) -> Result<(Tensor, Gradients)> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::MissingForwardCache(format!(
                "trace holds {} layer caches, network has {} layers",
                trace.caches.len(),
                self.layers.len()
            )));
        }
        let mut g = upstream.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, c) in self.layers.iter().zip(&trace.caches).rev() {
            let (dx, lg) = l.backward(c, &g)?;
            grads.push(lg);
            g = dx;
        }
        grads.reverse();
        Ok((g, Gradients::from_layers(grads)))
    }
}

impl Parameterized for Sequential {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weights"), format!("layer{i}.bias")])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{Activation, Rng};

    #[test]
    fn missing_trace_is_an_error() {
        let mut rng = Rng::new(0);
        let net = Sequential::new(vec![
            LayerParams::dense(3, 4, Activation::Tanh, &mut rng),
            LayerParams::dense(4, 2, Activation::Identity, &mut rng),
        ])
        .unwrap();
        let empty = Trace { caches: Vec::new() };
        let err = net.backward(&empty, &Tensor::vector(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::MissingForwardCache(_)));
    }

    #[test]
    fn chaining_checks_widths() {
        let mut rng = Rng::new(0);
        let r = Sequential::new(vec![
            LayerParams::dense(3, 4, Activation::Tanh, &mut rng),
            LayerParams::dense(5, 2, Activation::Identity, &mut rng),
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let mut rng = Rng::new(9);
        let net = Sequential::new(vec![
            LayerParams::dense(5, 7, Activation::LeakyRelu, &mut rng),
            LayerParams::dense(7, 3, Activation::Sigmoid, &mut rng),
        ])
        .unwrap();
        let x = Tensor::new(vec![4, 5], (0..20).map(|i| (i as f64).cos()).collect()).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = Rng::new(1);
        let mut net = Sequential::new(vec![LayerParams::dense(2, 2, Activation::Tanh, &mut rng)]).unwrap();
        let mut flat = net.flat_params();
        flat[0] = 42.0;
        net.set_flat_params(&flat).unwrap();
        assert_eq!(net.layers()[0].weights.data()[0], 42.0);
        assert_eq!(net.num_params(), 6);
    }
}
