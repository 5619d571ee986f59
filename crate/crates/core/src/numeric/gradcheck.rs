//! Central finite-difference gradient checking.

use super::network::{Parameterized, Sequential};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest parameter count `grad_check` will sweep.
pub const MAX_CHECK_PARAMS: usize = 50_000;

/// A scalar objective over a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn parameters(&self) -> Vec<f64>;
    fn set_parameters(&mut self, flat: &[f64]) -> Result<()>;
    /// Loss and its gradient with respect to `parameters()`.
    fn evaluate(&self) -> Result<(f64, Vec<f64>)>;

    fn loss(&self) -> Result<f64> {
        Ok(self.evaluate()?.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// `|a - n| / max(|a|, |n|, 1)`: relative for large gradients, absolute for
/// gradients near zero where finite differences carry only round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

pub fn grad_check(objective: &mut dyn Objective, epsilon: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let base = objective.parameters();
    if base.len() > MAX_CHECK_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "{} parameters exceeds the gradient-check limit of {MAX_CHECK_PARAMS}",
            base.len()
        )));
    }
    let (loss, analytic) = objective.evaluate()?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("grad_check base loss".into()));
    }
    if analytic.len() != base.len() {
        return Err(Error::shape("analytic gradient", &[base.len()], &[analytic.len()]));
    }
    let mut numeric = vec![0.0; base.len()];
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + epsilon;
        objective.set_parameters(&probe)?;
        let up = objective.loss()?;
        probe[i] = base[i] - epsilon;
        objective.set_parameters(&probe)?;
        let down = objective.loss()?;
        probe[i] = base[i];
        if !up.is_finite() || !down.is_finite() {
            objective.set_parameters(&base)?;
            return Err(Error::NonFinite(format!("grad_check loss at parameter {i}")));
        }
        numeric[i] = (up - down) / (2.0 * epsilon);
    }
    objective.set_parameters(&base)?;

    let (mut worst, mut worst_index) = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(*a, *n);
        if e > worst {
            worst = e;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        worst_index,
        analytic,
        numeric,
    })
}

/// `0.5 * ||net(input) - target||^2` over both the network parameters and
/// the input elements (parameters first, then input).
#[derive(Debug, Clone)]
pub struct NetObjective {
    pub net: Sequential,
    pub input: Tensor,
    pub target: Vec<f64>,
}

impl NetObjective {
    pub fn new(net: Sequential, input: Tensor, target: Vec<f64>) -> Self {
        NetObjective { net, input, target }
    }
}

impl Objective for NetObjective {
    fn parameters(&self) -> Vec<f64> {
        let mut p = self.net.flat_params();
        p.extend_from_slice(self.input.data());
        p
    }

    fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.net.num_params();
        self.net.set_flat_params(&flat[..n])?;
        self.input.data_mut().copy_from_slice(&flat[n..]);
        Ok(())
    }

    fn evaluate(&self) -> Result<(f64, Vec<f64>)> {
        let (y, trace) = self.net.forward_trace(&self.input)?;
        if y.len() != self.target.len() {
            return Err(Error::shape("NetObjective target", &[y.len()], &[self.target.len()]));
        }
        let resid: Vec<f64> = y.data().iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let loss = 0.5 * resid.iter().map(|r| r * r).sum::<f64>();
        let upstream = Tensor::new(y.shape().to_vec(), resid)?;
        let (dx, grads) = self.net.backward(&trace, &upstream)?;
        let mut g = grads.flatten();
        g.extend_from_slice(dx.data());
        Ok((loss, g))
    }
}

/// Maximum relative gradient error of `net` at `input` (target zero).
pub fn grad_check_net(net: &Sequential, input: &Tensor, epsilon: f64) -> Result<f64> {
    let out = net.forward(input)?.len();
    let mut obj = NetObjective::new(net.clone(), input.clone(), vec![0.0; out]);
    Ok(grad_check(&mut obj, epsilon)?.max_relative_error)
}
