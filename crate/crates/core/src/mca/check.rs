//! Finite-difference checks of the full training loss on small random problems.

use super::model::{Ablation, McaConfig, McaModel, Supervision, Window};
use crate::codec::{VaeConfig, VaeModel};
use crate::error::Result;
use crate::face::{Avatar, AvatarConfig, ExpressionParams};
use crate::numeric::{grad_check, GradCheckReport, Objective, Parameterized, Rng};

/// The summed batch loss of a model as a function of its trainable parameters.
pub struct LossObjective {
    pub model: McaModel,
    pub windows: Vec<Window>,
    pub sups: Vec<Supervision>,
}

impl Objective for LossObjective {
    fn parameters(&self) -> Vec<f64> {
        self.model.flat_params()
    }

    fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        self.model.set_flat_params(flat)
    }

    fn evaluate(&self) -> Result<(f64, Vec<f64>)> {
        let (terms, grads) = self.model.loss_and_grads(&self.windows, &self.sups)?;
        let c = &self.model.config;
        Ok((terms.total(c.lambda1, c.lambda2), grads.flatten()))
    }
}

/// A tiny avatar (7x7 vertices, 16x16 texture) with latent-4 codecs.
pub fn tiny_avatar() -> Result<Avatar> {
    Avatar::new(AvatarConfig {
        grid: 7,
        texture_size: 16,
        ..AvatarConfig::default()
    })
}

/// Random small problem: `batch` windows of random camera inputs with
/// supervision drawn around real synthetic faces.
pub fn tiny_problem(seed: u64, ablation: Ablation, holistic: bool, batch: usize) -> Result<LossObjective> {
    let avatar = tiny_avatar()?;
    let rng = Rng::new(seed);
    let vae_cfg = VaeConfig {
        latent: 4,
        encoder_hidden: vec![4],
        decoder_hidden: vec![6],
        ..VaeConfig::default()
    };
    let codec = VaeModel::new(&avatar, None, &vae_cfg, &mut rng.split_named("codec"))?;
    let config = McaConfig {
        encoder_hidden: [5, 4],
        synth_hidden: 4,
        blend_grid: 3,
        ablation,
        ..McaConfig::default()
    };
    let dims = [6, 6, 6];
    let model = if holistic {
        McaModel::holistic(&avatar, codec, config, &dims, &rng.split_named("model"))?
    } else {
        McaModel::new(&avatar, codec, config, &dims, 4, &rng.split_named("model"))?
    };
    let mut data = rng.split_named("data");
    let t_n = model.window();
    let mut windows = Vec::with_capacity(batch);
    let mut sups = Vec::with_capacity(batch);
    for _ in 0..batch {
        let frames = (0..t_n)
            .map(|_| dims.iter().map(|&d| (0..d).map(|_| data.normal()).collect()).collect())
            .collect();
        windows.push(Window { frames });
        let arr: Vec<f64> = (0..ExpressionParams::LEN).map(|_| data.uniform_range(-1.0, 1.0)).collect();
        let p = ExpressionParams::from_array(arr.try_into().expect("knob count"));
        let (m, t) = avatar.synthesize(&p)?;
        let code = |r: &mut Rng| (0..4).map(|_| r.normal()).collect::<Vec<f64>>();
        sups.push(Supervision {
            full: code(&mut data),
            parts: (0..model.modules()).map(|_| code(&mut data)).collect(),
            target: avatar.flatten(&m, &t),
        });
    }
    Ok(LossObjective { model, windows, sups })
}

/// Gradient check of the full loss of a tiny problem.
pub fn check_full_loss(seed: u64, ablation: Ablation, holistic: bool) -> Result<GradCheckReport> {
    let mut obj = tiny_problem(seed, ablation, holistic, 2)?;
    grad_check(&mut obj, 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_loss_gradients_match_finite_differences() {
        let r = check_full_loss(1, Ablation::default(), false).unwrap();
        assert!(r.max_relative_error < 1e-6, "{} at {}", r.max_relative_error, r.worst_index);
    }

    #[test]
    fn ablated_and_holistic_gradients_match() {
        for (i, ab) in [Ablation::all_off(), Ablation { skip_mod: false, ..Ablation::default() }].into_iter().enumerate() {
            let r = check_full_loss(10 + i as u64, ab, false).unwrap();
            assert!(r.max_relative_error < 1e-6, "{ab:?}: {}", r.max_relative_error);
        }
        let r = check_full_loss(20, Ablation::default(), true).unwrap();
        assert!(r.max_relative_error < 1e-6, "holistic: {}", r.max_relative_error);
    }
}
