//! Modulated adaptive blending of per-module face estimates.
//!
//! For vertex `u` and module `k`:
//! `raw_k = ws_k * exp(-max(|u - c_k|^2 - a_k, 0) / sigma^2) + b_k * [|u - c_k|^2 <= a_k]`
//! and `w_k = raw_k / sum_j raw_j`. Texels use their owner vertex's weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::Avatar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub index: usize,
    pub centroid: [f64; 2],
    /// Squared uv radius of the plateau.
    pub area: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

impl ModuleSpec {
    /// Spec from module `k`'s mask: uv centroid and equal-area squared radius.
    pub fn from_avatar(avatar: &Avatar, k: usize, sigma: f64, amplitude: f64) -> Result<Self> {
        if k >= avatar.masks.len() {
            return Err(Error::InvalidArgument(format!("module {k} out of range")));
        }
        let (centroid, area) = avatar.module_extent(k);
        let spec = ModuleSpec {
            index: k,
            centroid,
            area,
            amplitude,
            sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = self.centroid.iter().all(|c| (0.0..=1.0).contains(c));
        if !inside || !(self.area > 0.0) || !(self.amplitude >= 0.0) || !(self.sigma > 0.0) {
            return Err(Error::Config(format!("invalid module spec {self:?}")));
        }
        Ok(())
    }

    /// `(falloff, plateau)` at `uv`: the factor multiplying `ws` and the
    /// additive constant.
    pub fn modulation(&self, uv: [f64; 2]) -> (f64, f64) {
        let d2 = (uv[0] - self.centroid[0]).powi(2) + (uv[1] - self.centroid[1]).powi(2);
        let excess = (d2 - self.area).max(0.0);
        let falloff = (-excess / (self.sigma * self.sigma)).exp();
        let plateau = if d2 <= self.area { self.amplitude } else { 0.0 };
        (falloff, plateau)
    }
}

/// Precomputed modulation terms of `specs` at every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendBasis {
    /// `[k][vertex]` falloff factor.
    pub falloff: Vec<Vec<f64>>,
    /// `[k][vertex]` plateau constant.
    pub plateau: Vec<Vec<f64>>,
}

impl BlendBasis {
    pub fn new(specs: &[ModuleSpec], uv: &[[f64; 2]]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Empty("module specs".into()));
        }
        let mut falloff = Vec::with_capacity(specs.len());
        let mut plateau = Vec::with_capacity(specs.len());
        for s in specs {
            s.validate()?;
            let (f, p): (Vec<f64>, Vec<f64>) = uv.iter().map(|&u| s.modulation(u)).unzip();
            falloff.push(f);
            plateau.push(p);
        }
        Ok(BlendBasis { falloff, plateau })
    }

    pub fn modules(&self) -> usize {
        self.falloff.len()
    }

    pub fn vertices(&self) -> usize {
        self.falloff[0].len()
    }
}

/// Normalized per-vertex module weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendField {
    /// `[k][vertex]`, summing to 1 over `k`.
    pub weights: Vec<Vec<f64>>,
    /// Per-vertex normalizer `sum_k raw_k` (1 for equal weighting).
    pub normalizer: Vec<f64>,
}

impl BlendField {
    /// Every module weighted `1/K` everywhere.
    pub fn equal(modules: usize, vertices: usize) -> Self {
        BlendField {
            weights: vec![vec![1.0 / modules as f64; vertices]; modules],
            normalizer: vec![1.0; vertices],
        }
    }

    pub fn modules(&self) -> usize {
        self.weights.len()
    }

    /// Weight of module `k` for each face element, via the element's vertex.
    pub fn element_weight(&self, k: usize, element_vertex: &[usize]) -> Vec<f64> {
        element_vertex.iter().map(|&v| self.weights[k][v]).collect()
    }
}

/// Blend field from per-module, per-vertex `ws` in [0, 1].
pub fn modulate_blend(ws: &[Vec<f64>], basis: &BlendBasis) -> Result<BlendField> {
    let k_n = basis.modules();
    let g = basis.vertices();
    if ws.len() != k_n || ws.iter().any(|w| w.len() != g) {
        return Err(Error::shape("blend inputs", &[k_n, g], &[ws.len(), ws.first().map_or(0, |w| w.len())]));
    }
    let mut weights = vec![vec![0.0; g]; k_n];
    let mut normalizer = vec![0.0; g];
    for v in 0..g {
        let mut total = 0.0;
        for k in 0..k_n {
            let raw = ws[k][v] * basis.falloff[k][v] + basis.plateau[k][v];
            weights[k][v] = raw;
            total += raw;
        }
        if !(total > 0.0) {
            return Err(Error::UncoveredVertex { vertex: v });
        }
        for w in weights.iter_mut() {
            w[v] /= total;
        }
        normalizer[v] = total;
    }
    Ok(BlendField { weights, normalizer })
}

/// Gradient of a loss with respect to `ws` given its gradient `dw` with
/// respect to the normalized weights.
pub fn modulate_blend_backward(field: &BlendField, basis: &BlendBasis, dw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k_n = field.modules();
    let g = basis.vertices();
    let mut dws = vec![vec![0.0; g]; k_n];
    for v in 0..g {
        let mean: f64 = (0..k_n).map(|k| dw[k][v] * field.weights[k][v]).sum();
        for k in 0..k_n {
            let draw = (dw[k][v] - mean) / field.normalizer[v];
            dws[k][v] = draw * basis.falloff[k][v];
        }
    }
    dws
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn spec(centroid: [f64; 2], area: f64, amplitude: f64) -> ModuleSpec {
        ModuleSpec {
            index: 0,
            centroid,
            area,
            amplitude,
            sigma: 0.1,
        }
    }

    #[test]
    fn single_module_weight_is_one() {
        let basis = BlendBasis::new(&[spec([0.5, 0.5], 0.01, 1.0)], &[[0.1, 0.9], [0.5, 0.5]]).unwrap();
        let f = modulate_blend(&[vec![0.3, 0.9]], &basis).unwrap();
        assert_eq!(f.weights[0], vec![1.0, 1.0]);
    }

    #[test]
    fn hand_evaluated_split() {
        // vertex at module 1's centroid; module 2 far away with a zero plateau and
        // a falloff that makes its raw weight 0.5
        let s1 = spec([0.5, 0.5], 0.04, 1.0);
        let basis = BlendBasis {
            falloff: vec![vec![1.0], vec![1.0]],
            plateau: vec![vec![s1.modulation([0.5, 0.5]).1], vec![0.0]],
        };
        let f = modulate_blend(&[vec![0.5], vec![0.5]], &basis).unwrap();
        assert!((f.weights[0][0] - 0.75).abs() < 1e-12);
        assert!((f.weights[1][0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tail_is_exp_minus_nine() {
        let s = spec([0.5, 0.5], 0.01, 1.0);
        // |u - c|^2 - a = 9 sigma^2 = 0.09
        let d = (0.01f64 + 0.09).sqrt();
        let (falloff, plateau) = s.modulation([0.5 + d, 0.5]);
        assert_eq!(plateau, 0.0);
        assert!((falloff - (-9f64).exp()).abs() < 1e-12);
        assert!((falloff - 1.234e-4).abs() < 1e-6);
    }

    #[test]
    fn zero_raw_weight_is_uncovered() {
        let basis = BlendBasis::new(&[spec([0.5, 0.5], 0.01, 0.0)], &[[0.5, 0.5]]).unwrap();
        assert!(matches!(
            modulate_blend(&[vec![0.0]], &basis),
            Err(Error::UncoveredVertex { vertex: 0 })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let uv: Vec<[f64; 2]> = (0..6).map(|_| [rng.uniform(), rng.uniform()]).collect();
        let specs = [spec([0.3, 0.3], 0.02, 1.0), spec([0.7, 0.3], 0.02, 1.0), spec([0.5, 0.8], 0.05, 0.5)];
        let basis = BlendBasis::new(&specs, &uv).unwrap();
        let ws: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| rng.uniform_range(0.1, 0.9)).collect()).collect();
        let coef: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
        let loss = |ws: &[Vec<f64>]| -> f64 {
            let f = modulate_blend(ws, &basis).unwrap();
            (0..3).flat_map(|k| (0..6).map(move |v| (k, v))).map(|(k, v)| coef[k][v] * f.weights[k][v]).sum()
        };
        let f = modulate_blend(&ws, &basis).unwrap();
        let dws = modulate_blend_backward(&f, &basis, &coef);
        for k in 0..3 {
            for v in 0..6 {
                let mut up = ws.clone();
                up[k][v] += 1e-6;
                let mut dn = ws.clone();
                dn[k][v] -= 1e-6;
                let num = (loss(&up) - loss(&dn)) / 2e-6;
                assert!((num - dws[k][v]).abs() < 1e-8, "{num} vs {}", dws[k][v]);
            }
        }
    }
}
