//! Exemplar banks of masked-VAE codes, nearest-exemplar alignment and
//! code-noise augmentation.

use std::path::Path;

use crate::codec::vae::VaeModel;
use crate::error::{Error, Result};
use crate::face::ViewDirection;
use crate::hash::hash_reals;
use crate::numeric::{squared_distance, Blob, Rng, Tensor};
use crate::par::{self, Exec};

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarBank {
    pub module: usize,
    pub codes: Vec<Vec<f64>>,
    /// Frontal masked decode of each code, on the model's active elements.
    pub cache: Vec<Vec<f64>>,
    /// Reconstruction weight per active element.
    pub weights: Vec<f64>,
    /// Latent distance from each code to its nearest other code.
    pub nn_distance: Vec<f64>,
    pub decoder_hash: String,
}

fn nearest_other_distances(codes: &[Vec<f64>], exec: Exec) -> Vec<f64> {
    par::map_range(exec, codes.len(), |i| {
        let mut best = f64::INFINITY;
        for (j, c) in codes.iter().enumerate() {
            if j != i {
                best = best.min(squared_distance(&codes[i], c));
            }
        }
        // a singleton bank has no neighbour; treat it as degenerate
        if best.is_finite() {
            best.sqrt()
        } else {
            0.0
        }
    })
}

impl ExemplarBank {
    /// Bank from explicit codes, decoding the cache with `model`.
    pub fn from_codes(model: &VaeModel, codes: Vec<Vec<f64>>, exec: Exec) -> Result<Self> {
        let module = model
            .mask
            .ok_or_else(|| Error::InvalidArgument("exemplar banks need a masked model".into()))?;
        if codes.is_empty() {
            return Err(Error::Empty("exemplar bank".into()));
        }
        let cache = par::map(exec, &codes, |c| model.decode_active(c, ViewDirection::FRONTAL))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(ExemplarBank {
            module,
            nn_distance: nearest_other_distances(&codes, exec),
            codes,
            cache,
            weights: model.weights.clone(),
            decoder_hash: model.decoder_hash(),
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn cache_hash(&self) -> String {
        let flat: Vec<f64> = self.cache.iter().flatten().copied().collect();
        hash_reals(&flat)
    }

    /// Weighted squared distance from the cached decode `i` to `target`.
    pub fn distance(&self, i: usize, target: &[f64]) -> f64 {
        self.cache[i]
            .iter()
            .zip(target)
            .zip(&self.weights)
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut blob = Blob::new(
            "bank",
            0,
            serde_json::json!({
                "module": self.module,
                "decoder_hash": self.decoder_hash,
                "cache_hash": self.cache_hash(),
            }),
        );
        let latent = self.codes[0].len();
        let flat: Vec<f64> = self.codes.iter().flatten().copied().collect();
        blob.push("codes", &Tensor::matrix(self.len(), latent, flat)?);
        std::fs::write(path, blob.to_bytes()?)?;
        Ok(())
    }

    /// Load codes from `path` and rebuild the cache with `model`. A stored
    /// cache hash is only checked when the decoder is unchanged.
    pub fn read(path: &Path, model: &VaeModel, exec: Exec) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::MissingArtifact {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let blob = Blob::from_bytes(&bytes)?;
        if blob.kind != "bank" {
            return Err(Error::Format(format!("expected a bank blob, found `{}`", blob.kind)));
        }
        let codes_t = blob.tensor(0, "codes")?;
        let latent = codes_t.last_dim();
        if latent != model.latent {
            return Err(Error::shape("bank codes", &[model.latent], &[latent]));
        }
        let codes: Vec<Vec<f64>> = codes_t.data().chunks(latent).map(|c| c.to_vec()).collect();
        let bank = Self::from_codes(model, codes, exec)?;
        let stored_decoder = blob.meta.get("decoder_hash").and_then(|v| v.as_str()).unwrap_or("");
        let stored_cache = blob.meta.get("cache_hash").and_then(|v| v.as_str()).unwrap_or("");
        if stored_decoder == bank.decoder_hash && stored_cache != bank.cache_hash() {
            return Err(Error::Format(format!("bank cache hash mismatch in {}", path.display())));
        }
        Ok(bank)
    }
}

/// One posterior-mean code per face, in input order.
pub fn build_exemplar_bank(model: &VaeModel, faces: &[Vec<f64>], exec: Exec) -> Result<ExemplarBank> {
    if faces.is_empty() {
        return Err(Error::Empty("exemplar bank split".into()));
    }
    let codes = par::map(exec, faces, |f| model.encode(f))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    ExemplarBank::from_codes(model, codes, exec)
}

/// Index of the bank entry whose cached decode is closest to `target`
/// (active-element values); ties go to the lowest index.
pub fn align_exemplar_index(bank: &ExemplarBank, target: &[f64]) -> Result<(usize, f64)> {
    if bank.is_empty() {
        return Err(Error::Empty("exemplar bank".into()));
    }
    if target.len() != bank.weights.len() {
        return Err(Error::shape("alignment target", &[bank.weights.len()], &[target.len()]));
    }
    let mut best = (0, f64::INFINITY);
    for i in 0..bank.len() {
        let d = bank.distance(i, target);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// Nearest exemplar code for `target`.
pub fn align_exemplar(bank: &ExemplarBank, target: &[f64]) -> Result<Vec<f64>> {
    let (i, _) = align_exemplar_index(bank, target)?;
    Ok(bank.codes[i].clone())
}

/// Alignment target for a full face vector: its values on `model`'s mask.
pub fn masked_target(model: &VaeModel, face: &[f64]) -> Vec<f64> {
    model.active.iter().map(|&e| face[e]).collect()
}

/// Add zero-mean Gaussian noise with per-dimension std `alpha` times the
/// distance from `code` to its nearest other bank code. One exact match of
/// `code` itself is skipped, so a duplicated code sees distance 0.
pub fn perturb_code(code: &[f64], bank: &ExemplarBank, alpha: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if bank.is_empty() {
        return Err(Error::Empty("exemplar bank".into()));
    }
    let std = alpha * nearest_other_distance(code, bank);
    Ok(perturb_with_std(code, std, rng))
}

/// `perturb_code` for a code known to be bank entry `index`.
pub fn perturb_bank_code(bank: &ExemplarBank, index: usize, alpha: f64, rng: &mut Rng) -> Vec<f64> {
    perturb_with_std(&bank.codes[index], alpha * bank.nn_distance[index], rng)
}

fn perturb_with_std(code: &[f64], std: f64, rng: &mut Rng) -> Vec<f64> {
    if std == 0.0 {
        return code.to_vec();
    }
    code.iter().map(|c| c + std * rng.normal()).collect()
}

fn nearest_other_distance(code: &[f64], bank: &ExemplarBank) -> f64 {
    let mut skipped_self = false;
    let mut best = f64::INFINITY;
    for c in &bank.codes {
        if !skipped_self && c.as_slice() == code {
            skipped_self = true;
            continue;
        }
        best = best.min(squared_distance(code, c));
    }
    if best.is_finite() {
        best.sqrt()
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::vae::VaeConfig;
    use crate::face::{Avatar, AvatarConfig};

    fn setup(seed: u64) -> (Avatar, VaeModel) {
        let a = Avatar::new(AvatarConfig {
            grid: 7,
            texture_size: 8,
            ..AvatarConfig::default()
        })
        .unwrap();
        let cfg = VaeConfig {
            latent: 4,
            encoder_hidden: vec![8],
            decoder_hidden: vec![8],
            ..VaeConfig::default()
        };
        let m = VaeModel::new(&a, Some(1), &cfg, &mut Rng::new(seed)).unwrap();
        (a, m)
    }

    fn random_codes(rng: &mut Rng, n: usize, l: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..l).map(|_| rng.normal()).collect()).collect()
    }

    #[test]
    fn cache_matches_decode_and_bank_has_one_code_per_face() {
        let (a, m) = setup(1);
        let faces = vec![a.rest_vector(); 5];
        let bank = build_exemplar_bank(&m, &faces, Exec::Parallel).unwrap();
        assert_eq!(bank.len(), 5);
        for (c, cached) in bank.codes.iter().zip(&bank.cache) {
            assert_eq!(&m.decode_active(c, ViewDirection::FRONTAL).unwrap(), cached);
        }
        assert!(build_exemplar_bank(&m, &[], Exec::Sequential).is_err());
    }

    #[test]
    fn exact_member_aligns_with_zero_distance() {
        let (_, m) = setup(2);
        let codes = random_codes(&mut Rng::new(9), 6, 4);
        let bank = ExemplarBank::from_codes(&m, codes, Exec::Sequential).unwrap();
        let (i, d) = align_exemplar_index(&bank, &bank.cache[3]).unwrap();
        assert_eq!((i, d), (3, 0.0));
    }

    #[test]
    fn hand_placed_distances_and_ties() {
        let (_, m) = setup(3);
        let n = m.active_len();
        let bank = ExemplarBank {
            module: 1,
            codes: (0..5).map(|i| vec![i as f64; 4]).collect(),
            cache: vec![vec![0.0; n]; 5],
            weights: vec![1.0; n],
            nn_distance: vec![1.0; 5],
            decoder_hash: String::new(),
        };
        // distances 5, 1, 7 from the zero target
        let mut b3 = bank.clone();
        b3.codes.truncate(3);
        b3.cache.truncate(3);
        b3.cache[0][0] = 5f64.sqrt();
        b3.cache[1][0] = 1.0;
        b3.cache[2][0] = 7f64.sqrt();
        let target = vec![0.0; n];
        assert_eq!(align_exemplar(&b3, &target).unwrap(), vec![1.0; 4]);
        // duplicated best at 2 and 4
        let mut b5 = bank;
        for (i, c) in b5.cache.iter_mut().enumerate() {
            c[0] = if i == 2 || i == 4 { 0.5 } else { 2.0 };
        }
        assert_eq!(align_exemplar_index(&b5, &target).unwrap().0, 2);
    }

    #[test]
    fn alignment_matches_brute_force_oracle() {
        let (_, m) = setup(4);
        let mut rng = Rng::new(44);
        for trial in 0..100 {
            let n = 1 + rng.below(50);
            let mut codes = random_codes(&mut rng, n, 4);
            if trial % 5 == 0 && n > 2 {
                // force a tie
                codes[n - 1] = codes[n / 2].clone();
            }
            let bank = ExemplarBank::from_codes(&m, codes.clone(), Exec::Sequential).unwrap();
            let target = if trial % 5 == 0 {
                bank.cache[n / 2].clone()
            } else {
                m.decode_active(&random_codes(&mut rng, 1, 4)[0], ViewDirection::FRONTAL).unwrap()
            };
            // oracle: re-decode every code and scan
            let mut oracle = 0;
            let mut best = f64::INFINITY;
            for (i, c) in codes.iter().enumerate() {
                let dec = m.decode_active(c, ViewDirection::FRONTAL).unwrap();
                let d: f64 = dec.iter().zip(&target).zip(&m.weights).map(|((a, b), w)| w * (a - b).powi(2)).sum();
                if d < best {
                    best = d;
                    oracle = i;
                }
            }
            assert_eq!(align_exemplar_index(&bank, &target).unwrap().0, oracle, "trial {trial}");
        }
    }

    #[test]
    fn zero_alpha_and_duplicates_leave_code_unchanged() {
        let (_, m) = setup(5);
        let mut codes = random_codes(&mut Rng::new(1), 4, 4);
        codes.push(codes[0].clone());
        let bank = ExemplarBank::from_codes(&m, codes, Exec::Sequential).unwrap();
        let mut rng = Rng::new(2);
        assert_eq!(perturb_code(&bank.codes[1], &bank, 0.0, &mut rng).unwrap(), bank.codes[1]);
        assert_eq!(perturb_code(&bank.codes[0], &bank, 0.5, &mut rng).unwrap(), bank.codes[0]);
        assert_eq!(perturb_bank_code(&bank, 4, 0.5, &mut rng), bank.codes[4]);
    }

    #[test]
    fn noise_std_is_alpha_times_nearest_distance() {
        let (_, m) = setup(6);
        let codes = vec![vec![0.0; 4], vec![3.0, 4.0, 0.0, 0.0], vec![10.0; 4]];
        let bank = ExemplarBank::from_codes(&m, codes, Exec::Sequential).unwrap();
        assert_eq!(bank.nn_distance[0], 5.0);
        let alpha = 0.5;
        let expected = alpha * 5.0;
        let n = 10_000;
        let mut rng = Rng::new(7);
        let mut sums = [0.0; 4];
        for _ in 0..n {
            let p = perturb_code(&bank.codes[0], &bank, alpha, &mut rng).unwrap();
            for j in 0..4 {
                sums[j] += p[j] * p[j];
            }
        }
        for s in sums {
            let std = (s / n as f64).sqrt();
            // std of the sample std is about sigma / sqrt(2n)
            let band = 3.0 * expected / (2.0 * n as f64).sqrt();
            assert!((std - expected).abs() < band, "{std} vs {expected}");
        }
    }

    #[test]
    fn bank_file_round_trip_rebuilds_cache() {
        let (a, m) = setup(8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank_1.bin");
        let bank = build_exemplar_bank(&m, &[a.rest_vector()], Exec::Sequential).unwrap();
        bank.write(&path).unwrap();
        assert_eq!(ExemplarBank::read(&path, &m, Exec::Sequential).unwrap(), bank);
        // a different decoder rebuilds instead of failing
        let (_, other) = setup(9);
        let rebuilt = ExemplarBank::read(&path, &other, Exec::Sequential).unwrap();
        assert_eq!(rebuilt.codes, bank.codes);
        assert_ne!(rebuilt.cache, bank.cache);
    }
}
