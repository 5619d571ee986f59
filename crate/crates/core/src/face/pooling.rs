//! Vertex-pooled texture error.

use super::avatar::{TextureMap, UvAtlas};
use crate::error::{Error, Result};

/// Per-vertex mean, over the texels it owns, of the channel-summed squared
/// error. Vertices owning no texel get 0.
pub fn vertex_pool_texture_error(a: &TextureMap, b: &TextureMap, atlas: &UvAtlas) -> Result<Vec<f64>> {
    if a.texels.len() != b.texels.len() || a.texels.len() != atlas.texel_count() {
        return Err(Error::shape("pooled texture", &[atlas.texel_count()], &[a.texels.len(), b.texels.len()]));
    }
    let mut sums = vec![0.0; atlas.vertex_count()];
    for ((ta, tb), &o) in a.texels.iter().zip(&b.texels).zip(&atlas.owner) {
        let e: f64 = (0..3).map(|c| (ta[c] - tb[c]).powi(2)).sum();
        sums[o] += e;
    }
    Ok(sums
        .iter()
        .zip(&atlas.counts)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect())
}

/// Same pooling on raw per-texel squared errors.
pub fn pool_texel_errors(errors: &[f64], atlas: &UvAtlas) -> Vec<f64> {
    let mut sums = vec![0.0; atlas.vertex_count()];
    for (e, &o) in errors.iter().zip(&atlas.owner) {
        sums[o] += e;
    }
    sums.iter()
        .zip(&atlas.counts)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_textures_pool_to_zero() {
        let atlas = UvAtlas::new(vec![[0.2, 0.2], [0.8, 0.8]], 8);
        let t = TextureMap::filled(8, [0.3, 0.4, 0.5]);
        assert!(vertex_pool_texture_error(&t, &t, &atlas).unwrap().iter().all(|e| *e == 0.0));
    }

    #[test]
    fn hand_average_of_four_texels() {
        // one vertex owns all four texels of a 2x2 map
        let atlas = UvAtlas::new(vec![[0.5, 0.5]], 2);
        let errs = [0.0, 2.0, 2.0, 4.0];
        assert_eq!(pool_texel_errors(&errs, &atlas), vec![2.0]);
        let a = TextureMap::filled(2, [0.0; 3]);
        let b = TextureMap {
            size: 2,
            texels: errs.iter().map(|e| [e.sqrt(), 0.0, 0.0]).collect(),
        };
        let got = vertex_pool_texture_error(&a, &b, &atlas).unwrap()[0];
        assert!((got - 2.0).abs() < 1e-12);
    }
}
