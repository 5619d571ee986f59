//! Average-linkage agglomerative clustering on Euclidean distance.
//!
//! The hierarchy is built once with the nearest-neighbour chain algorithm;
//! cutting it at any cluster count replays the merges in distance order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::squared_distance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Smallest original index in each merged cluster.
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub points: usize,
    /// Merges sorted by distance (stable in discovery order).
    pub merges: Vec<Merge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub linkage: String,
    pub centers: Vec<Vec<f64>>,
    /// Cluster of each input point; clusters are numbered by their smallest member.
    pub assignments: Vec<usize>,
}

/// Condensed symmetric distance matrix.
struct DistMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistMatrix {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

pub fn build_dendrogram(points: &[Vec<f64>]) -> Result<Dendrogram> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Empty("clustering input".into()));
    }
    let mut dm = DistMatrix {
        n,
        d: Vec::with_capacity(n * (n - 1) / 2),
    };
    for i in 0..n {
        for j in i + 1..n {
            dm.d.push(squared_distance(&points[i], &points[j]).sqrt());
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    // smallest original member of the cluster stored at slot i
    let mut rep: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|a| *a).expect("active cluster"));
        }
        let top = *chain.last().expect("non-empty chain");
        let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
        // nearest active neighbour; prefer the chain predecessor on ties,
        // then the smallest representative
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if !active[j] || j == top {
                continue;
            }
            let d = dm.get(top, j);
            let better = match best {
                None => true,
                Some((bd, bj)) => d < bd || (d == bd && Some(bj) != prev && (Some(j) == prev || rep[j] < rep[bj])),
            };
            if better {
                best = Some((d, j));
            }
        }
        let (d, nn) = best.expect("at least two active clusters");
        if Some(nn) == prev {
            chain.pop();
            chain.pop();
            let (x, y) = if top < nn { (top, nn) } else { (nn, top) };
            merges.push(Merge {
                a: rep[x].min(rep[y]),
                b: rep[x].max(rep[y]),
                distance: d,
            });
            // Lance-Williams update for average linkage into slot x
            let (sx, sy) = (size[x] as f64, size[y] as f64);
            for k in 0..n {
                if active[k] && k != x && k != y {
                    let v = (sx * dm.get(x, k) + sy * dm.get(y, k)) / (sx + sy);
                    dm.set(x, k, v);
                }
            }
            size[x] += size[y];
            rep[x] = rep[x].min(rep[y]);
            active[y] = false;
            remaining -= 1;
        } else {
            chain.push(nn);
        }
    }
    merges.sort_by(|p, q| p.distance.total_cmp(&q.distance));
    Ok(Dendrogram { points: n, merges })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl Dendrogram {
    /// Cluster assignments with exactly `n_clusters` clusters.
    pub fn cut(&self, n_clusters: usize) -> Result<Vec<usize>> {
        if n_clusters < 1 || n_clusters > self.points {
            return Err(Error::InvalidArgument(format!(
                "cluster count {n_clusters} outside [1, {}]",
                self.points
            )));
        }
        let mut parent: Vec<usize> = (0..self.points).collect();
        for m in &self.merges[..self.points - n_clusters] {
            let ra = find(&mut parent, m.a);
            let rb = find(&mut parent, m.b);
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
        }
        // number clusters by first appearance, i.e. by smallest member
        let mut label = vec![usize::MAX; self.points];
        let mut next = 0;
        let mut out = Vec::with_capacity(self.points);
        for i in 0..self.points {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            out.push(label[r]);
        }
        Ok(out)
    }
}

/// Member means per cluster.
pub fn cluster_centers(points: &[Vec<f64>], assignments: &[usize]) -> Vec<Vec<f64>> {
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let dim = points.first().map_or(0, |p| p.len());
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
        counts[a] += 1;
    }
    for (s, c) in sums.iter_mut().zip(counts) {
        for v in s.iter_mut() {
            *v /= c as f64;
        }
    }
    sums
}

pub fn agglomerative_cluster(points: &[Vec<f64>], n_clusters: usize) -> Result<ClusterModel> {
    if n_clusters < 1 {
        return Err(Error::InvalidArgument("n_clusters must be >= 1".into()));
    }
    let assignments = build_dendrogram(points)?.cut(n_clusters)?;
    Ok(ClusterModel {
        linkage: "average".into(),
        centers: cluster_centers(points, &assignments),
        assignments,
    })
}

/// Sum of squared distances of points to their cluster centers.
pub fn within_cluster_ss(points: &[Vec<f64>], model: &ClusterModel) -> f64 {
    points
        .iter()
        .zip(&model.assignments)
        .map(|(p, &a)| squared_distance(p, &model.centers[a]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    /// Quadratic-per-merge reference: repeatedly merge the globally closest
    /// pair under average linkage recomputed from the raw points.
    fn naive(points: &[Vec<f64>], n_clusters: usize) -> Vec<usize> {
        let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
        while clusters.len() > n_clusters {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let mut s = 0.0;
                    for &a in &clusters[i] {
                        for &b in &clusters[j] {
                            s += squared_distance(&points[a], &points[b]).sqrt();
                        }
                    }
                    let d = s / (clusters[i].len() * clusters[j].len()) as f64;
                    if d < best.0 {
                        best = (d, i, j);
                    }
                }
            }
            let moved = clusters.remove(best.2);
            clusters[best.1].extend(moved);
        }
        let mut out = vec![0; points.len()];
        let mut order: Vec<usize> = (0..clusters.len()).collect();
        order.sort_by_key(|&c| clusters[c].iter().min().copied());
        for (label, &c) in order.iter().enumerate() {
            for &i in &clusters[c] {
                out[i] = label;
            }
        }
        out
    }

    #[test]
    fn collinear_hand_case() {
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 10.0, 11.0].iter().map(|&v| vec![v]).collect();
        let m = agglomerative_cluster(&pts, 2).unwrap();
        assert_eq!(m.assignments, vec![0, 0, 1, 1]);
        assert_eq!(m.centers, vec![vec![0.5], vec![10.5]]);
    }

    #[test]
    fn extreme_cluster_counts() {
        let mut r = Rng::new(1);
        let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![r.normal(), r.normal()]).collect();
        let all = agglomerative_cluster(&pts, 12).unwrap();
        assert_eq!(all.centers, pts);
        let one = agglomerative_cluster(&pts, 1).unwrap();
        let mean = [pts.iter().map(|p| p[0]).sum::<f64>() / 12.0, pts.iter().map(|p| p[1]).sum::<f64>() / 12.0];
        assert!((one.centers[0][0] - mean[0]).abs() < 1e-12 && (one.centers[0][1] - mean[1]).abs() < 1e-12);
        assert!(agglomerative_cluster(&pts, 0).is_err());
        assert!(agglomerative_cluster(&pts, 13).is_err());
    }

    #[test]
    fn matches_naive_merging() {
        let mut r = Rng::new(5);
        for trial in 0..20 {
            let n = 5 + r.below(25);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.normal()).collect()).collect();
            let d = build_dendrogram(&pts).unwrap();
            for k in 1..=n {
                assert_eq!(d.cut(k).unwrap(), naive(&pts, k), "trial {trial} k {k}");
            }
        }
    }

    #[test]
    fn within_variance_is_monotone() {
        let mut r = Rng::new(8);
        let pts: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| r.normal()).collect()).collect();
        let d = build_dendrogram(&pts).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..=40 {
            let a = d.cut(k).unwrap();
            let m = ClusterModel {
                linkage: "average".into(),
                centers: cluster_centers(&pts, &a),
                assignments: a,
            };
            let ss = within_cluster_ss(&pts, &m);
            assert!(ss <= prev + 1e-9, "k {k}: {ss} > {prev}");
            prev = ss;
        }
    }
}
