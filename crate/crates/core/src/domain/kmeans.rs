//! Deterministic k-means.
//!
//! Lloyd iterations followed by Hartigan single-point refinement, run from
//! several initial center sets; the lowest within-cluster sum of squares
//! wins (earliest start on ties). When the number of k-subsets of distinct
//! rows is small, every subset is used as a start; otherwise the starts are
//! the first k distinct rows plus seeded k-means++ draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const MAX_LLOYD_ITERATIONS: usize = 100;
const EXHAUSTIVE_START_LIMIT: usize = 256;
const SEEDED_RESTARTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KMeansError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {distinct} distinct points available")]
    TooFewPoints { k: usize, distinct: usize },
    #[error("points have inconsistent dimensions")]
    Ragged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster index per point; clusters are numbered by first appearance.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
}

impl Clustering {
    /// Members of each cluster, in point order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.centroids.len()];
        for (i, &c) in self.assignments.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn centroids_of(points: &[Vec<f64>], assignments: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let k = previous.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(j, (sum, n))| {
            if n == 0 {
                previous[j].clone()
            } else {
                sum.into_iter().map(|s| s / n as f64).collect()
            }
        })
        .collect()
}

fn wcss(points: &[Vec<f64>], assignments: &[usize], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &c)| sq_dist(p, &centers[c]))
        .sum()
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        centers = centroids_of(points, &assignments, &centers);
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    (assignments, centers)
}

/// Moves single points between clusters while that strictly lowers WCSS.
fn hartigan(points: &[Vec<f64>], assignments: &mut [usize], centers: &mut Vec<Vec<f64>>) {
    let k = centers.len();
    let mut counts = vec![0usize; k];
    for &c in assignments.iter() {
        counts[c] += 1;
    }
    let mut improved = true;
    let mut guard = 0;
    while improved && guard < 10 * points.len().max(1) {
        improved = false;
        guard += 1;
        for (i, p) in points.iter().enumerate() {
            let from = assignments[i];
            if counts[from] <= 1 {
                continue;
            }
            let nf = counts[from] as f64;
            let removal_gain = nf / (nf - 1.0) * sq_dist(p, &centers[from]);
            let mut best: Option<(usize, f64)> = None;
            for to in (0..k).filter(|&to| to != from) {
                let nt = counts[to] as f64;
                let cost = nt / (nt + 1.0) * sq_dist(p, &centers[to]);
                let delta = cost - removal_gain;
                if delta < -1e-12 * (1.0 + removal_gain) && best.is_none_or(|(_, d)| delta < d) {
                    best = Some((to, delta));
                }
            }
            if let Some((to, _)) = best {
                assignments[i] = to;
                counts[from] -= 1;
                counts[to] += 1;
                *centers = centroids_of(points, assignments, centers);
                improved = true;
            }
        }
    }
}

fn combinations(n: usize, k: usize, limit: usize) -> Option<Vec<Vec<usize>>> {
    // Binomial with early exit.
    let mut count: usize = 1;
    for i in 0..k {
        count = count.checked_mul(n - i)? / (i + 1);
        if count > limit {
            return None;
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return Some(out);
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return Some(out);
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn plus_plus(points: &[Vec<f64>], distinct: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[distinct[rng.gen_range(0..distinct.len())]].clone()];
    while centers.len() < k {
        let weights: Vec<f64> = distinct
            .iter()
            .map(|&i| {
                centers
                    .iter()
                    .map(|c| sq_dist(&points[i], c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = distinct.len() - 1;
            for (j, w) in weights.iter().enumerate() {
                if target < *w {
                    chosen = j;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            0
        };
        centers.push(points[distinct[pick]].clone());
    }
    centers
}

fn canonicalize(assignments: Vec<usize>, centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>) {
    let k = centers.len();
    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for &c in &assignments {
        if relabel[c] == usize::MAX {
            relabel[c] = next;
            next += 1;
        }
    }
    for slot in relabel.iter_mut() {
        if *slot == usize::MAX {
            *slot = next;
            next += 1;
        }
    }
    let mut ordered = vec![Vec::new(); k];
    for (old, c) in centers.into_iter().enumerate() {
        ordered[relabel[old]] = c;
    }
    (assignments.into_iter().map(|c| relabel[c]).collect(), ordered)
}

/// Clusters `points` into `k` groups. Identical inputs always produce
/// identical output.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering, KMeansError> {
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(KMeansError::Ragged);
    }
    let mut distinct: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !distinct.iter().any(|&j| points[j] == *p) {
            distinct.push(i);
        }
    }
    if k > distinct.len() {
        return Err(KMeansError::TooFewPoints {
            k,
            distinct: distinct.len(),
        });
    }

    let starts: Vec<Vec<Vec<f64>>> = match combinations(distinct.len(), k, EXHAUSTIVE_START_LIMIT) {
        Some(subsets) => subsets
            .into_iter()
            .map(|s| s.into_iter().map(|j| points[distinct[j]].clone()).collect())
            .collect(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut starts = vec![distinct[..k].iter().map(|&i| points[i].clone()).collect()];
            for _ in 0..SEEDED_RESTARTS {
                starts.push(plus_plus(points, &distinct, k, &mut rng));
            }
            starts
        }
    };

    let mut best: Option<(f64, Vec<usize>, Vec<Vec<f64>>)> = None;
    for start in starts {
        let (mut assignments, mut centers) = lloyd(points, start);
        hartigan(points, &mut assignments, &mut centers);
        let cost = wcss(points, &assignments, &centers);
        if best.as_ref().is_none_or(|(b, _, _)| cost < *b) {
            best = Some((cost, assignments, centers));
        }
    }
    let (cost, assignments, centers) = best.expect("at least one start");
    let (assignments, centroids) = canonicalize(assignments, centers);
    Ok(Clustering {
        assignments,
        centroids,
        wcss: cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_example() {
        let points = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 10.0],
            vec![10.0, 11.0],
        ];
        let c = kmeans(&points, 2, 42).unwrap();
        assert_eq!(c.groups(), vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(c.assignments, vec![0, 0, 1, 1]);
        assert_eq!(c.wcss, 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(kmeans(&[vec![1.0]], 0, 0), Err(KMeansError::ZeroK));
        assert_eq!(
            kmeans(&[vec![1.0], vec![1.0]], 2, 0),
            Err(KMeansError::TooFewPoints { k: 2, distinct: 1 })
        );
        assert_eq!(kmeans(&[vec![1.0], vec![1.0, 2.0]], 1, 0), Err(KMeansError::Ragged));
    }

    #[test]
    fn combinations_enumerate_in_order() {
        assert_eq!(
            combinations(4, 2, 100).unwrap(),
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(combinations(3, 3, 10).unwrap(), vec![vec![0, 1, 2]]);
        assert!(combinations(40, 4, 256).is_none());
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let cars = crate::domain::TabularDataset::bundled_cars();
        let a = kmeans(&cars.rows, 3, 7).unwrap();
        let b = kmeans(&cars.rows, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.assignments.len(), 32);
    }
}
