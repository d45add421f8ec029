//! k-means initialization of RBF centers and widths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::{dist2, Real};

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("{points} points cannot seed {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("points have inconsistent dimensions")]
    RaggedInput,
}

#[derive(Clone, Debug)]
pub struct KMeansConfig<T> {
    pub k: usize,
    pub max_iterations: usize,
    /// stop once the relative objective decrease falls below this
    pub tolerance: T,
    pub sigma_min: T,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct KMeansResult<T> {
    /// k × dim, row-major
    pub centers: Vec<T>,
    pub widths: Vec<T>,
    pub assignment: Vec<usize>,
    /// within-cluster sum of squares after every Lloyd iteration
    pub objective: Vec<T>,
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Widths are the mean member-to-center distance of each cluster, floored at
/// `sigma_min`. A cluster that empties is re-seeded at the point farthest
/// from its current center.
pub fn kmeans<T: Real>(points: &[&[T]], cfg: &KMeansConfig<T>) -> Result<KMeansResult<T>, KMeansError> {
    let k = cfg.k;
    if k == 0 || points.len() < k {
        return Err(KMeansError::TooFewPoints { points: points.len(), k });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(KMeansError::RaggedInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers = seed_plus_plus(points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    let mut nearest = vec![T::zero(); points.len()];
    let mut objective = Vec::new();

    for _ in 0..cfg.max_iterations.max(1) {
        assign(points, &centers, dim, &mut assignment, &mut nearest);

        let mut sums = vec![T::zero(); k * dim];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = T::one() / T::of(counts[c] as f64);
                for (dst, &s) in centers[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = s * inv;
                }
            }
        }
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..points.len())
                .max_by(|&a, &b| nearest[a].partial_cmp(&nearest[b]).unwrap_or(std::cmp::Ordering::Equal))
                .expect("non-empty input");
            centers[c * dim..(c + 1) * dim].copy_from_slice(points[far]);
            nearest[far] = T::zero();
            assignment[far] = c;
        }

        assign(points, &centers, dim, &mut assignment, &mut nearest);
        let obj: T = nearest.iter().copied().sum();
        let done = objective.last().is_some_and(|&prev: &T| prev - obj <= cfg.tolerance * prev.abs());
        objective.push(obj);
        if done {
            break;
        }
    }

    let mut widths = vec![T::zero(); k];
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        widths[c] += nearest[i].sqrt();
        counts[c] += 1;
    }
    for (w, &n) in widths.iter_mut().zip(&counts) {
        *w = if n > 0 { *w / T::of(n as f64) } else { T::zero() };
        if *w < cfg.sigma_min {
            *w = cfg.sigma_min;
        }
    }
    Ok(KMeansResult { centers, widths, assignment, objective })
}

fn assign<T: Real>(points: &[&[T]], centers: &[T], dim: usize, assignment: &mut [usize], nearest: &mut [T]) {
    for (i, p) in points.iter().enumerate() {
        let (best, d) = centers
            .chunks(dim)
            .enumerate()
            .map(|(c, mu)| (c, dist2(p, mu)))
            .fold((0, T::infinity()), |acc, x| if x.1 < acc.1 { x } else { acc });
        assignment[i] = best;
        nearest[i] = d;
    }
}

fn seed_plus_plus<T: Real>(points: &[&[T]], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let dim = points[0].len();
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..points.len());
    centers.extend_from_slice(points[first]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, points[first]).f64()).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        centers.extend_from_slice(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, points[pick]).f64());
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg(k: usize) -> KMeansConfig<f64> {
        KMeansConfig { k, max_iterations: 100, tolerance: 0.0, sigma_min: 1e-3, seed: 5 }
    }

    fn cloud(seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let c = (i % 4) as f64 * 3.0;
                vec![c + rng.gen_range(-1.0..1.0), -c + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
            })
            .collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = cloud(1, 200);
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let r = kmeans(&refs, &cfg(1)).unwrap();
        for d in 0..3 {
            let mean = pts.iter().map(|p| p[d]).sum::<f64>() / 200.0;
            assert!((r.centers[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_points_collapse_widths_to_floor() {
        let base = [[0.0, 0.0], [1.0, 0.0], [0.0, 5.0]];
        let pts: Vec<&[f64]> = (0..30).map(|i| &base[i % 3][..]).collect();
        let r = kmeans(&pts, &cfg(3)).unwrap();
        assert_eq!(r.widths, vec![1e-3; 3]);
        assert_eq!(*r.objective.last().unwrap(), 0.0);
    }

    #[test]
    fn objective_never_increases() {
        let pts = cloud(2, 500);
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let r = kmeans(&refs, &cfg(7)).unwrap();
        assert!(r.objective.len() > 1);
        for w in r.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0]);
        }
    }

    #[test]
    fn every_cluster_keeps_a_member() {
        // duplicates make empty clusters likely without re-seeding
        let mut pts = vec![vec![0.0, 0.0]; 50];
        pts.push(vec![10.0, 10.0]);
        pts.push(vec![-10.0, 4.0]);
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let r = kmeans(&refs, &cfg(3)).unwrap();
        for c in 0..3 {
            assert!(r.assignment.contains(&c));
        }
    }

    #[test]
    fn too_few_points() {
        let pts = [[0.0f64; 2]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        assert_eq!(kmeans(&refs, &cfg(2)).unwrap_err(), KMeansError::TooFewPoints { points: 1, k: 2 });
    }

    #[test]
    fn deterministic_for_seed() {
        let pts = cloud(3, 300);
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let a = kmeans(&refs, &cfg(5)).unwrap();
        let b = kmeans(&refs, &cfg(5)).unwrap();
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.widths, b.widths);
    }
}
