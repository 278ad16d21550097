use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    #[default]
    KMeans,
    /// Gaussian mixture with diagonal covariances.
    Gmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub method: ClusterMethod,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 2,
            method: ClusterMethod::KMeans,
            restarts: 50,
            max_iter: 300,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::Parameter("k, restarts and max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignment: Vec<usize>,
    pub centroids: Mat,
    pub inertia: f64,
    /// Objective after every assignment and update step of the kept run.
    pub objective: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(points: &Mat, k: usize, rng: &mut impl Rng) -> Mat {
    let n = points.rows();
    let mut centroids = Mat::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn inertia(points: &Mat, centroids: &Mat, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(points.row(i), centroids.row(c)))
        .sum()
}

fn lloyd(points: &Mat, mut centroids: Mat, max_iter: usize) -> KMeansFit {
    let n = points.rows();
    let k = centroids.rows();
    let mut assignment = vec![usize::MAX; n];
    let mut objective = Vec::new();
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .map(|c| (c, sq_dist(points.row(i), centroids.row(c))))
                .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b })
                .0;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        objective.push(inertia(points, &centroids, &assignment));
        if !changed && objective.len() > 1 {
            break;
        }
        let mut sums = Mat::zeros(k, points.cols());
        let mut sizes = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            sizes[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / sizes[c] as f64;
                }
            } else {
                // move an empty centroid onto the worst-served point
                let far = (0..n)
                    .map(|i| (i, sq_dist(points.row(i), centroids.row(assignment[i]))))
                    .fold((0, -1.0), |b, x| if x.1 > b.1 { x } else { b })
                    .0;
                let p = points.row(far).to_vec();
                centroids.row_mut(c).copy_from_slice(&p);
                assignment[far] = c;
            }
        }
        objective.push(inertia(points, &centroids, &assignment));
    }
    let inertia = inertia(points, &centroids, &assignment);
    KMeansFit {
        assignment,
        centroids,
        inertia,
        objective,
    }
}

fn check_k(points: &Mat, k: usize) -> Result<()> {
    if k == 0 || k > points.rows() {
        return Err(Error::Parameter(format!(
            "cluster count {k} must be between 1 and the number of points ({})",
            points.rows()
        )));
    }
    Ok(())
}

/// k-means++ seeding followed by Lloyd iterations; keeps the restart with
/// the lowest within-cluster sum of squares.
pub fn kmeans(points: &Mat, k: usize, restarts: usize, max_iter: usize, seed: u64) -> Result<KMeansFit> {
    check_k(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(points, plus_plus(points, k, &mut rng), max_iter.max(1));
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

const VARIANCE_FLOOR: f64 = 1e-6;

/// EM for a diagonal-covariance Gaussian mixture seeded from k-means++;
/// returns the hard assignment of the best restart by log-likelihood.
pub fn gmm_diagonal(points: &Mat, k: usize, restarts: usize, max_iter: usize, seed: u64) -> Result<Vec<usize>> {
    check_k(points, k)?;
    let (n, dim) = points.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let spread: Vec<f64> = (0..dim)
        .map(|c| {
            let mean = (0..n).map(|i| points.get(i, c)).sum::<f64>() / n as f64;
            ((0..n).map(|i| (points.get(i, c) - mean).powi(2)).sum::<f64>() / n as f64).max(VARIANCE_FLOOR)
        })
        .collect();
    for _ in 0..restarts.max(1) {
        let mut means = plus_plus(points, k, &mut rng);
        let mut vars = Mat::from_fn(k, dim, |_, c| spread[c]);
        let mut weights = vec![1.0 / k as f64; k];
        let mut resp = Mat::zeros(n, k);
        let mut ll = f64::NEG_INFINITY;
        for _ in 0..max_iter.max(1) {
            let mut new_ll = 0.0;
            for i in 0..n {
                let row: Vec<f64> = (0..k)
                    .map(|c| {
                        let mut lp = weights[c].max(f64::MIN_POSITIVE).ln();
                        for (d, &x) in points.row(i).iter().enumerate() {
                            let v = vars.get(c, d);
                            lp -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - means.get(c, d)).powi(2) / v);
                        }
                        lp
                    })
                    .collect();
                let mut row = row;
                new_ll += crate::linalg::softmax_in_place(&mut row);
                resp.row_mut(i).copy_from_slice(&row);
            }
            for c in 0..k {
                let nk: f64 = (0..n).map(|i| resp.get(i, c)).sum::<f64>();
                weights[c] = nk / n as f64;
                if nk <= 1e-12 {
                    continue;
                }
                for d in 0..dim {
                    let m = (0..n).map(|i| resp.get(i, c) * points.get(i, d)).sum::<f64>() / nk;
                    let v = (0..n).map(|i| resp.get(i, c) * (points.get(i, d) - m).powi(2)).sum::<f64>() / nk;
                    means.set(c, d, m);
                    vars.set(c, d, v.max(VARIANCE_FLOOR));
                }
            }
            let done = (new_ll - ll).abs() <= 1e-10 * new_ll.abs().max(1.0);
            ll = new_ll;
            if done {
                break;
            }
        }
        let assignment = (0..n)
            .map(|i| {
                resp.row(i)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (c, &r)| if r > b.1 { (c, r) } else { b })
                    .0
            })
            .collect();
        if best.as_ref().is_none_or(|b| ll > b.0) {
            best = Some((ll, assignment));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Renumbers clusters by first appearance so equal partitions get equal ids.
pub fn canonical_labels(assignment: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    assignment
        .iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect()
}

/// Clusters the rows of the account embedding matrix.
pub fn cluster_accounts(embeddings: &Mat, config: &ClusterConfig) -> Result<Vec<usize>> {
    let raw = match config.method {
        ClusterMethod::KMeans => {
            kmeans(embeddings, config.k, config.restarts, config.max_iter, config.seed)?.assignment
        }
        ClusterMethod::Gmm => gmm_diagonal(embeddings, config.k, config.restarts, config.max_iter, config.seed)?,
    };
    Ok(canonical_labels(&raw))
}

/// Adjusted Rand index between two partitions.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let pairs = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&m| pairs(m)).sum();
    let rows: f64 = (0..ka).map(|x| pairs(table[x * kb..(x + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|y| pairs((0..ka).map(|x| table[x * kb + y]).sum())).sum();
    let expected = rows * cols / pairs(n as u64);
    let max = 0.5 * (rows + cols);
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}
