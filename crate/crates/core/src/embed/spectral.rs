use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Root-mean-square distance over all unordered pairs.
pub fn rms_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += squared_distance(&points[i], &points[j]);
        }
    }
    (sum / (n * (n - 1) / 2) as f64).sqrt()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian affinity `exp(-|x_i - x_j|^2 / (2 sigma^2))` with unit diagonal.
pub fn affinity(points: &[Vec<f64>], sigma: f64) -> Result<DMatrix<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("kernel scale must be positive"));
    }
    let n = points.len();
    let mut a = DMatrix::identity(n, n);
    let denom = 2.0 * sigma * sigma;
    for i in 0..n {
        for j in i + 1..n {
            let v = (-squared_distance(&points[i], &points[j]) / denom).exp();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    /// Cluster id per sample, in `1..=q`.
    pub labels: Vec<usize>,
    /// The `q` smallest eigenvalues of the normalized Laplacian, ascending.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors as columns (`n × q`).
    pub eigenvectors: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub inertia: f64,
}

/// Symmetric normalized Laplacian `I - D^{-1/2} W D^{-1/2}` of the graph
/// with weights `W = A` off the diagonal and no self-loops.
pub fn normalized_laplacian(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid("affinity matrix must be square"));
    }
    let mut degree = vec![0.0; n];
    for i in 0..n {
        degree[i] = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        if !(degree[i] >= f64::MIN_POSITIVE) {
            return Err(Error::IsolatedSample(i));
        }
    }
    let inv: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            -a[(i, j)] * inv[i] * inv[j]
        }
    }))
}

/// Ng–Jordan–Weiss spectral clustering.
pub fn spectral_cluster(a: &DMatrix<f64>, q: usize, seed: u64, km: KMeansConfig) -> Result<SpectralResult> {
    let n = a.nrows();
    if q < 2 {
        return Err(Error::invalid("need at least 2 clusters"));
    }
    if n < q {
        return Err(Error::InsufficientSamples { needed: q, got: n });
    }
    let laplacian = normalized_laplacian(a)?;
    let eig = SymmetricEigen::new(laplacian.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(x.cmp(&y)));
    let order = &order[..q];
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, q, |r, c| eig.eigenvectors[(r, order[c])]);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let row: Vec<f64> = eigenvectors.row(r).iter().copied().collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect();
    let (raw, inertia) = kmeans(&rows, q, seed, km)?;
    Ok(SpectralResult {
        labels: relabel_by_first_appearance(&raw),
        eigenvalues,
        eigenvectors,
        laplacian,
        inertia,
    })
}

/// Map arbitrary labels to `1..` in order of first occurrence.
pub fn relabel_by_first_appearance(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len() + 1;
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// k-means with k-means++ seeding; best of `restarts` runs by inertia.
/// Returns 0-based labels.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, cfg: KMeansConfig) -> Result<(Vec<usize>, f64)> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::InsufficientSamples { needed: k.max(1), got: n });
    }
    if cfg.restarts == 0 {
        return Err(Error::invalid("k-means needs at least one restart"));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for restart in 0..cfg.restarts {
        let mut rng = rng_for(seed, &format!("kmeans/{restart}"));
        let mut centers = kmeans_pp(points, k, &mut rng);
        let mut labels = vec![usize::MAX; n];
        for _ in 0..cfg.max_iterations {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let l = nearest(&centers, p).0;
                if labels[i] != l {
                    labels[i] = l;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            centers = update_centers(points, &labels, &centers);
        }
        let inertia: f64 = points.iter().zip(&labels).map(|(p, &l)| squared_distance(p, &centers[l])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    Ok(best.expect("at least one restart"))
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(center, p);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut crate::seed::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[pick]));
        }
    }
    centers
}

/// Means of assigned points; an empty cluster takes the point farthest from
/// its current center.
fn update_centers(points: &[Vec<f64>], labels: &[usize], old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let k = old.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut centers: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { s } else { s.into_iter().map(|v| v / c as f64).collect() })
        .collect();
    for c in 0..k {
        if counts[c] == 0 {
            let far = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, squared_distance(p, &old[labels[i]])))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map_or(0, |(i, _)| i);
            centers[c] = points[far].clone();
        }
    }
    centers
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::HashMap;
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ra: HashMap<usize, f64> = HashMap::new();
    let mut rb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *rb.entry(y).or_default() += 1.0;
    }
    let index: f64 = joint.values().map(|&v| choose2(v)).sum();
    let sa: f64 = ra.values().map(|&v| choose2(v)).sum();
    let sb: f64 = rb.values().map(|&v| choose2(v)).sum();
    let expected = sa * sb / choose2(n);
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
