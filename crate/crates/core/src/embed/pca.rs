use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SaliencyMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaMode {
    Fixed(usize),
    /// Smallest dimension whose cumulative explained variance reaches the
    /// target fraction.
    VarianceTarget(f64),
}

impl Default for PcaMode {
    fn default() -> Self {
        PcaMode::Fixed(50)
    }
}

/// Principal axes of a set of vectors. Mean and components are stored as
/// `f32` so saved models reproduce projections bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f32>,
    /// `dim × len` row-major, rows orthonormal.
    pub components: Vec<f32>,
    pub explained_variance_ratios: Vec<f64>,
    pub dim: usize,
    pub len: usize,
}

/// Min-max scale a map to `[0, 1]`; constant maps become all zeros.
pub fn normalize_map(map: &SaliencyMap) -> Vec<f64> {
    let (lo, hi) = (map.min() as f64, map.max() as f64);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; map.values.len()];
    }
    map.values.iter().map(|&v| (v as f64 - lo) / range).collect()
}

/// Mean-centred PCA through a thin SVD of the data matrix.
pub fn fit_pca(vectors: &[Vec<f64>], mode: PcaMode) -> Result<PcaBasis> {
    let n = vectors.len();
    let len = vectors.first().map_or(0, Vec::len);
    if let Some(bad) = vectors.iter().find(|v| v.len() != len) {
        return Err(Error::ShapeMismatch {
            expected: format!("vectors of length {len}"),
            got: bad.len().to_string(),
        });
    }
    let needed = match mode {
        PcaMode::Fixed(dim) => {
            if dim == 0 {
                return Err(Error::invalid("PCA dimension must be positive"));
            }
            if dim > len {
                return Err(Error::invalid(format!("PCA dimension {dim} exceeds vector length {len}")));
            }
            dim + 1
        }
        PcaMode::VarianceTarget(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid("variance target must lie in (0, 1]"));
            }
            2
        }
    };
    if n < needed {
        return Err(Error::InsufficientSamples { needed, got: n });
    }
    let mut mean = vec![0.0f64; len];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let x = DMatrix::from_fn(n, len, |i, j| vectors[i][j] - mean[j]);
    let svd = x.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let var: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = var.iter().sum();
    let ratios: Vec<f64> = var.iter().map(|&v| if total > 0.0 { v / total } else { 0.0 }).collect();
    let dim = match mode {
        PcaMode::Fixed(dim) => dim,
        PcaMode::VarianceTarget(f) => {
            let mut acc = 0.0;
            let mut k = 0;
            while k < ratios.len() && acc < f - 1e-12 {
                acc += ratios[k];
                k += 1;
            }
            k.clamp(1, n - 1)
        }
    };
    if dim > order.len() {
        return Err(Error::InsufficientSamples { needed: dim + 1, got: n });
    }
    let mut components = Vec::with_capacity(dim * len);
    for &idx in &order[..dim] {
        let row: Vec<f64> = vt.row(idx).iter().copied().collect();
        // sign convention: largest-magnitude entry is positive
        let pivot = row.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(row.iter().map(|&v| (v * sign) as f32));
    }
    Ok(PcaBasis {
        mean: mean.iter().map(|&m| m as f32).collect(),
        components,
        explained_variance_ratios: ratios[..dim].to_vec(),
        dim,
        len,
    })
}

/// PCA over min-max normalized maps; all maps must share dimensions.
pub fn fit_pca_maps(maps: &[SaliencyMap], mode: PcaMode) -> Result<PcaBasis> {
    if let Some(first) = maps.first() {
        if let Some(bad) = maps.iter().find(|m| (m.height, m.width) != (first.height, first.width)) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} map", first.height, first.width),
                got: format!("{}x{} map {}", bad.height, bad.width, bad.image_id),
            });
        }
    }
    let vectors: Vec<Vec<f64>> = maps.iter().map(normalize_map).collect();
    fit_pca(&vectors, mode)
}

impl PcaBasis {
    pub fn component(&self, k: usize) -> &[f32] {
        &self.components[k * self.len..(k + 1) * self.len]
    }

    /// `components × (v − mean)`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.len {
            return Err(Error::ShapeMismatch {
                expected: format!("vector of length {}", self.len),
                got: v.len().to_string(),
            });
        }
        let centred: Vec<f64> = v.iter().zip(&self.mean).map(|(&x, &m)| x - m as f64).collect();
        Ok((0..self.dim)
            .map(|k| self.component(k).iter().zip(&centred).map(|(&c, &x)| c as f64 * x).sum())
            .collect())
    }

    pub fn project_map(&self, map: &SaliencyMap) -> Result<Vec<f64>> {
        self.project(&normalize_map(map))
    }

    pub fn reconstruct(&self, embedding: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.mean.iter().map(|&m| m as f64).collect();
        for (k, &e) in embedding.iter().enumerate().take(self.dim) {
            for (o, &c) in out.iter_mut().zip(self.component(k)) {
                *o += e * c as f64;
            }
        }
        out
    }
}
