use std::path::Path;

use serde::{Deserialize, Serialize};

use super::knn::assign_knn;
use super::pca::{fit_pca_maps, PcaBasis, PcaMode};
use super::spectral::{affinity, rms_pairwise_distance, spectral_cluster, KMeansConfig};
use crate::error::{Error, Result};
use crate::types::SaliencyMap;

pub const CLUSTER_MODEL_MAGIC: &[u8; 4] = b"RSCM";
pub const CLUSTER_MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub pca: PcaMode,
    pub q: usize,
    pub sigma: f64,
    pub knn_k: usize,
    pub seed: u64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iterations: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            pca: PcaMode::Fixed(50),
            q: 8,
            sigma: 0.2,
            knn_k: 5,
            seed: 0,
            kmeans_restarts: 10,
            kmeans_max_iterations: 300,
        }
    }
}

/// PCA basis, training embeddings and their spectral cluster ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub config: ClusterConfig,
    pub basis: PcaBasis,
    /// RMS pairwise distance of the training embeddings; divides every
    /// embedding before the Gaussian kernel.
    pub scale: f64,
    pub image_ids: Vec<String>,
    /// `f32` embeddings, one per training map.
    pub embeddings: Vec<Vec<f32>>,
    /// Cluster ids in `1..=q`, parallel to `image_ids`.
    pub labels: Vec<usize>,
    pub eigenvalues: Vec<f64>,
}

impl ClusterModel {
    pub fn fit(maps: &[SaliencyMap], cfg: &ClusterConfig) -> Result<Self> {
        if maps.len() < cfg.q {
            return Err(Error::InsufficientSamples {
                needed: cfg.q,
                got: maps.len(),
            });
        }
        let basis = fit_pca_maps(maps, cfg.pca)?;
        let embeddings: Vec<Vec<f32>> = maps
            .iter()
            .map(|m| Ok(basis.project_map(m)?.into_iter().map(|v| v as f32).collect()))
            .collect::<Result<_>>()?;
        let wide = widen(&embeddings);
        let mut scale = rms_pairwise_distance(&wide);
        if !(scale > 0.0) {
            scale = 1.0;
        }
        let scaled: Vec<Vec<f64>> = wide.iter().map(|e| e.iter().map(|v| v / scale).collect()).collect();
        let a = affinity(&scaled, cfg.sigma)?;
        let km = KMeansConfig {
            restarts: cfg.kmeans_restarts,
            max_iterations: cfg.kmeans_max_iterations,
        };
        let sc = spectral_cluster(&a, cfg.q, cfg.seed, km)?;
        Ok(Self {
            config: cfg.clone(),
            basis,
            scale,
            image_ids: maps.iter().map(|m| m.image_id.clone()).collect(),
            embeddings,
            labels: sc.labels,
            eigenvalues: sc.eigenvalues,
        })
    }

    pub fn q(&self) -> usize {
        self.config.q
    }

    /// Cluster id of an unseen map by kNN over the training embeddings.
    pub fn assign(&self, map: &SaliencyMap) -> Result<usize> {
        let e = self.embed(map)?;
        self.assign_embedding(&e, self.config.knn_k)
    }

    /// Embedding as stored for training maps (rounded to `f32`).
    pub fn embed(&self, map: &SaliencyMap) -> Result<Vec<f64>> {
        Ok(self
            .basis
            .project_map(map)?
            .into_iter()
            .map(|v| v as f32 as f64)
            .collect())
    }

    pub fn assign_embedding(&self, embedding: &[f64], k: usize) -> Result<usize> {
        assign_knn(&widen(&self.embeddings), &self.labels, embedding, k)
    }

    pub fn assignment_of(&self, image_id: &str) -> Option<usize> {
        self.image_ids.iter().position(|id| id == image_id).map(|i| self.labels[i])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            scale: self.scale,
            dim: self.basis.dim,
            len: self.basis.len,
            explained_variance_ratios: self.basis.explained_variance_ratios.clone(),
            image_ids: self.image_ids.clone(),
            assignments: self.labels.clone(),
            eigenvalues: self.eigenvalues.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CLUSTER_MODEL_MAGIC);
        out.extend_from_slice(&CLUSTER_MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let blocks = self
            .basis
            .mean
            .iter()
            .chain(&self.basis.components)
            .chain(self.embeddings.iter().flatten());
        for v in blocks {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        if bytes.len() < 10 || &bytes[..4] != CLUSTER_MODEL_MAGIC {
            return Err(bad("missing cluster model magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CLUSTER_MODEL_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CLUSTER_MODEL_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(10..10 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let h: Header = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
        if h.image_ids.len() != h.assignments.len() {
            return Err(bad("assignment count differs from image count".into()));
        }
        let n = h.image_ids.len();
        let floats = h.len + h.dim * h.len + n * h.dim;
        let data = &bytes[10 + hlen..];
        if data.len() != floats * 4 {
            return Err(bad(format!("expected {} data bytes, found {}", floats * 4, data.len())));
        }
        let mut vals = data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        let mean: Vec<f32> = vals.by_ref().take(h.len).collect();
        let components: Vec<f32> = vals.by_ref().take(h.dim * h.len).collect();
        let embeddings: Vec<Vec<f32>> = (0..n).map(|_| vals.by_ref().take(h.dim).collect()).collect();
        Ok(Self {
            basis: PcaBasis {
                mean,
                components,
                explained_variance_ratios: h.explained_variance_ratios,
                dim: h.dim,
                len: h.len,
            },
            config: h.config,
            scale: h.scale,
            image_ids: h.image_ids,
            embeddings,
            labels: h.assignments,
            eigenvalues: h.eigenvalues,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ClusterConfig,
    scale: f64,
    dim: usize,
    len: usize,
    explained_variance_ratios: Vec<f64>,
    image_ids: Vec<String>,
    assignments: Vec<usize>,
    eigenvalues: Vec<f64>,
}

fn widen(v: &[Vec<f32>]) -> Vec<Vec<f64>> {
    v.iter().map(|e| e.iter().map(|&x| x as f64).collect()).collect()
}
