//! PCA embedding, spectral clustering and kNN transfer of saliency maps.

mod knn;
mod model;
mod pca;
mod spectral;

pub use knn::assign_knn;
pub use model::{ClusterConfig, ClusterModel, CLUSTER_MODEL_MAGIC, CLUSTER_MODEL_VERSION};
pub use pca::{fit_pca, fit_pca_maps, normalize_map, PcaBasis, PcaMode};
pub use spectral::{
    adjusted_rand_index, affinity, kmeans, normalized_laplacian, relabel_by_first_appearance, rms_pairwise_distance,
    spectral_cluster, squared_distance, KMeansConfig, SpectralResult,
};
