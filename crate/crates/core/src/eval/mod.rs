//! Clustering, probing, retrieval and generation metrics.

mod cluster;
mod export;
mod generative;
mod probes;
mod ranking;
mod zero_shot;

pub use cluster::{clustering_accuracy, hungarian, kmeans, kmeans_accuracy, KMeansConfig, KMeansResult};
pub use export::{export_embeddings, read_embeddings, write_embeddings, MetricReport};
pub use generative::{fid, inception_score, kid, mmd2_unbiased, GaussianStats};
pub use probes::{knn_accuracy, knn_predict, linear_probe_accuracy, LinearProbeConfig, LinearSvm};
pub use ranking::{mean_average_precision, mean_reciprocal_rank, topk_accuracy, RankedResult};
pub use zero_shot::{audit_leakage, zero_shot_protocol, ZeroShotConfig, ZeroShotReport};
