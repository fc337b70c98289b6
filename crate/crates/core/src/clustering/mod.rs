//! Seedable K-Means and DBSCAN.

mod dbscan;
mod kmeans;

pub use dbscan::{dbscan, DbscanResult, NOISE};
pub use kmeans::{kmeans, kmeans_from_centroids, KMeansResult};
