//! Feature computation over precomputed embeddings and raw pixels.

mod binarize;
mod codebook;
mod color;
mod kmeans;

pub use binarize::{binarize, hamming, BinarizationThresholds};
pub use codebook::{train_codebook, train_codebook_with, Codebook, VisualToken};
pub use color::{color_signature, rgb_to_lab, SalientMask, MAX_COLOR_SAMPLES};
pub use kmeans::{kmeans, squared_distance, KMeansOutput};
