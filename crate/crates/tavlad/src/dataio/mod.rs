//! Bit-exact file formats, dataset manifests, frame sampling, and synthetic
//! dataset generation.
//!
//! All binary formats are little-endian. Feature and attention-weight files
//! store 32-bit floats (widened to f64 on load); checkpoints store 64-bit
//! floats so training state round-trips exactly.

mod formats;
mod manifest;
mod synthetic;

pub use formats::{
    export_attention_pgm, read_attention_weights, read_checkpoint, read_features,
    write_attention_weights, write_checkpoint, write_features, CheckpointFlags, FeatureVolume,
};
pub use manifest::{Dataset, DatasetHeader, ManifestRecord, HEADER_FILE_NAME};
pub use synthetic::{gen_synthetic, read_mask, GeneratedDataset, SyntheticSpec};

/// Centered-strata frame sampling: index_j = floor((j + 0.5)·t_total / t_s)
/// for j = 0..t_s−1. Indices are non-decreasing and always in [0, t_total);
/// duplicates appear when t_total < t_s.
pub fn uniform_sample(t_total: usize, t_s: usize) -> Vec<usize> {
    assert!(t_total >= 1 && t_s >= 1, "uniform_sample needs positive sizes");
    (0..t_s)
        .map(|j| ((j as f64 + 0.5) * t_total as f64 / t_s as f64) as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_sample_identity() {
        assert_eq!(uniform_sample(25, 25), (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_sample_half() {
        let idx = uniform_sample(50, 25);
        let expect: Vec<usize> = (0..25).map(|j| 2 * j + 1).collect();
        assert_eq!(idx, expect);
    }

    #[test]
    fn uniform_sample_upsamples_with_duplicates() {
        assert_eq!(uniform_sample(3, 6), vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn uniform_sample_bounds_and_monotone() {
        for t_total in 1..20 {
            for t_s in 1..20 {
                let idx = uniform_sample(t_total, t_s);
                assert_eq!(idx.len(), t_s);
                assert!(idx.iter().all(|&i| i < t_total));
                assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
