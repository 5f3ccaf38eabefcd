//! Datasets, client partitioning, and the input-space corruption model.

mod corrupt;
mod dataset;
mod idx;
mod manifest;
mod partition;
mod synth;

pub use corrupt::{
    apply_distortion, apply_patch, corrupt_client, noisy_count, CorruptionKind, CorruptionSpec,
    DistortionKind, PatchKind, Severity,
};
pub use dataset::{ClientDataset, CorruptionRecord, Dataset, ImageShape, Quality};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels};
pub use manifest::{shard_manifest_lines, write_shard_manifest, ShardRecord};
pub use partition::{partition_dirichlet, partition_iid, DIRICHLET_MAX_RETRIES};
pub use synth::{class_template, synth_blobs};
