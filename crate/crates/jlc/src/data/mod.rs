//! Dataset ingestion: manifests, splits, source mixing, aligned patches,
//! the synthetic JND proxy and image IO.

pub mod io;
pub mod manifest;
pub mod patches;
pub mod proxy;
pub mod synth;

pub use io::{load_image, save_image};
pub use manifest::{
    load_pair, mix_sources, split_manifest, DatasetManifest, ManifestEntry, SamplePair, SourceKind,
    SplitKind,
};
pub use patches::{extract_aligned_patches, PatchSpec};
pub use proxy::{synth_jnd_proxy, MAX_PROXY_LEVEL};
