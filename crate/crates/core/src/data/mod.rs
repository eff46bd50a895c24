//! Corpus persistence and loading: Netpbm codec, JSON-lines manifests,
//! stratified splits, standardization and batching.

mod batch;
mod manifest;
pub mod pnm;
mod split;

pub use batch::{
    batch_indices, batches, eval_view, labeled, load_images, unlabeled, Batch, EvalImages, LabeledImages, NormStats,
    UnlabeledImages, VARIANCE_FLOOR,
};
pub use manifest::{load_manifest, manifest_dir, save_manifest, Domain, Manifest, ManifestEntry};
pub use pnm::{read_image, write_image};
pub use split::{load_split, make_split, save_split, Split};
