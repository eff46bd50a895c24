//! Synthetic authentic and forged images.

pub mod base;
pub mod copy_move;
pub mod dataset;
pub mod image;
pub mod inpaint;
pub mod provenance;
pub mod transform;

pub use base::{gen_base_image, gen_base_scene, Scene};
pub use copy_move::{apply_copy_move, make_copy_move, ForgedSample, PLACEMENT_ATTEMPTS};
pub use dataset::{bounding_box, make_removal, replay, synthesize_dataset, write_corpus, ModeMix, SynthConfig};
pub use image::{to_byte, Image, Mask};
pub use inpaint::{inpaint_remove, InpaintConfig};
pub use provenance::{ForgeryMode, Provenance, Rect, RegionSpec, TransformParams};
pub use transform::{transform_patch, TransformedPatch};
