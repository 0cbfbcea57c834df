//! Dataset ingestion and preprocessing: class metadata, decoding and
//! resizing, normalization, the noise filter, augmentation, stratified
//! splitting, batching, and a synthetic dataset generator.

mod augment;
mod classes;
mod image;
mod manifest;
mod synth;

pub use augment::{augment, AugmentConfig};
pub use classes::{
    load_classes, reference_classes, validate_classes, validate_reference, ClassInfo,
    ReferenceCounts, CLASS_COUNT, HEALTHY_CLASS_COUNT, PLANT_COUNT,
};
pub use image::{
    decode_resize, decode_resize_bytes, decode_rgb, encode_png, normalize, read_rgb,
    resize_bilinear, rgb_to_tensor, validate_image, validate_image_bytes, RejectReason, Validation,
    INPUT_SIDE,
};
pub use manifest::{
    batches, load_batch, scan_manifest, split, Batch, DatasetManifest, Sample, Split,
};
pub use synth::{class_palette, generate_synthetic_dataset, render_sample};
