//! Typed data model for images, masks, manifests, and experiment
//! configuration, plus the file formats that carry them.

mod config;
mod image;
mod manifest;
mod mask;
mod pgm;

pub use config::{BackboneScale, ExperimentConfig, SplitRatios};
pub use image::{resize_mask_nearest, Image};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, FrameRecord, Pathology};
pub use mask::{BinaryMask, ProbMask};
pub use pgm::{load_image, load_mask, save_image_u8, save_mask};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("channel error: {0}")]
    Channel(String),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
