//! Image metadata and preprocessing.

mod exif;
mod preprocess;

use thiserror::Error;

pub use exif::{dms_to_decimal, read_exif, strip_gps, ExifSummary, Hemisphere};
pub use preprocess::{preprocess, PreprocessOp, JPEG_QUALITY};

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("malformed image: {0}")]
    Malformed(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("invalid preprocessing op: {0}")]
    InvalidOp(String),
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}
