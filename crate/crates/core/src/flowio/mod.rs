//! Flow-field data model, `.flo` interchange, magnitude statistics and
//! color coding.

mod color;
mod field;
mod flo;
mod png_out;

pub use color::{colorize, distance_from_white, wheel_color, ColorImage, COLOR_WHEEL_BINS};
pub use field::{magnitude, normalize_magnitudes, FlowField, MagnitudeMap};
pub use flo::{
    decode_flo, encode_flo, read_flow_file, read_flow_file_with, write_flow_file, NonFinitePolicy, FLO_MAGIC,
};
pub use png_out::{write_gray_png, write_rgb_png};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("bad magic tag: expected {expected}, found {found}")]
    BadMagic { expected: f32, found: f32 },
    #[error("invalid dimensions {width}x{height}")]
    BadDimensions { width: i64, height: i64 },
    #[error("truncated payload: header promises {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("{extra} trailing bytes after payload")]
    TrailingData { extra: u64 },
    #[error("non-finite flow value at pixel {pixel}")]
    NonFinite { pixel: usize },
    #[error("channel length {found} does not match {width}x{height}")]
    LengthMismatch { width: usize, height: usize, found: usize },
    #[error("png encoding failed: {0}")]
    Png(String),
}
