use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::{ColorImage, FlowError, MagnitudeMap};

fn encode(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<(), FlowError> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| FlowError::Png(e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| FlowError::Png(e.to_string()))?;
    writer.finish().map_err(|e| FlowError::Png(e.to_string()))
}

/// 8-bit RGB PNG, no alpha.
pub fn write_rgb_png(img: &ColorImage, path: impl AsRef<Path>) -> Result<(), FlowError> {
    let data: Vec<u8> = img.rgb.iter().flatten().copied().collect();
    encode(path.as_ref(), img.width, img.height, png::ColorType::Rgb, &data)
}

/// 8-bit grayscale PNG of a magnitude map (see [`MagnitudeMap::to_gray8`]).
pub fn write_gray_png(map: &MagnitudeMap, path: impl AsRef<Path>) -> Result<(), FlowError> {
    encode(
        path.as_ref(),
        map.width(),
        map.height(),
        png::ColorType::Grayscale,
        &map.to_gray8(),
    )
}
