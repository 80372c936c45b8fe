//! 8-bit PNG previews of linear tensors (gamma 2.2, clipped to `[0, 1]`).

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scenegen::IntrinsicMap;
use crate::tensor::Tensor;

/// Gamma-encodes one linear value into an 8-bit sample.
pub fn encode_sample(linear: f32) -> u8 {
    let v = if linear.is_finite() { linear.clamp(0.0, 1.0) } else { 0.0 };
    (v.powf(1.0 / 2.2) * 255.0 + 0.5).floor() as u8
}

/// Writes an `[H, W, 1]` or `[H, W, 3]` linear tensor as an sRGB-ish PNG.
pub fn write_png(path: &Path, image: &Tensor) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || !(shape[2] == 1 || shape[2] == 3) {
        return Err(Error::Shape(format!("png preview needs [H, W, 1|3], got {shape:?}")));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image.data().iter().map(|&v| encode_sample(v)).collect();
    let to_err = |e: png::EncodingError| Error::Format {
        kind: "png",
        reason: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)?;
    Ok(())
}


/// Display version of a map: normals move from `[-1, 1]` to `[0, 1]`,
/// everything else is unchanged.
pub fn displayable(map: IntrinsicMap, t: &Tensor) -> Tensor {
    match map {
        IntrinsicMap::Normal => t.map(|v| 0.5 * v + 0.5),
        _ => t.clone(),
    }
}
