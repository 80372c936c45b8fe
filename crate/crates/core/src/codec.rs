//! Lossless patch codec between pixel space and the 16-channel latent.
//!
//! Each 2x2 pixel patch is flattened (space-to-depth) into 12 channels in
//! `(dy, dx, rgb)` order; channels 12..16 are zero padding so the latent
//! keeps a width of 16. The codec is linear and `decode(encode(x)) == x`
//! bit-for-bit.

use crate::error::{Error, Result};
use crate::scenegen::IntrinsicMap;
use crate::tensor::Tensor;

pub const PATCH_SIZE: usize = 2;
pub const LATENT_CHANNELS: usize = 16;
pub const SOURCE_CHANNELS: usize = 3;
const USED: usize = PATCH_SIZE * PATCH_SIZE * SOURCE_CHANNELS;

/// A `[H/ps, W/ps, 16]` latent.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    data: Tensor,
}

impl LatentTensor {
    pub fn new(data: Tensor) -> Result<Self> {
        let s = data.shape();
        if s.len() != 3 || s[2] != LATENT_CHANNELS || s[0] == 0 || s[1] == 0 {
            return Err(Error::Shape(format!(
                "latent must be [h, w, {LATENT_CHANNELS}], got {s:?}"
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: Tensor::zeros(&[rows, cols, LATENT_CHANNELS]),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn patch_size(&self) -> usize {
        PATCH_SIZE
    }

    /// Pixel-space `(height, width)` this latent decodes to.
    pub fn image_size(&self) -> (usize, usize) {
        (self.rows() * PATCH_SIZE, self.cols() * PATCH_SIZE)
    }
}

/// Space-to-depth of a `[H, W, 3]` image.
pub fn encode(pixels: &Tensor) -> Result<LatentTensor> {
    let s = pixels.shape();
    if s.len() != 3 || s[2] != SOURCE_CHANNELS {
        return Err(Error::Shape(format!("encode expects [H, W, 3], got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    if h == 0 || w == 0 || h % PATCH_SIZE != 0 || w % PATCH_SIZE != 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} not divisible by patch size {PATCH_SIZE}"
        )));
    }
    let (lh, lw) = (h / PATCH_SIZE, w / PATCH_SIZE);
    let src = pixels.data();
    let mut out = vec![0.0f32; lh * lw * LATENT_CHANNELS];
    for i in 0..lh {
        for j in 0..lw {
            let base = (i * lw + j) * LATENT_CHANNELS;
            for dy in 0..PATCH_SIZE {
                for dx in 0..PATCH_SIZE {
                    let p = ((i * PATCH_SIZE + dy) * w + j * PATCH_SIZE + dx) * 3;
                    let ch = (dy * PATCH_SIZE + dx) * 3;
                    out[base + ch..base + ch + 3].copy_from_slice(&src[p..p + 3]);
                }
            }
        }
    }
    LatentTensor::new(Tensor::new(vec![lh, lw, LATENT_CHANNELS], out)?)
}

/// Depth-to-space of the first 12 channels; padding channels are ignored.
pub fn decode(latent: &LatentTensor) -> Result<Tensor> {
    let (lh, lw) = (latent.rows(), latent.cols());
    let (h, w) = latent.image_size();
    let src = latent.tensor().data();
    let mut out = vec![0.0f32; h * w * 3];
    for i in 0..lh {
        for j in 0..lw {
            let base = (i * lw + j) * LATENT_CHANNELS;
            for dy in 0..PATCH_SIZE {
                for dx in 0..PATCH_SIZE {
                    let p = ((i * PATCH_SIZE + dy) * w + j * PATCH_SIZE + dx) * 3;
                    let ch = (dy * PATCH_SIZE + dx) * 3;
                    out[p..p + 3].copy_from_slice(&src[base + ch..base + ch + 3]);
                }
            }
        }
    }
    debug_assert_eq!(USED, 12);
    Tensor::new(vec![h, w, 3], out)
}

/// `(n + 1) / 2`: unit normals into `[0, 1]`.
pub fn remap_normal(n: &Tensor) -> Tensor {
    n.map(|v| (v + 1.0) * 0.5)
}

/// Inverse of [`remap_normal`].
pub fn unremap_normal(n: &Tensor) -> Tensor {
    n.map(|v| v * 2.0 - 1.0)
}

fn to_three_channels(map: &Tensor) -> Result<Tensor> {
    let s = map.shape();
    match s {
        [_, _, 3] => Ok(map.clone()),
        [h, w, 1] => {
            let data = map.data().iter().flat_map(|&v| [v, v, v]).collect();
            Tensor::new(vec![*h, *w, 3], data)
        }
        _ => Err(Error::Shape(format!("map must be [H, W, 1|3], got {s:?}"))),
    }
}

/// Encodes an intrinsic map: single-channel maps are replicated to three
/// channels and normals are remapped to `[0, 1]` first.
pub fn encode_map(map: &Tensor, kind: IntrinsicMap) -> Result<LatentTensor> {
    if map.shape().len() != 3 || map.shape()[2] != kind.channels() {
        return Err(Error::Shape(format!(
            "{kind} map must have {} channels, got {:?}",
            kind.channels(),
            map.shape()
        )));
    }
    let three = to_three_channels(map)?;
    match kind {
        IntrinsicMap::Normal => encode(&remap_normal(&three)),
        _ => encode(&three),
    }
}

/// Decodes a map latent back to the map's native channel count: normals
/// are un-remapped, single-channel maps are the mean of the three channels.
pub fn decode_map(latent: &LatentTensor, kind: IntrinsicMap) -> Result<Tensor> {
    let rgb = decode(latent)?;
    match kind {
        IntrinsicMap::Normal => Ok(unremap_normal(&rgb)),
        IntrinsicMap::Roughness | IntrinsicMap::Metallic => {
            let (h, w) = (rgb.shape()[0], rgb.shape()[1]);
            let data = rgb
                .data()
                .chunks(3)
                .map(|p| (p[0] + p[1] + p[2]) / 3.0)
                .collect();
            Tensor::new(vec![h, w, 1], data)
        }
        _ => Ok(rgb),
    }
}
