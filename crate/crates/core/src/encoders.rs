//! Frozen vision and text encoders.
//!
//! The decoder only depends on the [`VisionEncoder`] and [`TextEncoder`]
//! traits. The toy implementations here are deterministic and have no
//! trainable state; pretrained backbones plug in behind the same traits.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ImageRgb;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("encoder {0:?} is not available in this build")]
    Unavailable(String),
}

/// Dense feature grid, row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Image pixels per feature cell along each axis.
    pub stride: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalEncoding {
    pub vector: Vec<f64>,
}

impl GoalEncoding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn cosine(&self, other: &GoalEncoding) -> f64 {
        let dot: f64 = self
            .vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| a * b)
            .sum();
        let na = self.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = other.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (na * nb)
    }
}

pub trait VisionEncoder: Send + Sync {
    fn stride(&self) -> usize;
    fn channels(&self) -> usize;
    fn encode_image(&self, image: &ImageRgb) -> FeatureGrid;
    /// Bytes that identify every parameter of the encoder; unchanged by
    /// training.
    fn state_digest(&self) -> Vec<u8>;
}

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_text(&self, prompt: &str) -> Result<GoalEncoding, EncoderError>;
    fn state_digest(&self) -> Vec<u8>;
}

/// Per-patch channel means of the image scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyVisionEncoder {
    stride: usize,
}

impl ToyVisionEncoder {
    pub const DEFAULT_STRIDE: usize = 8;

    pub fn new(stride: usize) -> Self {
        assert!(stride > 0, "stride must be positive");
        Self { stride }
    }
}

impl Default for ToyVisionEncoder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_STRIDE)
    }
}

impl VisionEncoder for ToyVisionEncoder {
    fn stride(&self) -> usize {
        self.stride
    }

    fn channels(&self) -> usize {
        3
    }

    fn encode_image(&self, image: &ImageRgb) -> FeatureGrid {
        let s = self.stride;
        let (h, w) = image.dims();
        let (gh, gw) = (h.div_ceil(s), w.div_ceil(s));
        let mut data = vec![0.0; gh * gw * 3];
        for gr in 0..gh {
            for gc in 0..gw {
                let mut acc = [0u64; 3];
                let rows = gr * s..((gr + 1) * s).min(h);
                let cols = gc * s..((gc + 1) * s).min(w);
                let n = (rows.len() * cols.len()) as f64;
                for r in rows {
                    for c in cols.clone() {
                        let px = image.get(r, c);
                        for k in 0..3 {
                            acc[k] += px[k] as u64;
                        }
                    }
                }
                let cell = &mut data[(gr * gw + gc) * 3..][..3];
                for k in 0..3 {
                    cell[k] = acc[k] as f64 / (255.0 * n);
                }
            }
        }
        FeatureGrid {
            height: gh,
            width: gw,
            channels: 3,
            stride: s,
            data,
        }
    }

    fn state_digest(&self) -> Vec<u8> {
        format!("toy-vision:stride={}", self.stride).into_bytes()
    }
}

/// Stable 64-bit FNV-1a hash used for token bucketing.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// L2-normalised hashed bag of words over lowercased whitespace tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyTextEncoder {
    dim: usize,
}

impl ToyTextEncoder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Default for ToyTextEncoder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl TextEncoder for ToyTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_text(&self, prompt: &str) -> Result<GoalEncoding, EncoderError> {
        let lower = prompt.to_lowercase();
        let mut vector = vec![0.0; self.dim];
        let mut any = false;
        for token in lower.split_whitespace() {
            vector[self.bucket(token)] += 1.0;
            any = true;
        }
        if !any {
            return Err(EncoderError::EmptyPrompt);
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        vector.iter_mut().for_each(|v| *v /= norm);
        Ok(GoalEncoding { vector })
    }

    fn state_digest(&self) -> Vec<u8> {
        format!("toy-text:fnv1a64:dim={}", self.dim).into_bytes()
    }
}

/// Which encoder family a configuration selects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    #[default]
    Toy,
    Adapter,
}

/// Settings for a pretrained backbone adapter.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub vision_model: Option<String>,
    pub text_model: Option<String>,
    pub weights: Option<PathBuf>,
    /// Backbone layer whose tokens feed the decoder.
    pub feature_layer: Option<usize>,
}

/// A vision/text encoder pair used by training and inference.
pub struct Encoders {
    pub vision: Box<dyn VisionEncoder>,
    pub text: Box<dyn TextEncoder>,
}

impl Encoders {
    pub fn toy() -> Self {
        Self {
            vision: Box::new(ToyVisionEncoder::default()),
            text: Box::new(ToyTextEncoder::default()),
        }
    }

    /// Builds the encoder pair named by `kind`. Pretrained adapters need
    /// third-party weights and are not compiled into this build.
    pub fn from_kind(kind: EncoderKind, adapter: &AdapterConfig) -> Result<Self, EncoderError> {
        match kind {
            EncoderKind::Toy => Ok(Self::toy()),
            EncoderKind::Adapter => Err(EncoderError::Unavailable(
                adapter
                    .vision_model
                    .clone()
                    .unwrap_or_else(|| "pretrained-adapter".to_string()),
            )),
        }
    }

    pub fn state_digest(&self) -> Vec<u8> {
        let mut out = self.vision.state_digest();
        out.push(0);
        out.extend(self.text.state_digest());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gray_image() {
        let img = ImageRgb::filled(32, 24, [128, 128, 128]).unwrap();
        let grid = ToyVisionEncoder::default().encode_image(&img);
        assert_eq!((grid.height, grid.width, grid.channels), (4, 3, 3));
        for v in &grid.data {
            assert!((v - 0.502).abs() < 5e-4);
            assert_eq!(*v, 128.0 / 255.0);
        }
    }

    #[test]
    fn half_black_half_white() {
        let mut img = ImageRgb::filled(16, 16, [0, 0, 0]).unwrap();
        for r in 0..16 {
            for c in 8..16 {
                img.set(r, c, [255, 255, 255]);
            }
        }
        let enc = ToyVisionEncoder::default();
        let grid = enc.encode_image(&img);
        assert_eq!((grid.height, grid.width), (2, 2));
        for r in 0..2 {
            assert_eq!(grid.at(r, 0), &[0.0, 0.0, 0.0]);
            assert_eq!(grid.at(r, 1), &[1.0, 1.0, 1.0]);
        }
        assert_eq!(grid, enc.encode_image(&img));
    }

    #[test]
    fn partial_patches_average_in_bounds_pixels() {
        let mut img = ImageRgb::filled(20, 17, [0, 0, 0]).unwrap();
        img.set(16, 16, [255, 51, 0]);
        let grid = ToyVisionEncoder::default().encode_image(&img);
        assert_eq!((grid.height, grid.width), (3, 3));
        // Last cell covers rows 16..20 and column 16 only.
        assert_eq!(grid.at(2, 2), &[0.25, 0.05, 0.0]);
    }

    #[test]
    fn grid_dims_follow_ceil_rule() {
        let enc = ToyVisionEncoder::default();
        for h in (16..=256).step_by(7) {
            for w in [16, 17, 23, 64, 129, 256] {
                let g = enc.encode_image(&ImageRgb::filled(h, w, [1, 2, 3]).unwrap());
                assert_eq!((g.height, g.width), (h.div_ceil(8), w.div_ceil(8)));
            }
        }
    }

    #[test]
    fn text_is_order_invariant_and_unit_norm() {
        let enc = ToyTextEncoder::default();
        let a = enc.encode_text("push the cup").unwrap();
        let b = enc.encode_text("cup the push").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, enc.encode_text("push the cup").unwrap());
        let n: f64 = a.vector.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(enc.encode_text("PUSH  the\tCup").unwrap(), a);
    }

    #[test]
    fn empty_prompt_rejected() {
        let enc = ToyTextEncoder::default();
        assert!(matches!(
            enc.encode_text(""),
            Err(EncoderError::EmptyPrompt)
        ));
        assert!(matches!(
            enc.encode_text(" \n "),
            Err(EncoderError::EmptyPrompt)
        ));
    }

    #[test]
    fn adapter_is_reported_unavailable() {
        let cfg = AdapterConfig {
            vision_model: Some("owlvit-base".into()),
            ..Default::default()
        };
        assert!(matches!(
            Encoders::from_kind(EncoderKind::Adapter, &cfg),
            Err(EncoderError::Unavailable(name)) if name == "owlvit-base"
        ));
    }
}
