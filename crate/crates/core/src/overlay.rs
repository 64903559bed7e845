//! Heatmap overlays of affordance maps on scene images.

use thiserror::Error;

use crate::dataset::{AffordanceMap, ImageRgb};

#[derive(Debug, Error, PartialEq)]
pub enum OverlayError {
    #[error("image is {image:?} but map is {map:?}")]
    DimensionMismatch {
        image: (usize, usize),
        map: (usize, usize),
    },
    #[error("opacity {0} outside [0, 1]")]
    InvalidOpacity(f64),
}

/// Colour of the map's maximum.
pub const PEAK_COLOR: [u8; 3] = [255, 0, 0];

const STOPS: [[f64; 3]; 4] = [
    [0.0, 0.0, 255.0],
    [0.0, 255.0, 255.0],
    [255.0, 255.0, 0.0],
    [255.0, 0.0, 0.0],
];

/// Blue to cyan to yellow to red, for `t` in [0, 1].
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|k| a[k] + f * (b[k] - a[k]))
}

/// Blends `image` towards the colormap of `map / max(map)`.
///
/// The per-pixel weight is `opacity * v / max`, so cold pixels keep their
/// input colour and the maximum gets the full `opacity`.
pub fn visualize_overlay(
    image: &ImageRgb,
    map: &AffordanceMap,
    opacity: f64,
) -> Result<ImageRgb, OverlayError> {
    if image.dims() != map.dims() {
        return Err(OverlayError::DimensionMismatch {
            image: image.dims(),
            map: map.dims(),
        });
    }
    if !(0.0..=1.0).contains(&opacity) {
        return Err(OverlayError::InvalidOpacity(opacity));
    }
    let mut out = image.clone();
    let max = map.max();
    if opacity == 0.0 || max <= 0.0 {
        return Ok(out);
    }
    let (h, w) = image.dims();
    for r in 0..h {
        for c in 0..w {
            let t = map.get(r, c) / max;
            let alpha = opacity * t;
            if alpha <= 0.0 {
                continue;
            }
            let heat = colormap(t);
            let px = image.get(r, c);
            let blended =
                [0, 1, 2].map(|k| ((1.0 - alpha) * px[k] as f64 + alpha * heat[k]).round() as u8);
            out.set(r, c, blended);
        }
    }
    Ok(out)
}
