//! Text-image-affordance data model shared by every stage of the pipeline.
//!
//! Rasters are stored row-major. Pixel coordinates are `(row, col)` with the
//! row axis pointing down the image; world coordinates put `x` along columns
//! and `y` along rows so that angles measured in either frame agree.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest raster side accepted for camera images.
pub const MIN_IMAGE_SIDE: usize = 16;

/// Dilation radius (Chebyshev distance, pixels) tolerated between an
/// affordance label and its object mask.
pub const SUPPORT_DILATION: usize = 2;

/// Tolerance on the unit-mass invariant of normalized affordance maps.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("affordance map has no positive entry")]
    AllZeroMap,
    #[error("invalid value {value} at index {index}: {rule}")]
    InvalidValue {
        index: usize,
        value: f64,
        rule: &'static str,
    },
    #[error("raster is {height}x{width}, minimum side is {MIN_IMAGE_SIDE}")]
    ImageTooSmall { height: usize, width: usize },
    #[error("expected {expected} values for a {height}x{width} raster, got {actual}")]
    ShapeMismatch {
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },
    #[error("pixel ({row}, {col}) outside {height}x{width} raster")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

fn check_len(
    height: usize,
    width: usize,
    channels: usize,
    actual: usize,
) -> Result<(), DatasetError> {
    let expected = height * width * channels;
    if expected != actual {
        return Err(DatasetError::ShapeMismatch {
            height,
            width,
            expected,
            actual,
        });
    }
    Ok(())
}

/// 8-bit RGB camera image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRgb {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl ImageRgb {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self, DatasetError> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(DatasetError::ImageTooSmall { height, width });
        }
        check_len(height, width, 3, pixels.len())?;
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self, DatasetError> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(height * width * 3)
            .collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Heights above the table plane in meters; the table itself is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, DatasetError> {
        check_len(height, width, 1, values.len())?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(DatasetError::InvalidValue {
                index,
                value,
                rule: "depth must be finite and non-negative",
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffordanceKind {
    Groundtruth,
    PredictedLogits,
    PredictedProbabilities,
}

/// Per-pixel affordance values. Ground-truth and probability maps are
/// distributions over pixels; logit maps are unconstrained.
#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    kind: AffordanceKind,
}

impl AffordanceMap {
    /// Wraps raw values without checking the distribution invariants; see
    /// [`AffordanceMap::invariant_violations`].
    pub fn from_raw(
        height: usize,
        width: usize,
        values: Vec<f64>,
        kind: AffordanceKind,
    ) -> Result<Self, DatasetError> {
        check_len(height, width, 1, values.len())?;
        Ok(Self {
            height,
            width,
            values,
            kind,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> AffordanceKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Global maximum; ties go to the lowest row, then the lowest column.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Maximum over pixels where `allowed` holds, with the same tie-break as
    /// [`AffordanceMap::argmax`]. `None` if no pixel is allowed.
    pub fn argmax_where(&self, allowed: impl Fn(usize, usize) -> bool) -> Option<(usize, usize)> {
        let mut best: Option<usize> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if !allowed(i / self.width, i % self.width) {
                continue;
            }
            match best {
                Some(b) if v <= self.values[b] => {}
                _ => best = Some(i),
            }
        }
        best.map(|i| (i / self.width, i % self.width))
    }

    /// Entropy of a distribution-valued map (natural log, 0·ln 0 = 0).
    pub fn entropy(&self) -> f64 {
        -self
            .values
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Rule names of violated invariants for this map's kind.
    pub fn invariant_violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.kind == AffordanceKind::PredictedLogits {
            if self.values.iter().any(|v| !v.is_finite()) {
                out.push("affordance values finite");
            }
            return out;
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            out.push("affordance values non-negative");
        }
        if (self.sum() - 1.0).abs() > MASS_TOLERANCE {
            out.push("affordance sums to 1");
        }
        out
    }
}

/// Scales a non-negative raster so that it sums to one.
pub fn normalize_affordance(
    height: usize,
    width: usize,
    raw: &[f64],
) -> Result<AffordanceMap, DatasetError> {
    check_len(height, width, 1, raw.len())?;
    if let Some((index, &value)) = raw
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(DatasetError::InvalidValue {
            index,
            value,
            rule: "affordance must be finite and non-negative",
        });
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(DatasetError::AllZeroMap);
    }
    let values = raw.iter().map(|v| v / total).collect();
    Ok(AffordanceMap {
        height,
        width,
        values,
        kind: AffordanceKind::Groundtruth,
    })
}

/// Binary object mask with its category label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    category: String,
}

impl ObjectMask {
    pub fn new(
        height: usize,
        width: usize,
        bits: Vec<bool>,
        category: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        check_len(height, width, 1, bits.len())?;
        Ok(Self {
            height,
            width,
            bits,
            category: category.into(),
        })
    }

    pub fn empty(height: usize, width: usize, category: impl Into<String>) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
            category: category.into(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.width + col] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Foreground pixels as `(row, col)` pairs in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i / self.width, i % self.width))
    }

    /// Mean foreground coordinate `(row, col)`.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
        for (r, c) in self.pixels() {
            sr += r as f64;
            sc += c as f64;
            n += 1;
        }
        (n > 0).then(|| (sr / n as f64, sc / n as f64))
    }

    /// Axis-aligned `(row_min, col_min, row_max, col_max)`, inclusive.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut it = self.pixels();
        let (r0, c0) = it.next()?;
        Some(it.fold((r0, c0, r0, c0), |(a, b, c, d), (r, col)| {
            (a.min(r), b.min(col), c.max(r), d.max(col))
        }))
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> ObjectMask {
        let (h, w) = (self.height, self.width);
        // Separable max filter: rows, then columns.
        let mut horiz = vec![false; h * w];
        for r in 0..h {
            for c in 0..w {
                if self.bits[r * w + c] {
                    let lo = c.saturating_sub(radius);
                    let hi = (c + radius).min(w - 1);
                    for cc in lo..=hi {
                        horiz[r * w + cc] = true;
                    }
                }
            }
        }
        let mut out = vec![false; h * w];
        for r in 0..h {
            for c in 0..w {
                if horiz[r * w + c] {
                    let lo = r.saturating_sub(radius);
                    let hi = (r + radius).min(h - 1);
                    for rr in lo..=hi {
                        out[rr * w + c] = true;
                    }
                }
            }
        }
        ObjectMask {
            height: h,
            width: w,
            bits: out,
            category: self.category.clone(),
        }
    }

    /// Intersection over union with another mask of the same shape.
    pub fn iou(&self, other: &ObjectMask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Top-down orthographic camera: `fx`, `fy` are pixels per meter along the
/// column and row axes, `(cx, cy)` is the pixel above the world origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub table_height: f64,
}

impl CameraModel {
    pub fn validate(&self, height: usize, width: usize) -> Result<(), DatasetError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(DatasetError::InvalidCamera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0..width as f64).contains(&self.cx) || !(0.0..height as f64).contains(&self.cy) {
            return Err(DatasetError::InvalidCamera(format!(
                "principal point ({}, {}) outside {height}x{width} frame",
                self.cy, self.cx
            )));
        }
        Ok(())
    }

    /// Camera centred on a `height`x`width` frame at `pixels_per_meter`.
    pub fn centered(height: usize, width: usize, pixels_per_meter: f64) -> Self {
        Self {
            fx: pixels_per_meter,
            fy: pixels_per_meter,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            table_height: 0.0,
        }
    }

    /// World point of a continuous pixel coordinate at height `h`.
    pub fn unproject(&self, row: f64, col: f64, h: f64) -> [f64; 3] {
        [(col - self.cx) / self.fx, (row - self.cy) / self.fy, h]
    }

    /// Continuous `(row, col)` of a world point.
    pub fn project(&self, point: [f64; 3]) -> (f64, f64) {
        (point[1] * self.fy + self.cy, point[0] * self.fx + self.cx)
    }
}

/// World position of a pixel, using the depth map for the height.
pub fn pixel_to_world(
    pixel: (usize, usize),
    depth: &DepthMap,
    camera: &CameraModel,
) -> Result<[f64; 3], DatasetError> {
    let (row, col) = pixel;
    let (height, width) = depth.dims();
    if row >= height || col >= width {
        return Err(DatasetError::OutOfBounds {
            row,
            col,
            height,
            width,
        });
    }
    let h = depth.get(row, col);
    Ok(camera.unproject(row as f64, col as f64, h))
}

/// Continuous pixel coordinate of a world point; inverse of [`pixel_to_world`].
pub fn world_to_pixel(point: [f64; 3], camera: &CameraModel) -> (f64, f64) {
    camera.project(point)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    HumanLabeled,
    Rotated,
    Inpainted,
    Paraphrased,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Seen,
    Unseen,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::HumanLabeled => "human-labeled",
            Provenance::Rotated => "rotated",
            Provenance::Inpainted => "inpainted",
            Provenance::Paraphrased => "paraphrased",
        })
    }
}

/// One text-image-affordance triple.
#[derive(Clone, Debug, PartialEq)]
pub struct InstructionSample {
    pub id: String,
    pub instruction: String,
    pub image: ImageRgb,
    pub affordance: AffordanceMap,
    pub mask: ObjectMask,
    pub depth: Option<DepthMap>,
    pub provenance: Provenance,
    pub split: Split,
    /// Procedural shape the object was rendered from, when known.
    pub shape_id: Option<String>,
    /// Sample this one was derived from by augmentation.
    pub parent: Option<String>,
}

impl InstructionSample {
    pub fn category(&self) -> &str {
        self.mask.category()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<InstructionSample>,
}

impl Dataset {
    pub fn new(samples: Vec<InstructionSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.category()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Lists every broken sample invariant. An empty report means the sample is
/// well formed.
pub fn validate_sample(sample: &InstructionSample) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut flag = |field, rule| report.push(Violation { field, rule });

    if sample.instruction.trim().is_empty() {
        flag("instruction", "instruction non-empty");
    }
    let dims = sample.image.dims();
    let raster_ok_aff = sample.affordance.dims() == dims;
    let raster_ok_mask = sample.mask.dims() == dims;
    if !raster_ok_aff {
        flag("affordance", "raster dims match image");
    }
    if !raster_ok_mask {
        flag("mask", "raster dims match image");
    }
    if let Some(depth) = &sample.depth {
        if depth.dims() != dims {
            flag("depth", "raster dims match image");
        }
    }
    if sample.affordance.kind() != AffordanceKind::Groundtruth {
        flag("affordance", "affordance kind is groundtruth");
    }
    for rule in sample.affordance.invariant_violations() {
        flag("affordance", rule);
    }
    if sample.mask.is_empty() {
        flag("mask", "mask non-empty");
    }
    if sample.mask.category().trim().is_empty() {
        flag("mask", "category non-empty");
    }
    if raster_ok_aff && raster_ok_mask {
        let band = sample.mask.dilate(SUPPORT_DILATION);
        let outside = sample
            .affordance
            .values()
            .iter()
            .zip(band.bits())
            .any(|(v, inside)| *v > 0.0 && !inside);
        if outside {
            flag("affordance", "affordance support within dilated mask");
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize) -> InstructionSample {
        let mut mask = ObjectMask::empty(h, w, "cup");
        for r in 4..10 {
            for c in 4..10 {
                mask.set(r, c, true);
            }
        }
        let mut raw = vec![0.0; h * w];
        raw[6 * w + 6] = 3.0;
        raw[7 * w + 7] = 1.0;
        InstructionSample {
            id: "s0".into(),
            instruction: "pick up the cup".into(),
            image: ImageRgb::filled(h, w, [10, 20, 30]).unwrap(),
            affordance: normalize_affordance(h, w, &raw).unwrap(),
            mask,
            depth: Some(DepthMap::zeros(h, w)),
            provenance: Provenance::HumanLabeled,
            split: Split::Seen,
            shape_id: None,
            parent: None,
        }
    }

    #[test]
    fn normalize_uniform_and_single_support() {
        let m = normalize_affordance(2, 2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.values(), &[0.25, 0.25, 0.25, 0.25]);
        let m = normalize_affordance(2, 2, &[2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.values(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.kind(), AffordanceKind::Groundtruth);
    }

    #[test]
    fn normalize_rejects_zero_and_negative() {
        assert!(matches!(
            normalize_affordance(2, 2, &[0.0; 4]),
            Err(DatasetError::AllZeroMap)
        ));
        assert!(matches!(
            normalize_affordance(2, 2, &[1.0, -1.0, 0.0, 0.0]),
            Err(DatasetError::InvalidValue { index: 1, .. })
        ));
    }

    #[test]
    fn image_minimum_side() {
        assert!(matches!(
            ImageRgb::filled(8, 32, [0, 0, 0]),
            Err(DatasetError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn well_formed_sample_has_empty_report() {
        assert!(validate_sample(&sample(16, 16)).is_empty());
    }

    #[test]
    fn empty_instruction_is_flagged() {
        let mut s = sample(16, 16);
        s.instruction = "  ".into();
        let report = validate_sample(&s);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].field, "instruction");
        assert_eq!(report[0].rule, "instruction non-empty");
    }

    #[test]
    fn support_outside_dilated_mask_is_flagged() {
        let mut s = sample(16, 16);
        // Chebyshev distance 2 from the mask: tolerated.
        let mut raw = vec![0.0; 256];
        raw[11 * 16 + 11] = 1.0;
        s.affordance = normalize_affordance(16, 16, &raw).unwrap();
        assert!(validate_sample(&s).is_empty());
        // Distance 3: outside the band.
        raw[12 * 16 + 5] = 1.0;
        s.affordance = normalize_affordance(16, 16, &raw).unwrap();
        let report = validate_sample(&s);
        assert!(report
            .iter()
            .any(|v| v.rule == "affordance support within dilated mask"));
    }

    #[test]
    fn support_containment_matches_brute_force() {
        // Brute force: a pixel is in the band iff some mask pixel lies within
        // Chebyshev distance 2.
        let s = sample(16, 16);
        let band = s.mask.dilate(SUPPORT_DILATION);
        for r in 0..16i64 {
            for c in 0..16i64 {
                let near = s
                    .mask
                    .pixels()
                    .any(|(mr, mc)| (mr as i64 - r).abs() <= 2 && (mc as i64 - c).abs() <= 2);
                assert_eq!(band.get(r as usize, c as usize), near, "({r},{c})");
            }
        }
    }

    #[test]
    fn mismatched_rasters_and_empty_mask() {
        let mut s = sample(16, 16);
        s.mask = ObjectMask::empty(16, 16, "cup");
        s.depth = Some(DepthMap::zeros(17, 16));
        let rules: Vec<_> = validate_sample(&s)
            .into_iter()
            .map(|v| (v.field, v.rule))
            .collect();
        assert!(rules.contains(&("mask", "mask non-empty")));
        assert!(rules.contains(&("depth", "raster dims match image")));
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let cam = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            table_height: 0.0,
        };
        let mut depth = DepthMap::zeros(100, 100);
        depth.set(50, 50, 0.37);
        depth.set(50, 60, 1.0);
        assert_eq!(
            pixel_to_world((50, 50), &depth, &cam).unwrap(),
            [0.0, 0.0, 0.37]
        );
        let p = pixel_to_world((50, 60), &depth, &cam).unwrap();
        assert!((p[0] - 0.1).abs() < 1e-12 && p[1].abs() < 1e-12 && p[2] == 1.0);
        assert!(matches!(
            pixel_to_world((100, 0), &depth, &cam),
            Err(DatasetError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn camera_validation() {
        assert!(CameraModel::centered(64, 64, 160.0)
            .validate(64, 64)
            .is_ok());
        let mut cam = CameraModel::centered(64, 64, 160.0);
        cam.cx = 64.0;
        assert!(cam.validate(64, 64).is_err());
        cam.cx = 3.0;
        cam.fy = 0.0;
        assert!(cam.validate(64, 64).is_err());
    }

    #[test]
    fn argmax_tie_breaks_low_row_then_col() {
        let m =
            AffordanceMap::from_raw(2, 2, vec![0.25; 4], AffordanceKind::PredictedProbabilities)
                .unwrap();
        assert_eq!(m.argmax(), (0, 0));
        let m = AffordanceMap::from_raw(
            2,
            2,
            vec![0.1, 0.4, 0.4, 0.1],
            AffordanceKind::PredictedProbabilities,
        )
        .unwrap();
        assert_eq!(m.argmax(), (0, 1));
        assert_eq!(m.argmax_where(|r, _| r == 1), Some((1, 0)));
    }
}
