//! JSON-lines manifest with lossless PNG raster assets.
//!
//! Each manifest line is one sample record. Raster paths are relative to the
//! manifest's directory. Affordance maps are stored as 16-bit grayscale with
//! `value = round(65535 * p / p_max)` and `p_max` kept in the record; depth is
//! stored as 16-bit tenths of a millimetre.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    AffordanceKind, AffordanceMap, Dataset, DatasetError, DepthMap, ImageRgb, InstructionSample,
    ObjectMask, Provenance, Split,
};

/// Directory (relative to the manifest) that holds raster assets.
pub const ASSET_DIR: &str = "assets";

const DEPTH_STEPS_PER_METER: f64 = 10_000.0;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("missing asset {0}")]
    MissingAsset(PathBuf),
    #[error("cannot decode asset {path}: {message}")]
    BadAsset { path: PathBuf, message: String },
    #[error("cannot encode sample {id}: {message}")]
    Encode { id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub instruction: String,
    pub image_path: String,
    pub affordance_path: String,
    /// Largest affordance probability; the 16-bit value 65535 maps to it.
    pub affordance_scale: f64,
    pub mask_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
    pub category: String,
    pub provenance: Provenance,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

fn asset_stem(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:05}_{clean}")
}

fn encode_err(id: &str, message: impl ToString) -> ManifestError {
    ManifestError::Encode {
        id: id.to_string(),
        message: message.to_string(),
    }
}

/// Writes the manifest at `path` and its assets under `path/../assets/`.
pub fn save_manifest(dataset: &Dataset, path: &Path) -> Result<(), ManifestError> {
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(root.join(ASSET_DIR))?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    for (index, sample) in dataset.samples.iter().enumerate() {
        let record = write_assets(root, index, sample)?;
        let line = serde_json::to_string(&record).map_err(|e| encode_err(&sample.id, e))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn write_assets(
    root: &Path,
    index: usize,
    sample: &InstructionSample,
) -> Result<ManifestRecord, ManifestError> {
    let stem = asset_stem(index, &sample.id);
    let rel = |suffix: &str| format!("{ASSET_DIR}/{stem}.{suffix}.png");
    let id = sample.id.as_str();

    let (h, w) = sample.image.dims();
    let rgb = RgbImage::from_raw(w as u32, h as u32, sample.image.pixels().to_vec())
        .ok_or_else(|| encode_err(id, "image buffer size"))?;
    let image_path = rel("rgb");
    rgb.save(root.join(&image_path))
        .map_err(|e| encode_err(id, e))?;

    let (mh, mw) = sample.mask.dims();
    let mask_px = sample
        .mask
        .bits()
        .iter()
        .map(|b| if *b { 255 } else { 0 })
        .collect();
    let mask = GrayImage::from_raw(mw as u32, mh as u32, mask_px)
        .ok_or_else(|| encode_err(id, "mask buffer size"))?;
    let mask_path = rel("mask");
    mask.save(root.join(&mask_path))
        .map_err(|e| encode_err(id, e))?;

    let (ah, aw) = sample.affordance.dims();
    let scale = sample.affordance.max();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(encode_err(id, "affordance map has no positive entry"));
    }
    let aff_px: Vec<u16> = sample
        .affordance
        .values()
        .iter()
        .map(|p| (65535.0 * p / scale).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let aff: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(aw as u32, ah as u32, aff_px)
        .ok_or_else(|| encode_err(id, "affordance buffer size"))?;
    let affordance_path = rel("aff");
    aff.save(root.join(&affordance_path))
        .map_err(|e| encode_err(id, e))?;

    let depth_path = match &sample.depth {
        None => None,
        Some(depth) => {
            let (dh, dw) = depth.dims();
            let mut px = Vec::with_capacity(dh * dw);
            for &v in depth.values() {
                let q = (v * DEPTH_STEPS_PER_METER).round();
                if q > u16::MAX as f64 {
                    return Err(encode_err(id, format!("depth {v} m exceeds 16-bit range")));
                }
                px.push(q as u16);
            }
            let img: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(dw as u32, dh as u32, px)
                    .ok_or_else(|| encode_err(id, "depth buffer size"))?;
            let p = rel("depth");
            img.save(root.join(&p)).map_err(|e| encode_err(id, e))?;
            Some(p)
        }
    };

    Ok(ManifestRecord {
        id: sample.id.clone(),
        instruction: sample.instruction.clone(),
        image_path,
        affordance_path,
        affordance_scale: scale,
        mask_path,
        depth_path,
        category: sample.mask.category().to_string(),
        provenance: sample.provenance,
        split: sample.split,
        shape_id: sample.shape_id.clone(),
        parent: sample.parent.clone(),
    })
}

/// Reads a PNG (or any decodable image) as 8-bit RGB.
pub fn read_rgb_png(path: &Path) -> Result<ImageRgb, ManifestError> {
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let rgb = open_asset(root, &name)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    ImageRgb::new(h, w, rgb.into_raw()).map_err(|e| ManifestError::BadAsset {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_rgb_png(image: &ImageRgb, path: &Path) -> Result<(), ManifestError> {
    let (h, w) = image.dims();
    let name = path.display().to_string();
    let rgb = RgbImage::from_raw(w as u32, h as u32, image.pixels().to_vec())
        .ok_or_else(|| encode_err(&name, "image buffer size"))?;
    rgb.save(path).map_err(|e| encode_err(&name, e))
}

/// Reads every record of the manifest at `path`, without loading rasters.
pub fn read_records(path: &Path) -> Result<Vec<ManifestRecord>, ManifestError> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Loads a manifest and all referenced rasters.
pub fn load_manifest(path: &Path) -> Result<Dataset, ManifestError> {
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let records = read_records(path)?;
    let mut samples = Vec::with_capacity(records.len());
    for (i, record) in records.into_iter().enumerate() {
        samples.push(read_sample(root, record).map_err(|e| match e {
            // Raster-level shape problems are reported against the record line.
            ManifestError::BadAsset {
                path: asset,
                message,
            } => ManifestError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("{}: {message}", asset.display()),
            },
            other => other,
        })?);
    }
    Ok(Dataset::new(samples))
}

fn open_asset(root: &Path, rel: &str) -> Result<image::DynamicImage, ManifestError> {
    let full = root.join(rel);
    if !full.is_file() {
        return Err(ManifestError::MissingAsset(full));
    }
    image::open(&full).map_err(|e| ManifestError::BadAsset {
        path: full,
        message: e.to_string(),
    })
}

fn bad(rel: &str, err: DatasetError) -> ManifestError {
    ManifestError::BadAsset {
        path: PathBuf::from(rel),
        message: err.to_string(),
    }
}

fn read_sample(root: &Path, record: ManifestRecord) -> Result<InstructionSample, ManifestError> {
    let rgb = open_asset(root, &record.image_path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let image = ImageRgb::new(h, w, rgb.into_raw()).map_err(|e| bad(&record.image_path, e))?;

    let gray = open_asset(root, &record.mask_path)?.to_luma8();
    let (mw, mh) = (gray.width() as usize, gray.height() as usize);
    let bits = gray.into_raw().into_iter().map(|v| v >= 128).collect();
    let mask = ObjectMask::new(mh, mw, bits, record.category.clone())
        .map_err(|e| bad(&record.mask_path, e))?;

    let aff = open_asset(root, &record.affordance_path)?.to_luma16();
    let (aw, ah) = (aff.width() as usize, aff.height() as usize);
    let raw: Vec<f64> = aff
        .into_raw()
        .into_iter()
        .map(|v| v as f64 * record.affordance_scale / 65535.0)
        .collect();
    let total: f64 = raw.iter().sum();
    let values = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        raw
    };
    let affordance = AffordanceMap::from_raw(ah, aw, values, AffordanceKind::Groundtruth)
        .map_err(|e| bad(&record.affordance_path, e))?;

    let depth = match &record.depth_path {
        None => None,
        Some(rel) => {
            let img = open_asset(root, rel)?.to_luma16();
            let (dw, dh) = (img.width() as usize, img.height() as usize);
            let values = img
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / DEPTH_STEPS_PER_METER)
                .collect();
            Some(DepthMap::new(dh, dw, values).map_err(|e| bad(rel, e))?)
        }
    };

    Ok(InstructionSample {
        id: record.id,
        instruction: record.instruction,
        image,
        affordance,
        mask,
        depth,
        provenance: record.provenance,
        split: record.split,
        shape_id: record.shape_id,
        parent: record.parent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::normalize_affordance;

    fn sample(
        id: &str,
        provenance: Provenance,
        split: Split,
        with_depth: bool,
    ) -> InstructionSample {
        let (h, w) = (16, 20);
        let mut mask = ObjectMask::empty(h, w, format!("{id}-cat"));
        let mut raw = vec![0.0; h * w];
        let mut depth = DepthMap::zeros(h, w);
        for r in 3..9 {
            for c in 5..12 {
                mask.set(r, c, true);
                raw[r * w + c] = ((r * 7 + c * 3) % 11) as f64 + 0.5;
                depth.set(r, c, 0.0525);
            }
        }
        let pixels = (0..h * w * 3).map(|i| (i * 37 % 251) as u8).collect();
        InstructionSample {
            id: id.into(),
            instruction: format!("pick up the {id}"),
            image: ImageRgb::new(h, w, pixels).unwrap(),
            affordance: normalize_affordance(h, w, &raw).unwrap(),
            mask,
            depth: with_depth.then_some(depth),
            provenance,
            split,
            shape_id: Some("mug/0".into()),
            parent: (provenance != Provenance::HumanLabeled).then(|| "root".to_string()),
        }
    }

    fn assert_equivalent(a: &InstructionSample, b: &InstructionSample) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.instruction, b.instruction);
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.provenance, b.provenance);
        assert_eq!(a.split, b.split);
        assert_eq!(a.shape_id, b.shape_id);
        assert_eq!(a.parent, b.parent);
        let tol = a.affordance.max() / 65535.0;
        for (x, y) in a.affordance.values().iter().zip(b.affordance.values()) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn round_trip_three_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let ds = Dataset::new(vec![
            sample("a", Provenance::HumanLabeled, Split::Seen, true),
            sample("b/r1", Provenance::Rotated, Split::Seen, false),
            sample("c", Provenance::Paraphrased, Split::Unseen, true),
        ]);
        save_manifest(&ds, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in ds.samples.iter().zip(&loaded.samples) {
            assert_equivalent(a, b);
        }
        // Once quantized, another save cycle reproduces the raster assets.
        let path2 = dir.path().join("again").join("manifest.jsonl");
        fs::create_dir_all(path2.parent().unwrap()).unwrap();
        save_manifest(&loaded, &path2).unwrap();
        let first = read_records(&path).unwrap();
        let second = read_records(&path2).unwrap();
        for (a, b) in first.iter().zip(&second) {
            for (pa, pb) in [
                (&a.image_path, &b.image_path),
                (&a.affordance_path, &b.affordance_path),
                (&a.mask_path, &b.mask_path),
            ] {
                let da = fs::read(dir.path().join(pa)).unwrap();
                let db = fs::read(path2.parent().unwrap().join(pb)).unwrap();
                assert_eq!(da, db, "{pa}");
            }
        }
    }

    #[test]
    fn every_provenance_and_split_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut samples = Vec::new();
        for p in [
            Provenance::HumanLabeled,
            Provenance::Rotated,
            Provenance::Inpainted,
            Provenance::Paraphrased,
        ] {
            for s in [Split::Seen, Split::Unseen] {
                samples.push(sample(&format!("{p}-{s:?}"), p, s, true));
            }
        }
        let ds = Dataset::new(samples);
        save_manifest(&ds, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        for (a, b) in ds.samples.iter().zip(&loaded.samples) {
            assert_equivalent(a, b);
        }
    }

    #[test]
    fn deleted_image_is_missing_asset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let ds = Dataset::new(vec![sample(
            "a",
            Provenance::HumanLabeled,
            Split::Seen,
            true,
        )]);
        save_manifest(&ds, &path).unwrap();
        let record = &read_records(&path).unwrap()[0];
        fs::remove_file(dir.path().join(&record.image_path)).unwrap();
        match load_manifest(&path) {
            Err(ManifestError::MissingAsset(p)) => assert!(p.ends_with(&record.image_path)),
            other => panic!("expected MissingAsset, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let ds = Dataset::new(vec![sample(
            "a",
            Provenance::HumanLabeled,
            Split::Seen,
            false,
        )]);
        save_manifest(&ds, &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{\"id\": \"broken\"\n");
        fs::write(&path, text).unwrap();
        match load_manifest(&path) {
            Err(ManifestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
