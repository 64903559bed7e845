//! Dataset expansion: rotation, background inpainting and instruction
//! paraphrase.
//!
//! Image editing and text generation go through the [`InpaintClient`] and
//! [`TextGenClient`] traits. The stub implementations here are deterministic
//! and need no network.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    validate_sample, AffordanceKind, AffordanceMap, Dataset, DatasetError, DepthMap, ImageRgb,
    InstructionSample, ObjectMask, Provenance, SUPPORT_DILATION,
};
use crate::encoders::fnv1a64;

/// Fraction of mask pixels allowed to leave the frame during rotation.
pub const MAX_CLIPPED_FRACTION: f64 = 0.2;

/// Fraction of failed generations above which augmentation aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

/// Attempts per client request before giving up.
pub const CLIENT_ATTEMPTS: usize = 3;

/// Extra random angles tried when a rotation clips the mask.
pub const ROTATION_RETRIES: usize = 4;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("client failed after {attempts} attempt(s): {message}")]
    ClientFailure { attempts: usize, message: String },
    #[error("inpainting changed {changed} pixel(s) inside the mask")]
    MaskViolation { changed: usize },
    #[error("rotation moved {:.1}% of the mask out of frame", fraction * 100.0)]
    MaskClipped { fraction: f64 },
    #[error("generated sample {id} is invalid: {violations}")]
    InvalidSample { id: String, violations: String },
    #[error("{failed} of {planned} generations failed")]
    TooManyFailures {
        failed: usize,
        planned: usize,
        report: Box<AugmentReport>,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Error reported by a client implementation.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ClientError(pub String);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditPromptRequest {
    pub category: String,
    pub scene_hints: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TextGenTask {
    EditPrompts {
        category: String,
        scene_hints: String,
    },
    Paraphrase {
        instruction: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextGenRequest {
    pub task: TextGenTask,
    pub count: usize,
    /// Variation key; equal requests with equal seeds get equal answers.
    pub seed: u64,
}

pub trait TextGenClient: Send + Sync {
    fn generate(&self, request: &TextGenRequest) -> Result<Vec<String>, ClientError>;
}

pub trait InpaintClient: Send + Sync {
    /// Repaints the image outside `keep_mask` according to `prompt`.
    fn edit(
        &self,
        image: &ImageRgb,
        keep_mask: &ObjectMask,
        prompt: &str,
    ) -> Result<ImageRgb, ClientError>;
}

const BACKGROUND_CORPUS: &[&str] = &[
    "a light oak kitchen counter",
    "a grey granite worktop",
    "a white laminate table",
    "a brushed steel workbench",
    "a beige linen tablecloth",
    "a pale marble countertop",
    "a walnut dining table",
    "a concrete shelf",
    "a bamboo cutting surface",
    "a slate grey desk",
    "a cream tiled counter",
    "a birch plywood table",
];

const PUSH_VERBS: &[&str] = &["push", "shove", "nudge"];
const GRASP_VERBS: &[&str] = &["pick up", "grab", "lift", "take", "grasp", "hold"];
const WRAPPERS: &[&str] = &[
    "{}",
    "please {}",
    "{} please",
    "could you {}",
    "i need you to {}",
    "go ahead and {}",
];
const PART_LINKS: &[&str] = &["by the", "using the", "by its"];

/// Deterministic text generator over a bundled corpus and rewrite rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StubTextGen {
    pub seed: u64,
}

impl StubTextGen {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng(&self, request: &TextGenRequest, key: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(
            self.seed ^ request.seed.rotate_left(17) ^ fnv1a64(key.as_bytes()),
        )
    }

    /// The corpus entries in the order a request with this key sees them.
    pub fn edit_prompt_order(&self, request: &TextGenRequest, category: &str) -> Vec<String> {
        let mut entries: Vec<&str> = BACKGROUND_CORPUS.to_vec();
        entries.shuffle(&mut self.rng(request, category));
        entries
            .into_iter()
            .map(|bg| format!("{category} on {bg}"))
            .collect()
    }
}

/// Size of the bundled background corpus.
pub fn stub_corpus_len() -> usize {
    BACKGROUND_CORPUS.len()
}

/// Takes `count` entries from `pool`, cycling with numbered suffixes once
/// the pool is exhausted.
fn cycle_distinct(pool: &[String], count: usize) -> Vec<String> {
    (0..count)
        .map(|k| {
            let base = &pool[k % pool.len()];
            match k / pool.len() {
                0 => base.clone(),
                round => format!("{base} (variation {round})"),
            }
        })
        .collect()
}

/// Rule-based rewrites of an instruction; never includes the input itself.
pub fn paraphrase_candidates(instruction: &str) -> Vec<String> {
    let lower = instruction.trim().to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    let normal = words.join(" ");

    let mut cores: Vec<String> = vec![normal.clone()];
    for group in [PUSH_VERBS, GRASP_VERBS] {
        if let Some(verb) = group.iter().find(|v| normal.starts_with(*v)) {
            let rest = &normal[verb.len()..];
            for alt in group.iter().filter(|a| *a != verb) {
                cores.push(format!("{alt}{rest}"));
            }
        }
    }
    let mut linked = Vec::new();
    for core in &cores {
        linked.push(core.clone());
        if let Some(link) = PART_LINKS
            .iter()
            .find(|l| core.contains(&format!(" {} ", l)))
        {
            for alt in PART_LINKS.iter().filter(|a| *a != link) {
                linked.push(core.replacen(&format!(" {link} "), &format!(" {alt} "), 1));
            }
        }
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    seen.insert(normal.clone());
    for core in &linked {
        for wrap in WRAPPERS {
            let text = wrap.replace("{}", core);
            if seen.insert(text.clone()) {
                out.push(text);
            }
        }
    }
    out
}

impl TextGenClient for StubTextGen {
    fn generate(&self, request: &TextGenRequest) -> Result<Vec<String>, ClientError> {
        match &request.task {
            TextGenTask::EditPrompts {
                category,
                scene_hints,
            } => {
                let mut pool = self.edit_prompt_order(request, category);
                if !scene_hints.trim().is_empty() {
                    pool.iter_mut()
                        .for_each(|p| *p = format!("{p}, {}", scene_hints.trim()));
                }
                Ok(cycle_distinct(&pool, request.count))
            }
            TextGenTask::Paraphrase { instruction } => {
                let mut pool = paraphrase_candidates(instruction);
                if pool.is_empty() {
                    pool.push(format!("please {}", instruction.trim()));
                }
                pool.shuffle(&mut self.rng(request, instruction));
                Ok(cycle_distinct(&pool, request.count))
            }
        }
    }
}

/// Fills everything outside the keep mask with a texture derived from a
/// hash of the prompt.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProceduralInpaint;

impl ProceduralInpaint {
    /// The full-frame texture this stub paints for `prompt`.
    pub fn texture(height: usize, width: usize, prompt: &str) -> ImageRgb {
        let hash = fnv1a64(prompt.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(hash);
        // Muted base tone: grey with a small tint.
        let grey: i32 = rng.gen_range(110..=185);
        let tint: [i32; 3] = [
            rng.gen_range(-18..=18),
            rng.gen_range(-18..=18),
            rng.gen_range(-18..=18),
        ];
        let period = rng.gen_range(3..=9) as usize;
        let amplitude: i32 = rng.gen_range(4..=14);
        let diagonal = rng.gen_bool(0.5);
        let mut img = ImageRgb::filled(height, width, [0, 0, 0]).expect("valid dims");
        for r in 0..height {
            for c in 0..width {
                let phase = if diagonal { r + c } else { r };
                let stripe = if (phase / period) % 2 == 0 {
                    amplitude
                } else {
                    -amplitude
                };
                let noise: i32 = rng.gen_range(-5..=5);
                let px = [0, 1, 2].map(|k| (grey + tint[k] + stripe + noise).clamp(0, 255) as u8);
                img.set(r, c, px);
            }
        }
        img
    }
}

impl InpaintClient for ProceduralInpaint {
    fn edit(
        &self,
        image: &ImageRgb,
        keep_mask: &ObjectMask,
        prompt: &str,
    ) -> Result<ImageRgb, ClientError> {
        if image.dims() != keep_mask.dims() {
            return Err(ClientError("mask and image sizes differ".into()));
        }
        let (h, w) = image.dims();
        let mut out = Self::texture(h, w, prompt);
        for (r, c) in keep_mask.pixels() {
            out.set(r, c, image.get(r, c));
        }
        Ok(out)
    }
}

fn with_retries<T>(mut call: impl FnMut() -> Result<T, ClientError>) -> Result<T, AugmentError> {
    let mut last = String::new();
    for _ in 0..CLIENT_ATTEMPTS {
        match call() {
            Ok(v) => return Ok(v),
            Err(e) => last = e.0,
        }
    }
    Err(AugmentError::ClientFailure {
        attempts: CLIENT_ATTEMPTS,
        message: last,
    })
}

fn checked_texts(texts: Vec<String>, count: usize) -> Result<Vec<String>, ClientError> {
    if texts.len() != count {
        return Err(ClientError(format!(
            "asked for {count} texts, got {}",
            texts.len()
        )));
    }
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(ClientError("empty text returned".into()));
    }
    Ok(texts)
}

pub fn generate_edit_prompts(
    request: &EditPromptRequest,
    seed: u64,
    client: &dyn TextGenClient,
) -> Result<Vec<String>, AugmentError> {
    if request.count == 0 {
        return Err(AugmentError::InvalidRequest(
            "count must be at least 1".into(),
        ));
    }
    let req = TextGenRequest {
        task: TextGenTask::EditPrompts {
            category: request.category.clone(),
            scene_hints: request.scene_hints.clone(),
        },
        count: request.count,
        seed,
    };
    with_retries(|| {
        client
            .generate(&req)
            .and_then(|t| checked_texts(t, request.count))
    })
}

pub fn paraphrase_instruction(
    instruction: &str,
    count: usize,
    seed: u64,
    client: &dyn TextGenClient,
) -> Result<Vec<String>, AugmentError> {
    if instruction.trim().is_empty() {
        return Err(AugmentError::InvalidRequest("instruction is empty".into()));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let req = TextGenRequest {
        task: TextGenTask::Paraphrase {
            instruction: instruction.to_string(),
        },
        count,
        seed,
    };
    let original = instruction.trim().to_lowercase();
    with_retries(|| {
        let texts = checked_texts(client.generate(&req)?, count)?;
        if texts.iter().any(|t| t.trim().to_lowercase() == original) {
            return Err(ClientError("paraphrase repeats the instruction".into()));
        }
        Ok(texts)
    })
}

/// Repaints the background; in-mask pixels must survive bit for bit.
pub fn inpaint_background(
    sample: &InstructionSample,
    prompt: &str,
    client: &dyn InpaintClient,
) -> Result<InstructionSample, AugmentError> {
    let edited = with_retries(|| client.edit(&sample.image, &sample.mask, prompt))?;
    if edited.dims() != sample.image.dims() {
        return Err(AugmentError::InvalidRequest(
            "inpainting changed the image size".into(),
        ));
    }
    let changed = sample
        .mask
        .pixels()
        .filter(|&(r, c)| edited.get(r, c) != sample.image.get(r, c))
        .count();
    if changed > 0 {
        return Err(AugmentError::MaskViolation { changed });
    }
    Ok(InstructionSample {
        id: format!("{}/inpaint", sample.id),
        image: edited,
        provenance: Provenance::Inpainted,
        parent: Some(sample.id.clone()),
        ..sample.clone()
    })
}

/// Nearest point of `Z^2 ∪ (Z + 1/2)^2`; quarter turns about such a point
/// map pixel indices onto pixel indices.
fn snap_to_half_lattice(row: f64, col: f64) -> (f64, f64) {
    let a = (row.round(), col.round());
    let b = (row.floor() + 0.5, col.floor() + 0.5);
    let da = (a.0 - row).powi(2) + (a.1 - col).powi(2);
    let db = (b.0 - row).powi(2) + (b.1 - col).powi(2);
    if db < da {
        b
    } else {
        a
    }
}

struct Rasters {
    image: ImageRgb,
    affordance: Vec<f64>,
    mask: ObjectMask,
    depth: Option<DepthMap>,
    lost_mass: bool,
}

fn rotate_quarter(sample: &InstructionSample, turns: usize, center: (f64, f64)) -> Rasters {
    let (h, w) = sample.image.dims();
    let (cr, cc) = center;
    let mut out = Rasters {
        image: ImageRgb::filled(h, w, [0, 0, 0]).expect("valid dims"),
        affordance: vec![0.0; h * w],
        mask: ObjectMask::empty(h, w, sample.mask.category()),
        depth: sample.depth.as_ref().map(|_| DepthMap::zeros(h, w)),
        lost_mass: false,
    };
    let src_aff = sample.affordance.values();
    for r in 0..h {
        for c in 0..w {
            let (mut dr, mut dc) = (r as f64 - cr, c as f64 - cc);
            for _ in 0..turns {
                (dr, dc) = (-dc, dr);
            }
            let (nr, nc) = ((cr + dr).round(), (cc + dc).round());
            if nr < 0.0 || nc < 0.0 || nr >= h as f64 || nc >= w as f64 {
                out.lost_mass |= src_aff[r * w + c] > 0.0;
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            out.image.set(nr, nc, sample.image.get(r, c));
            out.affordance[nr * w + nc] = src_aff[r * w + c];
            out.mask.set(nr, nc, sample.mask.get(r, c));
            if let (Some(dst), Some(src)) = (out.depth.as_mut(), sample.depth.as_ref()) {
                dst.set(nr, nc, src.get(r, c));
            }
        }
    }
    out
}

fn rotate_general(sample: &InstructionSample, angle_deg: f64, center: (f64, f64)) -> Rasters {
    let (h, w) = sample.image.dims();
    let (cr, cc) = center;
    let (s, co) = angle_deg.to_radians().sin_cos();
    let src_aff = sample.affordance.values();
    let mut out = Rasters {
        image: ImageRgb::filled(h, w, [0, 0, 0]).expect("valid dims"),
        affordance: vec![0.0; h * w],
        mask: ObjectMask::empty(h, w, sample.mask.category()),
        depth: sample.depth.as_ref().map(|_| DepthMap::zeros(h, w)),
        lost_mass: true,
    };
    for r in 0..h {
        for c in 0..w {
            // Inverse of the forward map dr' = dr cos - dc sin, dc' = dr sin + dc cos.
            let (dr, dc) = (r as f64 - cr, c as f64 - cc);
            let sr = cr + dr * co + dc * s;
            let sc = cc - dr * s + dc * co;

            let (r0, c0) = (sr.floor(), sc.floor());
            let (fr, fc) = (sr - r0, sc - c0);
            let mut rgb = [0.0f64; 3];
            let mut aff = 0.0;
            for (dy, wy) in [(0.0, 1.0 - fr), (1.0, fr)] {
                for (dx, wx) in [(0.0, 1.0 - fc), (1.0, fc)] {
                    let (tr, tc) = (r0 + dy, c0 + dx);
                    let wt = wy * wx;
                    if wt == 0.0 || tr < 0.0 || tc < 0.0 || tr >= h as f64 || tc >= w as f64 {
                        continue;
                    }
                    let (tr, tc) = (tr as usize, tc as usize);
                    let px = sample.image.get(tr, tc);
                    for k in 0..3 {
                        rgb[k] += wt * px[k] as f64;
                    }
                    aff += wt * src_aff[tr * w + tc];
                }
            }
            out.image
                .set(r, c, rgb.map(|v| v.round().clamp(0.0, 255.0) as u8));
            out.affordance[r * w + c] = aff;

            let (nr, nc) = (sr.round(), sc.round());
            if nr >= 0.0 && nc >= 0.0 && nr < h as f64 && nc < w as f64 {
                let (nr, nc) = (nr as usize, nc as usize);
                out.mask.set(r, c, sample.mask.get(nr, nc));
                if let (Some(dst), Some(src)) = (out.depth.as_mut(), sample.depth.as_ref()) {
                    dst.set(r, c, src.get(nr, nc));
                }
            }
        }
    }
    out
}

/// Share of mask pixels whose centres rotate out of the frame.
fn clipped_fraction(mask: &ObjectMask, angle_deg: f64, center: (f64, f64)) -> f64 {
    let (h, w) = mask.dims();
    let (s, co) = angle_deg.to_radians().sin_cos();
    let total = mask.count();
    let lost = mask
        .pixels()
        .filter(|&(r, c)| {
            let (dr, dc) = (r as f64 - center.0, c as f64 - center.1);
            let nr = center.0 + dr * co - dc * s;
            let nc = center.1 + dr * s + dc * co;
            nr < -0.5 || nc < -0.5 || nr >= h as f64 - 0.5 || nc >= w as f64 - 0.5
        })
        .count();
    lost as f64 / total as f64
}

/// Rotates every raster by `angle_deg` (visually counter-clockwise) about
/// the mask centroid.
pub fn rotate_sample(
    sample: &InstructionSample,
    angle_deg: f64,
) -> Result<InstructionSample, AugmentError> {
    let centroid = sample
        .mask
        .centroid()
        .ok_or_else(|| AugmentError::InvalidRequest("mask is empty".into()))?;
    let quarter = (angle_deg / 90.0).round();
    let exact = (angle_deg - quarter * 90.0).abs() < 1e-9;
    let center = if exact {
        snap_to_half_lattice(centroid.0, centroid.1)
    } else {
        centroid
    };
    let fraction = clipped_fraction(&sample.mask, angle_deg, center);
    if fraction > MAX_CLIPPED_FRACTION {
        return Err(AugmentError::MaskClipped { fraction });
    }

    let mut out = if exact {
        rotate_quarter(sample, quarter.rem_euclid(4.0) as usize, center)
    } else {
        rotate_general(sample, angle_deg, center)
    };
    if out.mask.is_empty() {
        return Err(AugmentError::MaskClipped { fraction: 1.0 });
    }
    if !exact {
        // Bilinear taps can spread label mass past the nearest-neighbour mask.
        let band = out.mask.dilate(SUPPORT_DILATION);
        for (v, inside) in out.affordance.iter_mut().zip(band.bits()) {
            if !inside {
                *v = 0.0;
            }
        }
    }
    let (h, w) = sample.image.dims();
    let total: f64 = out.affordance.iter().sum();
    if total <= 0.0 {
        return Err(AugmentError::MaskClipped { fraction: 1.0 });
    }
    let affordance = if !out.lost_mass {
        AffordanceMap::from_raw(h, w, out.affordance, AffordanceKind::Groundtruth)?
    } else {
        crate::dataset::normalize_affordance(h, w, &out.affordance)?
    };
    Ok(InstructionSample {
        id: format!("{}/rot{angle_deg}", sample.id),
        instruction: sample.instruction.clone(),
        image: out.image,
        affordance,
        mask: out.mask,
        depth: out.depth,
        provenance: Provenance::Rotated,
        split: sample.split,
        shape_id: sample.shape_id.clone(),
        parent: Some(sample.id.clone()),
    })
}

/// Generations per seed sample along each axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPlan {
    pub rotations: usize,
    pub inpaints: usize,
    pub paraphrases: usize,
}

impl AugmentPlan {
    pub fn expansion(&self) -> usize {
        (1 + self.rotations) * (1 + self.inpaints) * (1 + self.paraphrases)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub seed_id: String,
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub seed: u64,
    pub plan: AugmentPlan,
    pub seed_samples: usize,
    pub planned: usize,
    pub produced: usize,
    pub rotation_retries: usize,
    pub failures: Vec<FailureRecord>,
}

pub struct AugmentClients<'a> {
    pub text: &'a dyn TextGenClient,
    pub inpaint: &'a dyn InpaintClient,
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

fn check_valid(sample: &InstructionSample) -> Result<(), AugmentError> {
    let report = validate_sample(sample);
    if report.is_empty() {
        return Ok(());
    }
    Err(AugmentError::InvalidSample {
        id: sample.id.clone(),
        violations: report
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; "),
    })
}

/// Expands every seed sample by rotation, then inpainting, then paraphrase.
/// The untouched original keeps its id; derived samples are named
/// `{id}/r{k}/i{j}/p{l}` and point at their immediate parent.
pub fn augment_dataset(
    seed_dataset: &Dataset,
    plan: AugmentPlan,
    clients: &AugmentClients<'_>,
    seed: u64,
) -> Result<(Dataset, AugmentReport), AugmentError> {
    for s in &seed_dataset.samples {
        check_valid(s)?;
    }
    let mut report = AugmentReport {
        seed,
        plan,
        seed_samples: seed_dataset.len(),
        planned: seed_dataset.len() * plan.expansion(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(report.planned);

    for (index, original) in seed_dataset.samples.iter().enumerate() {
        let sseed = sample_seed(seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(sseed);
        let fail = |report: &mut AugmentReport, stage: &str, e: &AugmentError| {
            report.failures.push(FailureRecord {
                seed_id: original.id.clone(),
                stage: stage.to_string(),
                message: e.to_string(),
            });
        };

        // Rotated variants; slot 0 is the original.
        let mut rotated: Vec<Option<InstructionSample>> = vec![Some(original.clone())];
        for k in 1..=plan.rotations {
            let mut result = None;
            for attempt in 0..=ROTATION_RETRIES {
                let angle = (rng.gen_range(1.0..359.0f64) * 10.0).round() / 10.0;
                match rotate_sample(original, angle) {
                    Ok(mut s) => {
                        s.id = format!("{}/r{k}/i0/p0", original.id);
                        result = Some(s);
                        break;
                    }
                    Err(AugmentError::MaskClipped { .. }) if attempt < ROTATION_RETRIES => {
                        report.rotation_retries += 1;
                    }
                    Err(e) => {
                        fail(&mut report, "rotate", &e);
                        break;
                    }
                }
            }
            rotated.push(result);
        }

        let prompts = if plan.inpaints > 0 {
            let request = EditPromptRequest {
                category: original.category().to_string(),
                scene_hints: String::new(),
                count: plan.inpaints,
            };
            match generate_edit_prompts(&request, sseed, clients.text) {
                Ok(p) => Some(p),
                Err(e) => {
                    fail(&mut report, "edit-prompts", &e);
                    None
                }
            }
        } else {
            Some(Vec::new())
        };
        let paraphrases = match paraphrase_instruction(
            &original.instruction,
            plan.paraphrases,
            sseed,
            clients.text,
        ) {
            Ok(p) => Some(p),
            Err(e) => {
                fail(&mut report, "paraphrase", &e);
                None
            }
        };

        for (k, base) in rotated.iter().enumerate() {
            for j in 0..=plan.inpaints {
                let Some(base) = base else { continue };
                let raster = if j == 0 {
                    base.clone()
                } else {
                    let Some(prompts) = &prompts else { continue };
                    match inpaint_background(base, &prompts[j - 1], clients.inpaint) {
                        Ok(mut s) => {
                            s.id = format!("{}/r{k}/i{j}/p0", original.id);
                            s
                        }
                        Err(e) => {
                            fail(&mut report, "inpaint", &e);
                            continue;
                        }
                    }
                };
                for l in 0..=plan.paraphrases {
                    let sample = if l == 0 {
                        raster.clone()
                    } else {
                        let Some(texts) = &paraphrases else { continue };
                        InstructionSample {
                            id: format!("{}/r{k}/i{j}/p{l}", original.id),
                            instruction: texts[l - 1].clone(),
                            provenance: Provenance::Paraphrased,
                            parent: Some(raster.id.clone()),
                            ..raster.clone()
                        }
                    };
                    match check_valid(&sample) {
                        Ok(()) => out.push(sample),
                        Err(e) => fail(&mut report, "validate", &e),
                    }
                }
            }
        }
    }

    report.produced = out.len();
    let failed = report.planned - report.produced;
    if failed as f64 > MAX_FAILURE_FRACTION * report.planned as f64 {
        return Err(AugmentError::TooManyFailures {
            failed,
            planned: report.planned,
            report: Box::new(report),
        });
    }
    Ok((Dataset::new(out), report))
}
