//! Flat-shaded top-down rasterisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geometry::{self, Point};
use super::library::GripKind;
use super::SimScene;
use crate::dataset::{DepthMap, ImageRgb, ObjectMask};
use crate::planner::SceneDescription;

/// Handles are drawn at this fraction of the body colour.
pub const HANDLE_SHADE: f64 = 0.4;
/// Knobs are the body colour mixed this far towards white.
pub const KNOB_LIGHTEN: f64 = 0.65;

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub image: ImageRgb,
    pub depth: DepthMap,
    /// One mask per object, in scene order, tagged with its category.
    pub masks: Vec<ObjectMask>,
    /// Per object, `(part name, mask)` in part order.
    pub part_masks: Vec<Vec<(String, ObjectMask)>>,
}

impl Rendered {
    pub fn part_mask(&self, object: usize, part: &str) -> Option<&ObjectMask> {
        self.part_masks
            .get(object)?
            .iter()
            .find(|(n, _)| n == part)
            .map(|(_, m)| m)
    }

    /// Detected objects as the planner sees them.
    pub fn description(&self) -> SceneDescription {
        let (h, w) = self.image.dims();
        let mut scene = SceneDescription::from_masks(h, w, &self.masks);
        scene.image = Some(self.image.clone());
        scene
    }
}

pub fn shade(color: [u8; 3], grip: GripKind) -> [u8; 3] {
    color.map(|c| {
        let c = c as f64;
        let v = match grip {
            GripKind::Handle => c * HANDLE_SHADE,
            GripKind::Knob => c * (1.0 - KNOB_LIGHTEN) + 255.0 * KNOB_LIGHTEN,
        };
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// Neutral grey table with a faint seeded wave pattern.
pub fn background(height: usize, width: usize, seed: u64) -> ImageRgb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: f64 = rng.gen_range(140.0..160.0);
    let (fr, fc): (f64, f64) = (rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6));
    let (pr, pc): (f64, f64) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
    let tint: [f64; 3] = [rng.gen_range(-4.0..4.0), 0.0, rng.gen_range(-4.0..4.0)];
    let mut img = ImageRgb::filled(height, width, [0, 0, 0]).expect("valid size");
    for r in 0..height {
        for c in 0..width {
            let wave = 5.0 * (fr * r as f64 + pr).sin() * (fc * c as f64 + pc).cos();
            let px = tint.map(|t| (base + t + wave).round().clamp(0.0, 255.0) as u8);
            img.set(r, c, px);
        }
    }
    img
}

fn bbox_of(points: &[Point]) -> (Point, Point) {
    points.iter().fold(
        ([f64::MAX, f64::MAX], [f64::MIN, f64::MIN]),
        |(lo, hi), p| ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])]),
    )
}

/// Pixel `(r, c)` shows the table point [`crate::dataset::CameraModel::unproject`]
/// gives for it; that point decides which polygons cover the pixel.
pub fn render(scene: &SimScene) -> Rendered {
    let (h, w) = (scene.height, scene.width);
    let cam = &scene.camera;
    let mut image = background(h, w, scene.seed);
    let mut depth = DepthMap::zeros(h, w);
    let mut masks = Vec::with_capacity(scene.objects.len());
    let mut part_masks = Vec::with_capacity(scene.objects.len());

    for obj in &scene.objects {
        let pieces = obj.world_pieces();
        let parts: Vec<(String, Vec<Point>)> = obj
            .parts
            .iter()
            .map(|p| (p.name.clone(), geometry::transform(&p.polygon, &obj.pose)))
            .collect();
        let grip_poly = obj.world_part(obj.grip_part()).expect("grip part");
        let grip_color = shade(obj.color, obj.grip);
        let mut mask = ObjectMask::empty(h, w, obj.category.clone());
        let mut pmasks: Vec<(String, ObjectMask)> = parts
            .iter()
            .map(|(n, _)| (n.clone(), ObjectMask::empty(h, w, obj.category.clone())))
            .collect();

        let (lo, hi) = bbox_of(&pieces.concat());
        let (r0, c0) = cam.project([lo[0], lo[1], 0.0]);
        let (r1, c1) = cam.project([hi[0], hi[1], 0.0]);
        let rows = (r0.floor().max(0.0) as usize)..=(r1.ceil().min(h as f64 - 1.0).max(0.0) as usize);
        let cols = (c0.floor().max(0.0) as usize)..=(c1.ceil().min(w as f64 - 1.0).max(0.0) as usize);
        for r in rows {
            for c in cols.clone() {
                let [x, y, _] = cam.unproject(r as f64, c as f64, 0.0);
                let p = [x, y];
                if !pieces.iter().any(|poly| geometry::contains(poly, p)) {
                    continue;
                }
                mask.set(r, c, true);
                depth.set(r, c, obj.height);
                image.set(r, c, obj.color);
                for ((_, poly), (_, pm)) in parts.iter().zip(pmasks.iter_mut()) {
                    if geometry::contains(poly, p) {
                        pm.set(r, c, true);
                    }
                }
                if geometry::contains(&grip_poly, p) {
                    image.set(r, c, grip_color);
                }
            }
        }
        masks.push(mask);
        part_masks.push(std::mem::take(&mut pmasks));
    }
    Rendered {
        image,
        depth,
        masks,
        part_masks,
    }
}
