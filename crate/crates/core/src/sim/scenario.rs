//! Seen/unseen task suites and the labelled seed dataset.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::oracle_action;
use super::geometry::{self, Pose};
use super::library::{ObjectLibrary, ShapeSpec, SimObject, BODY_PART, DIRECTIONS};
use super::render::{render, Rendered};
use super::step::{step, MIN_DISPLACEMENT};
use super::{SimConfig, SimError, SimScene, PLACEMENT_MARGIN};
use crate::dataset::{
    normalize_affordance, AffordanceMap, CameraModel, Dataset, InstructionSample, Provenance, Split,
};
use crate::planner::PushDirection;

/// Instance sizes vary by this fraction around the library dimensions.
pub const SCALE_JITTER: f64 = 0.05;
const PLACEMENT_TRIES: usize = 100;
const TASK_TRIES: usize = 500;
/// Fewest pixels a target part must cover to be usable.
pub const MIN_PART_PIXELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskGoal {
    GraspPart {
        part: String,
    },
    Push {
        direction: PushDirection,
        min_displacement: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    /// 1-based scene number.
    pub scene_index: usize,
    pub split: Split,
    pub scene: SimScene,
    pub instruction: String,
    /// Index of the target object in `scene.objects`.
    pub target: usize,
    pub goal: TaskGoal,
}

impl Task {
    pub fn target_object(&self) -> &SimObject {
        &self.scene.objects[self.target]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_scenes: usize,
    pub tasks_per_scene: usize,
    pub seed: u64,
    /// Share of scenes, taken from the end, built from held-out shapes and
    /// phrasings.
    pub unseen_fraction: f64,
    /// Probability that a task asks for a grasp rather than a push.
    pub grasp_fraction: f64,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_scenes: 6,
            tasks_per_scene: 20,
            seed: 0,
            unseen_fraction: 0.5,
            grasp_fraction: 0.6,
            min_objects: 2,
            max_objects: 3,
        }
    }
}

impl ScenarioConfig {
    pub fn unseen_scenes(&self) -> usize {
        (self.n_scenes as f64 * self.unseen_fraction.clamp(0.0, 1.0)).round() as usize
    }

    pub fn split_of(&self, scene_index: usize) -> Split {
        if scene_index > self.n_scenes - self.unseen_scenes() {
            Split::Unseen
        } else {
            Split::Seen
        }
    }
}

fn random_pose(sim: &SimConfig, rng: &mut ChaCha8Rng) -> Pose {
    let e = sim.workspace_half_extent;
    Pose {
        x: rng.gen_range(-e..e),
        y: rng.gen_range(-e..e),
        yaw_deg: rng.gen_range(0.0..360.0),
    }
}

/// Drops the shapes at random non-overlapping poses, or `None` if one of
/// them finds no room.
pub fn place_objects(
    library: &ObjectLibrary,
    sim: &SimConfig,
    shapes: &[&ShapeSpec],
    rng: &mut ChaCha8Rng,
) -> Option<Vec<SimObject>> {
    let bounds = sim.bounds();
    let mut colors = library.palette.clone();
    colors.shuffle(rng);
    let mut placed: Vec<SimObject> = Vec::with_capacity(shapes.len());
    for (i, spec) in shapes.iter().enumerate() {
        let color = colors[i % colors.len()];
        let obj = (0..PLACEMENT_TRIES).find_map(|_| {
            let scale = rng.gen_range(1.0 - SCALE_JITTER..=1.0 + SCALE_JITTER);
            let obj = library.instantiate(spec, random_pose(sim, rng), scale, color);
            let inside = obj.world_vertices().iter().all(|p| bounds.contains(*p));
            let clear = placed.iter().all(|other| {
                obj.world_pieces().iter().all(|a| {
                    other
                        .world_pieces()
                        .iter()
                        .all(|b| !geometry::convex_overlap(a, b, PLACEMENT_MARGIN))
                })
            });
            (inside && clear).then_some(obj)
        })?;
        placed.push(obj);
    }
    Some(placed)
}

fn build_task(
    library: &ObjectLibrary,
    sim: &SimConfig,
    config: &ScenarioConfig,
    pool: &[&ShapeSpec],
    split: Split,
    rng: &mut ChaCha8Rng,
) -> Option<(SimScene, String, usize, TaskGoal)> {
    let hi = config.max_objects.min(pool.len());
    let lo = config.min_objects.min(hi).max(1);
    let n = rng.gen_range(lo..=hi);
    let shapes: Vec<&ShapeSpec> = pool.choose_multiple(rng, n).copied().collect();
    let objects = place_objects(library, sim, &shapes, rng)?;
    let scene = SimScene::new(sim, objects, rng.gen());
    let target = rng.gen_range(0..n);
    let obj = &scene.objects[target];
    let (goal, instruction) = if rng.gen_bool(config.grasp_fraction.clamp(0.0, 1.0)) {
        let k = rng.gen_range(0..library.grasp_template_count(split));
        let part = obj.grip_part().to_string();
        let text = library.grasp_instruction(split, k, &obj.category, &part);
        (TaskGoal::GraspPart { part }, text)
    } else {
        let direction = *DIRECTIONS.choose(rng).expect("four directions");
        let k = rng.gen_range(0..library.push_template_count(split));
        let text = library.push_instruction(split, k, &obj.category, direction);
        (
            TaskGoal::Push {
                direction,
                min_displacement: MIN_DISPLACEMENT,
            },
            text,
        )
    };
    Some((scene, instruction, target, goal))
}

/// Solvable by the privileged agent and visible enough to act on.
fn usable(task: &Task) -> bool {
    let rendered = render(&task.scene);
    let part = match &task.goal {
        TaskGoal::GraspPart { part } => part.as_str(),
        TaskGoal::Push { .. } => BODY_PART,
    };
    let visible = rendered
        .part_mask(task.target, part)
        .is_some_and(|m| m.count() >= MIN_PART_PIXELS);
    let solved = step(&task.scene, &oracle_action(task), task).0.success;
    visible && solved
}

/// Builds `n_scenes * tasks_per_scene` tasks; the last scenes draw from the
/// held-out shapes and phrasings.
pub fn generate_scenarios(
    library: &ObjectLibrary,
    sim: &SimConfig,
    config: &ScenarioConfig,
) -> Result<Vec<Task>, SimError> {
    sim.validate()?;
    if config.min_objects == 0 || config.min_objects > config.max_objects {
        return Err(SimError::InvalidConfig(format!(
            "object count range {}..={} is empty",
            config.min_objects, config.max_objects
        )));
    }
    let seen = library.shapes(Split::Seen);
    let unseen = library.shapes(Split::Unseen);
    if seen.is_empty() && config.unseen_scenes() < config.n_scenes {
        return Err(SimError::LibraryTooSmall("no seen shapes".into()));
    }
    if unseen.is_empty() && config.unseen_scenes() > 0 {
        return Err(SimError::LibraryTooSmall("held-out pool is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tasks = Vec::with_capacity(config.n_scenes * config.tasks_per_scene);
    for scene_index in 1..=config.n_scenes {
        let split = config.split_of(scene_index);
        let pool = match split {
            Split::Seen => &seen,
            Split::Unseen => &unseen,
        };
        for t in 1..=config.tasks_per_scene {
            let task = (0..TASK_TRIES)
                .find_map(|_| {
                    let (scene, instruction, target, goal) =
                        build_task(library, sim, config, pool, split, &mut rng)?;
                    let task = Task {
                        id: format!("s{scene_index}-t{t:02}"),
                        scene_index,
                        split,
                        scene,
                        instruction,
                        target,
                        goal,
                    };
                    usable(&task).then_some(task)
                })
                .ok_or(SimError::Placement {
                    attempts: TASK_TRIES,
                })?;
            tasks.push(task);
        }
    }
    Ok(tasks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedDataConfig {
    pub samples_per_shape: usize,
    pub seed: u64,
    /// Label spread around a grip part's centre, in pixels.
    pub grasp_sigma_px: f64,
    /// Label spread around the body centre for pushes, in pixels.
    pub push_sigma_px: f64,
}

impl Default for SeedDataConfig {
    fn default() -> Self {
        Self {
            samples_per_shape: 3,
            seed: 0,
            grasp_sigma_px: 2.5,
            push_sigma_px: 4.0,
        }
    }
}

/// Gaussian bump at the part centroid, kept to the part's pixels.
pub fn part_label(
    rendered: &Rendered,
    scene: &SimScene,
    object: usize,
    part: &str,
    sigma_px: f64,
) -> Result<AffordanceMap, SimError> {
    let obj = &scene.objects[object];
    let poly = obj
        .world_part(part)
        .ok_or_else(|| SimError::InvalidScene(format!("{} has no part {part}", obj.category)))?;
    let mask = rendered
        .part_mask(object, part)
        .filter(|m| !m.is_empty())
        .ok_or_else(|| SimError::InvalidScene(format!("part {part} is not visible")))?;
    let c = geometry::centroid(&poly);
    let (pr, pc) = project(&scene.camera, c);
    let (h, w) = mask.dims();
    let mut raw = vec![0.0; h * w];
    for (r, col) in mask.pixels() {
        let d2 = (r as f64 - pr).powi(2) + (col as f64 - pc).powi(2);
        raw[r * w + col] = (-d2 / (2.0 * sigma_px * sigma_px)).exp();
    }
    // A far-off centroid can underflow every weight; fall back to uniform.
    if raw.iter().all(|v| *v == 0.0) {
        for (r, col) in mask.pixels() {
            raw[r * w + col] = 1.0;
        }
    }
    Ok(normalize_affordance(h, w, &raw)?)
}

fn project(camera: &CameraModel, p: geometry::Point) -> (f64, f64) {
    camera.project([p[0], p[1], 0.0])
}

/// Single-object scenes of every seen shape, labelled on the grip part for
/// grasps and on the body for pushes, phrased with the seen templates.
pub fn seed_dataset(
    library: &ObjectLibrary,
    sim: &SimConfig,
    config: &SeedDataConfig,
) -> Result<Dataset, SimError> {
    sim.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples = Vec::new();
    for spec in library.shapes(Split::Seen) {
        for k in 0..config.samples_per_shape {
            let objects = (0..TASK_TRIES)
                .find_map(|_| place_objects(library, sim, &[spec], &mut rng))
                .ok_or(SimError::Placement {
                    attempts: TASK_TRIES,
                })?;
            let scene = SimScene::new(sim, objects, rng.gen());
            let rendered = render(&scene);
            let obj = &scene.objects[0];
            let grasp_templates = library.grasp_template_count(Split::Seen);
            // Cycle grasp template 0, a push, then the remaining grasp templates.
            let slot = k % (grasp_templates + 1);
            let (instruction, affordance) = if slot == 1 {
                let d = *DIRECTIONS.choose(&mut rng).expect("four directions");
                let text = library.push_instruction(Split::Seen, 0, &obj.category, d);
                let label = part_label(&rendered, &scene, 0, BODY_PART, config.push_sigma_px)?;
                (text, label)
            } else {
                let template = if slot == 0 { 0 } else { slot - 1 };
                let part = obj.grip_part();
                let text = library.grasp_instruction(Split::Seen, template, &obj.category, part);
                let label = part_label(&rendered, &scene, 0, part, config.grasp_sigma_px)?;
                (text, label)
            };
            samples.push(InstructionSample {
                id: format!("{}/{k}", spec.id),
                instruction,
                image: rendered.image,
                affordance,
                mask: rendered.masks[0].clone(),
                depth: Some(rendered.depth),
                provenance: Provenance::HumanLabeled,
                split: Split::Seen,
                shape_id: Some(spec.id.clone()),
                parent: None,
            });
        }
    }
    Ok(Dataset::new(samples))
}
