//! Deterministic top-down tabletop world: rendering, grasp/push stepping,
//! seen/unseen task suites and success scoring.

pub mod eval;
pub mod geometry;
pub mod library;
pub mod protocol;
pub mod render;
pub mod scenario;
pub mod step;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentError;
use crate::dataset::{CameraModel, DatasetError};
use crate::model::ModelError;
use geometry::Point;
use library::SimObject;

pub use eval::{evaluate, EvalSetup, Evaluation, Method, ResultsTable, TaskRecord};
pub use library::{GripKind, ObjectLibrary, ShapeSpec};
pub use render::{render, Rendered};
pub use scenario::{generate_scenarios, seed_dataset, ScenarioConfig, SeedDataConfig, Task, TaskGoal};
pub use step::{step, step_grasp, step_push, StepOutcome};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("object library: {0}")]
    Library(String),
    #[error("library too small: {0}")]
    LibraryTooSmall(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not build a valid task after {attempts} attempts")]
    Placement { attempts: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

/// Raster size and table extent shared by every scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub image_size: usize,
    pub pixels_per_meter: f64,
    /// Objects stay within `[-e, e]` on both table axes.
    pub workspace_half_extent: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            image_size: 96,
            pixels_per_meter: 300.0,
            workspace_half_extent: 0.15,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.image_size < crate::dataset::MIN_IMAGE_SIDE {
            return Err(SimError::InvalidConfig(format!(
                "image size {} below {}",
                self.image_size,
                crate::dataset::MIN_IMAGE_SIDE
            )));
        }
        if !(self.pixels_per_meter > 0.0 && self.workspace_half_extent > 0.0) {
            return Err(SimError::InvalidConfig(
                "scale and workspace must be positive".into(),
            ));
        }
        let visible = self.image_size as f64 / 2.0 / self.pixels_per_meter;
        if self.workspace_half_extent > visible - 1.0 / self.pixels_per_meter {
            return Err(SimError::InvalidConfig(format!(
                "workspace half extent {} exceeds the visible {visible:.4} m",
                self.workspace_half_extent
            )));
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel::centered(self.image_size, self.image_size, self.pixels_per_meter)
    }

    pub fn bounds(&self) -> Bounds {
        let e = self.workspace_half_extent;
        Bounds {
            min: [-e, -e],
            max: [e, e],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn contains(&self, p: Point) -> bool {
        (0..2).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Largest `s >= 0` keeping every point inside after moving by `s * dir`.
    pub fn room(&self, points: &[Point], dir: Point) -> f64 {
        let mut limit = f64::INFINITY;
        for p in points {
            for k in 0..2 {
                let s = if dir[k] > 0.0 {
                    (self.max[k] - p[k]) / dir[k]
                } else if dir[k] < 0.0 {
                    (self.min[k] - p[k]) / dir[k]
                } else {
                    continue;
                };
                limit = limit.min(s);
            }
        }
        limit.max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimScene {
    pub objects: Vec<SimObject>,
    pub bounds: Bounds,
    pub camera: CameraModel,
    pub height: usize,
    pub width: usize,
    /// Seeds the background texture.
    pub seed: u64,
}

/// Gap kept between objects when a scene is laid out.
pub const PLACEMENT_MARGIN: f64 = 0.004;

impl SimScene {
    pub fn new(config: &SimConfig, objects: Vec<SimObject>, seed: u64) -> Self {
        Self {
            objects,
            bounds: config.bounds(),
            camera: config.camera(),
            height: config.image_size,
            width: config.image_size,
            seed,
        }
    }

    /// Objects lie inside the workspace and do not overlap.
    pub fn validate(&self) -> Result<(), SimError> {
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.height > 0.0) {
                return Err(SimError::InvalidScene(format!("object {i} has no height")));
            }
            if !o.world_vertices().iter().all(|p| self.bounds.contains(*p)) {
                return Err(SimError::InvalidScene(format!(
                    "object {i} ({}) leaves the workspace",
                    o.category
                )));
            }
            for (j, other) in self.objects.iter().enumerate().skip(i + 1) {
                let touching = o.world_pieces().iter().any(|a| {
                    other
                        .world_pieces()
                        .iter()
                        .any(|b| geometry::convex_overlap(a, b, 0.0))
                });
                if touching {
                    return Err(SimError::InvalidScene(format!(
                        "objects {i} and {j} interpenetrate"
                    )));
                }
            }
        }
        Ok(())
    }
}
