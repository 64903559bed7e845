//! Executing primitives against a scene and judging task success.

use serde::{Deserialize, Serialize};

use super::geometry::{self, Point};
use super::scenario::{Task, TaskGoal};
use super::SimScene;
use crate::action::{grasp_angle_of_box, oriented_box_of_points, wrap_half_turn, Action, GraspAction, PushAction};

/// Largest accepted gap between the gripper and the part's short-edge angle.
pub const GRASP_ANGLE_TOLERANCE_DEG: f64 = 15.0;
/// Largest accepted gap between push and task direction.
pub const PUSH_ANGLE_TOLERANCE_DEG: f64 = 30.0;
pub const MIN_DISPLACEMENT: f64 = 0.05;

pub const REASON_SUCCESS: &str = "success";
pub const REASON_WRONG_ACTION: &str = "wrong action type";
pub const REASON_OUTSIDE_PART: &str = "position outside target part";
pub const REASON_ANGLE: &str = "angle outside tolerance";
pub const REASON_HEIGHT: &str = "height outside object";
pub const REASON_NO_CONTACT: &str = "no contact";
pub const REASON_WRONG_OBJECT: &str = "wrong object moved";
pub const REASON_SHORT: &str = "displacement below minimum";
pub const REASON_DIRECTION: &str = "direction outside tolerance";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub success: bool,
    pub reason: String,
}

impl StepOutcome {
    fn pass() -> Self {
        Self {
            success: true,
            reason: REASON_SUCCESS.into(),
        }
    }

    fn fail(reason: &str) -> Self {
        Self {
            success: false,
            reason: reason.into(),
        }
    }
}

/// Grasp angle a parallel gripper needs for a convex part: the direction of
/// the short edge of its minimum-area rectangle.
pub fn part_grasp_angle(polygon: &[Point]) -> f64 {
    let pts: Vec<(f64, f64)> = polygon.iter().map(|p| (p[0], p[1])).collect();
    let b = oriented_box_of_points(&pts).expect("part has vertices");
    grasp_angle_of_box(&b)
}

pub fn step_grasp(scene: &SimScene, action: &GraspAction, task: &Task) -> StepOutcome {
    let TaskGoal::GraspPart { part } = &task.goal else {
        return StepOutcome::fail(REASON_WRONG_ACTION);
    };
    let target = &scene.objects[task.target];
    let poly = target.world_part(part).expect("task names an existing part");
    let [x, y, z] = action.position_m;
    if !geometry::contains(&poly, [x, y]) {
        return StepOutcome::fail(REASON_OUTSIDE_PART);
    }
    if wrap_half_turn(action.angle_deg - part_grasp_angle(&poly)).abs() > GRASP_ANGLE_TOLERANCE_DEG {
        return StepOutcome::fail(REASON_ANGLE);
    }
    if !(z >= scene.camera.table_height && z <= scene.camera.table_height + target.height) {
        return StepOutcome::fail(REASON_HEIGHT);
    }
    StepOutcome::pass()
}

/// First object the tip meets and the sweep parameter of the contact.
pub fn first_contact(scene: &SimScene, action: &PushAction) -> Option<(usize, f64)> {
    let origin = [action.position_m[0], action.position_m[1]];
    let dir = [action.direction[0], action.direction[1]];
    let mut best: Option<(usize, f64)> = None;
    for (i, obj) in scene.objects.iter().enumerate() {
        for piece in obj.world_pieces() {
            if let Some(t) = geometry::ray_entry(&piece, origin, dir, action.length_m) {
                if best.is_none_or(|(_, b)| t < b) {
                    best = Some((i, t));
                }
            }
        }
    }
    best
}

/// Quasi-static sweep: the first object touched slides along the push for
/// the rest of the stroke, stopping at the workspace edge. Returns the moved
/// object and its displacement.
pub fn apply_push(scene: &SimScene, action: &PushAction) -> (SimScene, Option<(usize, Point)>) {
    let mut next = scene.clone();
    let Some((hit, t)) = first_contact(scene, action) else {
        return (next, None);
    };
    let dir = [action.direction[0], action.direction[1]];
    let remaining = (action.length_m - t).max(0.0);
    let room = scene.bounds.room(&scene.objects[hit].world_vertices(), dir);
    let s = remaining.min(room);
    let shift = [dir[0] * s, dir[1] * s];
    let pose = &mut next.objects[hit].pose;
    pose.x += shift[0];
    pose.y += shift[1];
    (next, Some((hit, shift)))
}

pub fn step_push(scene: &SimScene, action: &PushAction, task: &Task) -> (StepOutcome, SimScene) {
    let (next, moved) = apply_push(scene, action);
    let TaskGoal::Push {
        direction,
        min_displacement,
    } = &task.goal
    else {
        return (StepOutcome::fail(REASON_WRONG_ACTION), next);
    };
    let outcome = match moved {
        None => StepOutcome::fail(REASON_NO_CONTACT),
        Some((hit, _)) if hit != task.target => StepOutcome::fail(REASON_WRONG_OBJECT),
        Some((_, shift)) => {
            let distance = shift[0].hypot(shift[1]);
            if distance + 1e-12 < *min_displacement {
                StepOutcome::fail(REASON_SHORT)
            } else if geometry::angle_between(shift, direction.unit()) > PUSH_ANGLE_TOLERANCE_DEG {
                StepOutcome::fail(REASON_DIRECTION)
            } else {
                StepOutcome::pass()
            }
        }
    };
    (outcome, next)
}

pub fn step(scene: &SimScene, action: &Action, task: &Task) -> (StepOutcome, SimScene) {
    match action {
        Action::Grasp(g) => (step_grasp(scene, g, task), scene.clone()),
        Action::Push(p) => step_push(scene, p, task),
    }
}
