//! Top-down grasp and straight push primitives.
//!
//! Geometry works in the image plane with `x` along columns and `y` along
//! rows. A pixel `(r, c)` covers the unit square `[c, c+1] x [r, r+1]`;
//! reported centres are shifted back by half a pixel into index coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    pixel_to_world, AffordanceMap, CameraModel, DatasetError, DepthMap, ObjectMask,
};

/// Length of every push, meters.
pub const PUSH_LENGTH: f64 = 0.13;

/// How far below the sensed surface the gripper closes, meters.
pub const GRASP_DEPTH_OFFSET: f64 = 0.02;

/// Minimum in-plane distance between push start and end point, meters.
pub const MIN_PUSH_DISTANCE: f64 = 1e-3;

/// Relative side-length difference below which a box counts as square.
pub const SQUARE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("depth map is required for this action")]
    DepthMissing,
    #[error("push end point is {distance:.6} m from the start in the table plane")]
    DegenerateDirection { distance: f64 },
    #[error("{what} is {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionWarning {
    /// The affordance maximum fell outside the target mask; the maximum
    /// inside the mask was used instead.
    TargetMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspAction {
    pub position_m: [f64; 3],
    /// Gripper rotation in `(-90, 90]`.
    pub angle_deg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushAction {
    pub position_m: [f64; 3],
    /// Unit vector in the table plane.
    pub direction: [f64; 3],
    pub length_m: f64,
}

impl PushAction {
    /// Push from `start` towards `end`, always [`PUSH_LENGTH`] long.
    pub fn towards(start: [f64; 3], end: [f64; 3]) -> Result<Self, ActionError> {
        let dx = end[0] - start[0];
        let dy = end[1] - start[1];
        let distance = dx.hypot(dy);
        if distance < MIN_PUSH_DISTANCE {
            return Err(ActionError::DegenerateDirection { distance });
        }
        Ok(Self {
            position_m: start,
            direction: [dx / distance, dy / distance, 0.0],
            length_m: PUSH_LENGTH,
        })
    }

    /// Where the pusher tip ends up.
    pub fn end_point(&self) -> [f64; 3] {
        [
            self.position_m[0] + self.length_m * self.direction[0],
            self.position_m[1] + self.length_m * self.direction[1],
            self.position_m[2],
        ]
    }
}

/// Record exchanged between the planner, simulator and CLI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Action {
    Grasp(GraspAction),
    Push(PushAction),
}

/// Minimum-area rectangle around a mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    /// `(row, col)` in index coordinates.
    pub center: (f64, f64),
    pub long_side: f64,
    pub short_side: f64,
    /// Long-axis angle from the column axis towards the row axis, in
    /// `(-90, 90]`.
    pub tilt_deg: f64,
}

impl OrientedBox {
    pub fn area(&self) -> f64 {
        self.long_side * self.short_side
    }

    pub fn is_square(&self) -> bool {
        self.long_side - self.short_side <= SQUARE_TOLERANCE * self.long_side
    }
}

/// Wraps an angle in degrees into `(-90, 90]`.
pub fn wrap_half_turn(deg: f64) -> f64 {
    let mut a = deg % 180.0;
    if a <= -90.0 {
        a += 180.0;
    } else if a > 90.0 {
        a -= 180.0;
    }
    a
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (counter-clockwise in `(x, y)`) of the pixel corners of a
/// mask, as integer lattice points.
pub fn mask_hull(mask: &ObjectMask) -> Vec<(i64, i64)> {
    let (h, w) = mask.dims();
    let mut pts = Vec::new();
    for r in 0..h {
        let mut cols = (0..w).filter(|&c| mask.get(r, c));
        let Some(first) = cols.next() else { continue };
        let last = cols.last().unwrap_or(first);
        let (r, c0, c1) = (r as i64, first as i64, last as i64 + 1);
        pts.extend([(c0, r), (c0, r + 1), (c1, r), (c1, r + 1)]);
    }
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Minimum-area enclosing rectangle by rotating calipers over hull edges.
pub fn oriented_box(mask: &ObjectMask) -> Result<OrientedBox, ActionError> {
    if mask.is_empty() {
        return Err(ActionError::EmptyMask);
    }
    let hull: Vec<(f64, f64)> = mask_hull(mask)
        .into_iter()
        .map(|(x, y)| (x as f64, y as f64))
        .collect();
    let mut b = calipers(&hull);
    // Corners sit half a pixel away from the index grid.
    b.center = (b.center.0 - 0.5, b.center.1 - 0.5);
    Ok(b)
}

/// Minimum-area rectangle of `(x, y)` points, `x` along columns and `y`
/// along rows; `center` comes back as `(y, x)`.
pub fn oriented_box_of_points(points: &[(f64, f64)]) -> Option<OrientedBox> {
    let hull = point_hull(points);
    (!hull.is_empty()).then(|| calipers(&hull))
}

fn point_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let base = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= base + 2
                && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Rotating calipers over a convex hull given in order.
fn calipers(hull: &[(f64, f64)]) -> OrientedBox {
    let n = hull.len();
    let mut best: Option<(f64, (f64, f64), [f64; 4])> = None;
    for i in 0..n {
        let (ax, ay) = hull[i];
        let (bx, by) = hull[(i + 1) % n];
        let len = (bx - ax).hypot(by - ay);
        let u = if len > 0.0 {
            ((bx - ax) / len, (by - ay) / len)
        } else {
            (1.0, 0.0)
        };
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in hull {
            let pu = x * u.0 + y * u.1;
            let pv = -x * u.1 + y * u.0;
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.as_ref().is_none_or(|(a, _, _)| area < *a - 1e-9) {
            best = Some((area, u, [umin, umax, vmin, vmax]));
        }
    }
    let (_, u, [umin, umax, vmin, vmax]) = best.expect("hull has edges");
    let (eu, ev) = (umax - umin, vmax - vmin);
    let (mu, mv) = ((umin + umax) / 2.0, (vmin + vmax) / 2.0);
    // Back from the (u, v) frame; v = (-u.1, u.0).
    let cx = mu * u.0 - mv * u.1;
    let cy = mu * u.1 + mv * u.0;
    let (long_side, short_side, axis) = if eu >= ev {
        (eu, ev, u)
    } else {
        (ev, eu, (-u.1, u.0))
    };
    OrientedBox {
        center: (cy, cx),
        long_side,
        short_side,
        tilt_deg: wrap_half_turn(axis.1.atan2(axis.0).to_degrees()),
    }
}

/// Gripper angle from the short side of the mask's oriented box.
pub fn grasp_angle(mask: &ObjectMask) -> Result<f64, ActionError> {
    Ok(grasp_angle_of_box(&oriented_box(mask)?))
}

pub fn grasp_angle_of_box(b: &OrientedBox) -> f64 {
    let short = wrap_half_turn(b.tilt_deg + 90.0);
    if !b.is_square() {
        return short;
    }
    let long = wrap_half_turn(b.tilt_deg);
    match short.abs().partial_cmp(&long.abs()) {
        Some(std::cmp::Ordering::Less) => short,
        Some(std::cmp::Ordering::Greater) => long,
        _ => short.max(long),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspPlan {
    pub action: GraspAction,
    pub pixel: (usize, usize),
    pub warning: Option<ActionWarning>,
}

fn check_dims(
    what: &'static str,
    expected: (usize, usize),
    actual: (usize, usize),
) -> Result<(), ActionError> {
    if expected != actual {
        return Err(ActionError::ShapeMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Grasp at the affordance maximum on the target, 2 cm below its surface.
pub fn make_grasp(
    affordance: &AffordanceMap,
    depth: Option<&DepthMap>,
    mask: &ObjectMask,
    camera: &CameraModel,
) -> Result<GraspPlan, ActionError> {
    if mask.is_empty() {
        return Err(ActionError::EmptyMask);
    }
    let depth = depth.ok_or(ActionError::DepthMissing)?;
    check_dims("mask", affordance.dims(), mask.dims())?;
    check_dims("depth", affordance.dims(), depth.dims())?;

    let global = affordance.argmax();
    let (pixel, warning) = if mask.get(global.0, global.1) {
        (global, None)
    } else {
        let inside = affordance
            .argmax_where(|r, c| mask.get(r, c))
            .expect("mask is non-empty");
        (inside, Some(ActionWarning::TargetMismatch))
    };
    let [x, y, h] = pixel_to_world(pixel, depth, camera)?;
    let z = (h - GRASP_DEPTH_OFFSET).max(camera.table_height);
    Ok(GraspPlan {
        action: GraspAction {
            position_m: [x, y, z],
            angle_deg: grasp_angle(mask)?,
        },
        pixel,
        warning,
    })
}

/// Push starting at the affordance maximum, heading for `end_world`.
pub fn make_push(
    affordance: &AffordanceMap,
    end_world: [f64; 3],
    depth: Option<&DepthMap>,
    camera: &CameraModel,
) -> Result<PushAction, ActionError> {
    let depth = depth.ok_or(ActionError::DepthMissing)?;
    check_dims("depth", affordance.dims(), depth.dims())?;
    let start = pixel_to_world(affordance.argmax(), depth, camera)?;
    PushAction::towards(start, end_world)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(
        h: usize,
        w: usize,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> ObjectMask {
        let mut m = ObjectMask::empty(h, w, "box");
        for r in rows {
            for c in cols.clone() {
                m.set(r, c, true);
            }
        }
        m
    }

    #[test]
    fn axis_aligned_rectangle() {
        let m = rect(32, 64, 10..20, 5..45);
        let b = oriented_box(&m).unwrap();
        assert_eq!((b.long_side, b.short_side), (40.0, 10.0));
        assert_eq!(b.tilt_deg, 0.0);
        assert_eq!(b.center, (14.5, 24.5));
        assert_eq!(grasp_angle(&m).unwrap(), 90.0);
    }

    #[test]
    fn tall_rectangle_tilts_ninety() {
        let m = rect(64, 32, 5..45, 10..20);
        let b = oriented_box(&m).unwrap();
        assert_eq!(b.tilt_deg, 90.0);
        assert_eq!(grasp_angle(&m).unwrap(), 0.0);
    }

    #[test]
    fn square_tie_break_prefers_zero() {
        let m = rect(32, 32, 4..14, 4..14);
        assert_eq!(grasp_angle(&m).unwrap(), 0.0);
        let b = OrientedBox {
            center: (0.0, 0.0),
            long_side: 5.0,
            short_side: 5.0,
            tilt_deg: 45.0,
        };
        // Candidates 45 and -45 tie on magnitude.
        assert_eq!(grasp_angle_of_box(&b), 45.0);
        let b = OrientedBox {
            tilt_deg: -45.0,
            ..b
        };
        assert_eq!(grasp_angle_of_box(&b), 45.0);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let m = ObjectMask::empty(16, 16, "x");
        assert!(matches!(oriented_box(&m), Err(ActionError::EmptyMask)));
        assert!(matches!(grasp_angle(&m), Err(ActionError::EmptyMask)));
    }

    #[test]
    fn single_pixel_box() {
        let m = rect(16, 16, 3..4, 7..8);
        let b = oriented_box(&m).unwrap();
        assert_eq!((b.long_side, b.short_side), (1.0, 1.0));
        assert_eq!(b.center, (3.0, 7.0));
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_half_turn(90.0), 90.0);
        assert_eq!(wrap_half_turn(-90.0), 90.0);
        assert_eq!(wrap_half_turn(120.0), -60.0);
        assert_eq!(wrap_half_turn(270.0), 90.0);
        assert_eq!(wrap_half_turn(-135.0), 45.0);
    }

    #[test]
    fn grasp_height_offsets_and_clamps() {
        let m = rect(16, 16, 4..8, 4..12);
        let mut raw = vec![0.0; 256];
        raw[5 * 16 + 6] = 1.0;
        let aff = crate::dataset::normalize_affordance(16, 16, &raw).unwrap();
        let cam = CameraModel::centered(16, 16, 100.0);
        let depth = DepthMap::new(16, 16, vec![0.30; 256]).unwrap();
        let plan = make_grasp(&aff, Some(&depth), &m, &cam).unwrap();
        assert!((plan.action.position_m[2] - 0.28).abs() < 1e-12);
        assert_eq!(plan.action.position_m[2], 0.30 - 0.02);
        assert_eq!(plan.warning, None);
        let thin = DepthMap::new(16, 16, vec![0.01; 256]).unwrap();
        let plan = make_grasp(&aff, Some(&thin), &m, &cam).unwrap();
        assert_eq!(plan.action.position_m[2], 0.0);
        assert!(matches!(
            make_grasp(&aff, None, &m, &cam),
            Err(ActionError::DepthMissing)
        ));
    }

    #[test]
    fn grasp_outside_mask_falls_back_inside() {
        let m = rect(16, 16, 4..8, 4..12);
        let mut raw = vec![0.0; 256];
        raw[0] = 5.0;
        raw[6 * 16 + 9] = 1.0;
        let aff = crate::dataset::normalize_affordance(16, 16, &raw).unwrap();
        let depth = DepthMap::zeros(16, 16);
        let plan = make_grasp(
            &aff,
            Some(&depth),
            &m,
            &CameraModel::centered(16, 16, 100.0),
        )
        .unwrap();
        assert_eq!(plan.pixel, (6, 9));
        assert_eq!(plan.warning, Some(ActionWarning::TargetMismatch));
    }

    #[test]
    fn diagonal_push() {
        let p = PushAction::towards([0.0, 0.0, 0.02], [1.0, 1.0, 0.0]).unwrap();
        assert!((p.direction[0] - 0.70711).abs() < 1e-5);
        assert!((p.direction[1] - 0.70711).abs() < 1e-5);
        assert_eq!(p.direction[2], 0.0);
        let end = p.end_point();
        assert!((end[0] - 0.09192).abs() < 1e-5);
        assert!((end[1] - 0.09192).abs() < 1e-5);
        assert_eq!(end[2], 0.02);
        assert_eq!(p.length_m, 0.13);
    }

    #[test]
    fn degenerate_push() {
        assert!(matches!(
            PushAction::towards([0.1, 0.2, 0.0], [0.1, 0.2, 0.5]),
            Err(ActionError::DegenerateDirection { .. })
        ));
        assert!(PushAction::towards([0.0, 0.0, 0.0], [0.0011, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn action_record_json() {
        let a = Action::Grasp(GraspAction {
            position_m: [0.1, -0.05, 0.03],
            angle_deg: -60.0,
        });
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(
            text,
            r#"{"type":"grasp","position_m":[0.1,-0.05,0.03],"angle_deg":-60.0}"#
        );
        let p = Action::Push(PushAction::towards([0.0; 3], [0.0, -1.0, 0.0]).unwrap());
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.starts_with(r#"{"type":"push","position_m":[0.0,0.0,0.0],"direction":[0.0,-1.0,0.0],"length_m":0.13}"#));
        assert_eq!(serde_json::from_str::<Action>(&text).unwrap(), p);
    }
}
