//! Planar polygon helpers in table coordinates (meters).

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

/// Planar pose; `yaw_deg` turns the local `+x` axis towards `+y`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw_deg: f64,
}

impl Pose {
    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        [c * p[0] - s * p[1] + self.x, s * p[0] + c * p[1] + self.y]
    }
}

pub fn transform(poly: &[Point], pose: &Pose) -> Vec<Point> {
    poly.iter().map(|p| pose.apply(*p)).collect()
}

pub fn translate(poly: &[Point], by: Point) -> Vec<Point> {
    poly.iter().map(|p| [p[0] + by[0], p[1] + by[1]]).collect()
}

fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

pub fn area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

/// Area centroid; the vertex mean for degenerate polygons.
pub fn centroid(poly: &[Point]) -> Point {
    let a = signed_area(poly);
    let n = poly.len();
    if a.abs() < 1e-15 {
        let k = n.max(1) as f64;
        return [
            poly.iter().map(|p| p[0]).sum::<f64>() / k,
            poly.iter().map(|p| p[1]).sum::<f64>() / k,
        ];
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let w = p[0] * q[1] - q[0] * p[1];
        cx += (p[0] + q[0]) * w;
        cy += (p[1] + q[1]) * w;
    }
    [cx / (6.0 * a), cy / (6.0 * a)]
}

/// Crossing-number test, half-open on the upper and right edges so that
/// polygons sharing an edge never both claim a sample point.
pub fn contains(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn counter_clockwise(poly: &[Point]) -> Vec<Point> {
    let mut out = poly.to_vec();
    if signed_area(poly) < 0.0 {
        out.reverse();
    }
    out
}

/// First parameter `t` in `[0, t_max]` at which `origin + t * dir` touches
/// the closed convex polygon; `Some(0.0)` when the origin is already in it.
pub fn ray_entry(poly: &[Point], origin: Point, dir: Point, t_max: f64) -> Option<f64> {
    let poly = counter_clockwise(poly);
    let n = poly.len();
    let (mut enter, mut exit) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        // Outward normal of a counter-clockwise edge.
        let normal = [b[1] - a[1], a[0] - b[0]];
        let offset = normal[0] * (origin[0] - a[0]) + normal[1] * (origin[1] - a[1]);
        let slope = normal[0] * dir[0] + normal[1] * dir[1];
        if slope == 0.0 {
            if offset > 0.0 {
                return None;
            }
            continue;
        }
        let t = -offset / slope;
        if slope < 0.0 {
            enter = enter.max(t);
        } else {
            exit = exit.min(t);
        }
    }
    let t = enter.max(0.0);
    (t <= exit && t <= t_max).then_some(t)
}

/// True when no axis separates the convex polygons by at least `margin`.
pub fn convex_overlap(a: &[Point], b: &[Point], margin: f64) -> bool {
    for poly in [a, b] {
        let n = poly.len();
        for i in 0..n {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            let len = (q[0] - p[0]).hypot(q[1] - p[1]);
            if len == 0.0 {
                continue;
            }
            let axis = [(p[1] - q[1]) / len, (q[0] - p[0]) / len];
            let span = |poly: &[Point]| {
                poly.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| {
                    let d = v[0] * axis[0] + v[1] * axis[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (a0, a1) = span(a);
            let (b0, b1) = span(b);
            if a1 + margin <= b0 || b1 + margin <= a0 {
                return false;
            }
        }
    }
    true
}

/// Regular `sides`-gon inscribed in an axis-aligned ellipse.
pub fn ellipse(length: f64, width: f64, sides: usize) -> Vec<Point> {
    (0..sides)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / sides as f64;
            [length / 2.0 * t.cos(), width / 2.0 * t.sin()]
        })
        .collect()
}

/// Axis-aligned rectangle spanning `x0..x1` by `-width/2..width/2`.
pub fn bar(x0: f64, x1: f64, width: f64) -> Vec<Point> {
    let h = width / 2.0;
    vec![[x0, -h], [x1, -h], [x1, h], [x0, h]]
}

pub fn rect(length: f64, width: f64) -> Vec<Point> {
    bar(-length / 2.0, length / 2.0, width)
}

/// Hexagon with shallow points at both ends of `x`.
pub fn hexagon(length: f64, width: f64) -> Vec<Point> {
    let (l, w) = (length / 2.0, width / 2.0);
    let s = (l - 0.35 * w).max(0.0);
    vec![
        [l, 0.0],
        [s, w],
        [-s, w],
        [-l, 0.0],
        [-s, -w],
        [s, -w],
    ]
}

/// Stadium: straight sides along `x` closed by half discs.
pub fn capsule(length: f64, width: f64, arc_sides: usize) -> Vec<Point> {
    let r = width.min(length) / 2.0;
    let s = length / 2.0 - r;
    let mut out = Vec::with_capacity(2 * arc_sides + 2);
    for (cx, start) in [(s, -std::f64::consts::FRAC_PI_2), (-s, std::f64::consts::FRAC_PI_2)] {
        for k in 0..=arc_sides {
            let t = start + std::f64::consts::PI * k as f64 / arc_sides as f64;
            out.push([cx + r * t.cos(), r * t.sin()]);
        }
    }
    out
}

/// Rectangle with corners cut by a quarter of the short side.
pub fn octagon(length: f64, width: f64) -> Vec<Point> {
    let (l, w) = (length / 2.0, width / 2.0);
    let c = width.min(length) / 4.0;
    vec![
        [l, -w + c],
        [l, w - c],
        [l - c, w],
        [-l + c, w],
        [-l, w - c],
        [-l, -w + c],
        [-l + c, -w],
        [l - c, -w],
    ]
}

pub fn angle_between(a: Point, b: Point) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1];
    let cross = a[0] * b[1] - a[1] * b[0];
    cross.atan2(dot).abs().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_area_and_centroid() {
        let sq = translate(&rect(2.0, 2.0), [1.0, 1.0]);
        assert_eq!(area(&sq), 4.0);
        assert_eq!(centroid(&sq), [1.0, 1.0]);
    }

    #[test]
    fn containment_is_half_open() {
        let sq = bar(0.0, 1.0, 2.0);
        assert!(contains(&sq, [0.0, -1.0]));
        assert!(!contains(&sq, [1.0, 0.0]));
        assert!(!contains(&sq, [0.5, 1.0]));
        assert!(contains(&sq, [0.5, 0.0]));
    }

    #[test]
    fn ray_hits_and_misses() {
        let sq = rect(2.0, 2.0);
        assert_eq!(ray_entry(&sq, [-3.0, 0.0], [1.0, 0.0], 5.0), Some(2.0));
        assert_eq!(ray_entry(&sq, [-3.0, 0.0], [1.0, 0.0], 1.5), None);
        assert_eq!(ray_entry(&sq, [-3.0, 2.0], [1.0, 0.0], 5.0), None);
        assert_eq!(ray_entry(&sq, [0.2, 0.1], [0.0, 1.0], 5.0), Some(0.0));
        assert_eq!(ray_entry(&sq, [3.0, 0.0], [1.0, 0.0], 5.0), None);
    }

    #[test]
    fn overlap_respects_margin() {
        let a = rect(2.0, 2.0);
        let b = translate(&a, [2.5, 0.0]);
        assert!(!convex_overlap(&a, &b, 0.1));
        assert!(convex_overlap(&a, &b, 0.6));
        assert!(convex_overlap(&a, &translate(&a, [1.0, 1.0]), 0.0));
    }

    #[test]
    fn pose_turns_towards_y() {
        let p = Pose { x: 1.0, y: 0.0, yaw_deg: 90.0 }.apply([1.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
    }
}
