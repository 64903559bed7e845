//! Procedural object shapes and instruction templates, loaded from the
//! bundled library asset.

use serde::{Deserialize, Serialize};

use super::geometry::{self, Point, Pose};
use super::SimError;
use crate::dataset::Split;
use crate::planner::PushDirection;

pub const LIBRARY_VERSION: u32 = 1;
pub const LIBRARY_JSON: &str = include_str!("../../assets/object_library_v1.json");

/// How far a handle reaches back into the body it is attached to.
const HANDLE_OVERLAP: f64 = 0.004;
const ELLIPSE_SIDES: usize = 24;

pub const BODY_PART: &str = "body";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyKind {
    Ellipse,
    Capsule,
    Rect,
    Hexagon,
    Octagon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GripKind {
    /// Bar sticking out along the body's long axis.
    Handle,
    /// Bar lying on top of the body centre.
    Knob,
}

impl GripKind {
    pub fn part_name(self) -> &'static str {
        match self {
            GripKind::Handle => "handle",
            GripKind::Knob => "knob",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub kind: BodyKind,
    pub length: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripSpec {
    pub kind: GripKind,
    pub length: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub id: String,
    pub category: String,
    pub split: Split,
    pub body: BodySpec,
    pub grip: GripSpec,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    pub grasp: Vec<String>,
    pub push: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionTemplates {
    /// Phrasings used for training and the seen scenes.
    pub seen: TemplateSet,
    /// Phrasings reserved for the unseen scenes.
    pub unseen: TemplateSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionPhrases {
    pub left: String,
    pub right: String,
    pub forward: String,
    pub backward: String,
}

impl DirectionPhrases {
    pub fn get(&self, d: PushDirection) -> &str {
        match d {
            PushDirection::Left => &self.left,
            PushDirection::Right => &self.right,
            PushDirection::Forward => &self.forward,
            PushDirection::Backward => &self.backward,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectLibrary {
    pub version: u32,
    pub instructions: InstructionTemplates,
    pub directions: DirectionPhrases,
    pub palette: Vec<[u8; 3]>,
    pub shapes: Vec<ShapeSpec>,
}

pub const DIRECTIONS: [PushDirection; 4] = [
    PushDirection::Left,
    PushDirection::Right,
    PushDirection::Forward,
    PushDirection::Backward,
];

fn fill(template: &str, category: &str, part: &str, direction: &str) -> String {
    template
        .replace("{category}", category)
        .replace("{part}", part)
        .replace("{direction}", direction)
}

impl ObjectLibrary {
    /// The library compiled into this build.
    pub fn bundled() -> Result<Self, SimError> {
        Self::from_json(LIBRARY_JSON)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let lib: Self =
            serde_json::from_str(text).map_err(|e| SimError::Library(e.to_string()))?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Library(m));
        if self.version != LIBRARY_VERSION {
            return bad(format!("unsupported library version {}", self.version));
        }
        if self.palette.is_empty() {
            return bad("empty palette".into());
        }
        for set in [&self.instructions.seen, &self.instructions.unseen] {
            if set.grasp.is_empty() || set.push.is_empty() {
                return bad("every split needs grasp and push templates".into());
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.shapes {
            if !ids.insert(s.id.as_str()) {
                return bad(format!("duplicate shape id {}", s.id));
            }
            if s.category.trim().is_empty() {
                return bad(format!("shape {} has no category", s.id));
            }
            let dims = [s.body.length, s.body.width, s.grip.length, s.grip.width, s.height];
            if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return bad(format!("shape {} has a non-positive dimension", s.id));
            }
            if s.grip.width >= s.body.width {
                return bad(format!("shape {} grip is wider than its body", s.id));
            }
        }
        Ok(())
    }

    pub fn shapes(&self, split: Split) -> Vec<&ShapeSpec> {
        self.shapes.iter().filter(|s| s.split == split).collect()
    }

    pub fn shape(&self, id: &str) -> Option<&ShapeSpec> {
        self.shapes.iter().find(|s| s.id == id)
    }

    fn templates(&self, split: Split) -> &TemplateSet {
        match split {
            Split::Seen => &self.instructions.seen,
            Split::Unseen => &self.instructions.unseen,
        }
    }

    pub fn grasp_instruction(&self, split: Split, template: usize, category: &str, part: &str) -> String {
        let t = &self.templates(split).grasp;
        fill(&t[template % t.len()], category, part, "")
    }

    pub fn push_instruction(
        &self,
        split: Split,
        template: usize,
        category: &str,
        direction: PushDirection,
    ) -> String {
        let t = &self.templates(split).push;
        fill(&t[template % t.len()], category, "", self.directions.get(direction))
    }

    pub fn grasp_template_count(&self, split: Split) -> usize {
        self.templates(split).grasp.len()
    }

    pub fn push_template_count(&self, split: Split) -> usize {
        self.templates(split).push.len()
    }

    /// Every phrasing of `split` for `category` and its grip part.
    pub fn all_instructions(&self, split: Split, category: &str, grip: GripKind) -> Vec<String> {
        let mut out: Vec<String> = (0..self.grasp_template_count(split))
            .map(|k| self.grasp_instruction(split, k, category, grip.part_name()))
            .collect();
        for k in 0..self.push_template_count(split) {
            for d in DIRECTIONS {
                out.push(self.push_instruction(split, k, category, d));
            }
        }
        out
    }

    /// Object of shape `spec` at `pose`, every length multiplied by `scale`.
    pub fn instantiate(&self, spec: &ShapeSpec, pose: Pose, scale: f64, color: [u8; 3]) -> SimObject {
        let (l, w) = (spec.body.length * scale, spec.body.width * scale);
        let body = match spec.body.kind {
            BodyKind::Ellipse => geometry::ellipse(l, w, ELLIPSE_SIDES),
            BodyKind::Capsule => geometry::capsule(l, w, ELLIPSE_SIDES / 4),
            BodyKind::Rect => geometry::rect(l, w),
            BodyKind::Hexagon => geometry::hexagon(l, w),
            BodyKind::Octagon => geometry::octagon(l, w),
        };
        let (gl, gw) = (spec.grip.length * scale, spec.grip.width * scale);
        let grip = match spec.grip.kind {
            GripKind::Handle => {
                let x0 = l / 2.0 - HANDLE_OVERLAP * scale;
                geometry::bar(x0, x0 + gl, gw)
            }
            GripKind::Knob => geometry::bar(-gl / 2.0, gl / 2.0, gw),
        };
        let mut pieces = vec![body.clone()];
        if spec.grip.kind == GripKind::Handle {
            pieces.push(grip.clone());
        }
        let part_name = spec.grip.kind.part_name();
        let parts = vec![
            Part {
                name: BODY_PART.to_string(),
                polygon: body,
                instructions: (0..self.push_template_count(Split::Seen))
                    .flat_map(|k| DIRECTIONS.map(|d| self.push_instruction(Split::Seen, k, &spec.category, d)))
                    .collect(),
            },
            Part {
                name: part_name.to_string(),
                polygon: grip,
                instructions: (0..self.grasp_template_count(Split::Seen))
                    .map(|k| self.grasp_instruction(Split::Seen, k, &spec.category, part_name))
                    .collect(),
            },
        ];
        SimObject {
            shape_id: spec.id.clone(),
            category: spec.category.clone(),
            pose,
            height: spec.height * scale,
            color,
            grip: spec.grip.kind,
            pieces,
            parts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub name: String,
    /// Convex outline in the object frame.
    pub polygon: Vec<Point>,
    pub instructions: Vec<String>,
}

/// A rigid tabletop object: a union of convex pieces in its own frame,
/// placed by `pose`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub shape_id: String,
    pub category: String,
    pub pose: Pose,
    pub height: f64,
    pub color: [u8; 3],
    pub grip: GripKind,
    pub pieces: Vec<Vec<Point>>,
    pub parts: Vec<Part>,
}

impl SimObject {
    pub fn world_pieces(&self) -> Vec<Vec<Point>> {
        self.pieces.iter().map(|p| geometry::transform(p, &self.pose)).collect()
    }

    pub fn part(&self, name: &str) -> Option<&Part> {
        self.parts.iter().find(|p| p.name == name)
    }

    pub fn world_part(&self, name: &str) -> Option<Vec<Point>> {
        self.part(name).map(|p| geometry::transform(&p.polygon, &self.pose))
    }

    pub fn grip_part(&self) -> &str {
        self.grip.part_name()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.world_pieces().iter().any(|poly| geometry::contains(poly, p))
    }

    /// Footprint area; pieces overlap only where a handle meets the body.
    pub fn area(&self) -> f64 {
        self.pieces.iter().map(|p| geometry::area(p)).sum()
    }

    pub fn world_vertices(&self) -> Vec<Point> {
        self.world_pieces().into_iter().flatten().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_library_is_valid() {
        let lib = ObjectLibrary::bundled().unwrap();
        assert!(lib.shapes(Split::Seen).len() >= 10);
        assert!(!lib.shapes(Split::Unseen).is_empty());
    }

    #[test]
    fn objects_have_two_parts_and_instructions() {
        let lib = ObjectLibrary::bundled().unwrap();
        for spec in &lib.shapes {
            let o = lib.instantiate(spec, Pose::default(), 1.0, [1, 2, 3]);
            assert!(o.parts.len() >= 2);
            assert!(o.parts.iter().all(|p| !p.instructions.is_empty()));
            assert!(o.height > 0.0);
        }
    }

    #[test]
    fn grip_word_present_in_part_instructions() {
        let lib = ObjectLibrary::bundled().unwrap();
        let s = lib.grasp_instruction(Split::Seen, 0, "mug", "handle");
        assert_eq!(s, "pick up the mug by the handle");
        let p = lib.push_instruction(Split::Unseen, 2, "jar", PushDirection::Left);
        assert_eq!(p, "slide the jar to the left for me");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(LIBRARY_JSON).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(ObjectLibrary::from_json(&v.to_string()).is_err());
    }
}
