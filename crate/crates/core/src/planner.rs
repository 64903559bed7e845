//! Scene-grounded action selection through a text-completion client.
//!
//! A prompt lists the detected objects with their boxes and the instruction;
//! the client answers with a one-line decision record such as
//! `{action: push, target: "cup", end: (30, 5), rationale: "..."}`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::ClientError;
use crate::dataset::{ImageRgb, ObjectMask};

/// Template revision bundled with this build.
pub const PROMPT_TEMPLATE_VERSION: u32 = 1;
pub const PROMPT_TEMPLATE: &str = include_str!("../assets/planner_prompt_v1.txt");

/// Total client calls per plan, including the first.
pub const PLAN_ATTEMPTS: usize = 3;

pub const NO_OBJECTS_MARKER: &str = "(no objects detected)";

const EXCERPT_CHARS: usize = 120;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("no decision record in response: {excerpt:?}")]
    MalformedResponse { excerpt: String },
    #[error("invalid decision ({reason}): {excerpt:?}")]
    InvalidDecision { reason: String, excerpt: String },
    #[error("planning failed after {attempts} attempts: {last}")]
    PlanningFailed { attempts: usize, last: String },
    #[error("planner client failed: {0}")]
    ClientFailure(#[from] ClientError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: String,
    /// `(row_min, col_min, row_max, col_max)`, inclusive pixel indices.
    pub bbox: (usize, usize, usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDescription {
    pub height: usize,
    pub width: usize,
    pub objects: Vec<SceneObject>,
    pub image: Option<ImageRgb>,
}

impl SceneDescription {
    /// One entry per non-empty mask, boxes taken from the masks.
    pub fn from_masks(height: usize, width: usize, masks: &[ObjectMask]) -> Self {
        let objects = masks
            .iter()
            .filter_map(|m| {
                m.bbox().map(|bbox| SceneObject {
                    category: m.category().to_string(),
                    bbox,
                })
            })
            .collect();
        Self {
            height,
            width,
            objects,
            image: None,
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        for o in &self.objects {
            if o.category.trim().is_empty() {
                return Err(PlannerError::InvalidScene("empty category".into()));
            }
            let (r0, c0, r1, c1) = o.bbox;
            if r0 > r1 || c0 > c1 || r1 >= self.height || c1 >= self.width {
                return Err(PlannerError::InvalidScene(format!(
                    "box {:?} of {} outside {}x{} frame",
                    o.bbox, o.category, self.height, self.width
                )));
            }
        }
        Ok(())
    }

    pub fn find(&self, category: &str) -> Option<&SceneObject> {
        let wanted = category.trim().to_lowercase();
        self.objects
            .iter()
            .find(|o| o.category.trim().to_lowercase() == wanted)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Grasp,
    Push,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionKind::Grasp => "grasp",
            ActionKind::Push => "push",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerDecision {
    pub action: ActionKind,
    pub target: String,
    /// `(row, col)`; present exactly for pushes.
    pub end_pixel: Option<(usize, usize)>,
    pub rationale: String,
}

fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for ch in text.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl fmt::Display for PlannerDecision {
    /// Canonical single-line record.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{action: {}, target: {}",
            self.action,
            quote(&self.target)
        )?;
        if let Some((r, c)) = self.end_pixel {
            write!(f, ", end: ({r}, {c})")?;
        }
        write!(f, ", rationale: {}}}", quote(&self.rationale))
    }
}

pub trait PlannerClient: Send + Sync {
    fn complete(&self, prompt: &str, image: Option<&ImageRgb>) -> Result<String, ClientError>;
}

fn fill_template(template: &str, fields: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        for (name, value) in fields {
            let token = format!("{{{name}}}");
            if rest[open..].starts_with(&token) {
                out.push_str(&rest[..open]);
                out.push_str(value);
                rest = &rest[open + token.len()..];
                continue 'scan;
            }
        }
        out.push_str(&rest[..=open]);
        rest = &rest[open + 1..];
    }
    out.push_str(rest);
    out
}

pub fn format_object(o: &SceneObject) -> String {
    let (r0, c0, r1, c1) = o.bbox;
    format!("{} @ ({r0},{c0},{r1},{c1})", o.category)
}

/// Fills the bundled template with the scene and instruction.
pub fn build_prompt(scene: &SceneDescription, instruction: &str) -> String {
    let objects = if scene.objects.is_empty() {
        format!("- {NO_OBJECTS_MARKER}")
    } else {
        scene
            .objects
            .iter()
            .map(|o| format!("- {}", format_object(o)))
            .collect::<Vec<_>>()
            .join("\n")
    };
    fill_template(
        PROMPT_TEMPLATE,
        &[
            ("height", &scene.height.to_string()),
            ("width", &scene.width.to_string()),
            ("objects", &objects),
            ("instruction", instruction),
        ],
    )
}

fn excerpt(text: &str) -> String {
    text.chars().take(EXCERPT_CHARS).collect()
}

/// Byte range of the `{...}` block opening at `start`, honouring quotes
/// and nested brackets.
fn block_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0i32;
    let mut in_quote = false;
    let mut escaped = false;
    for (i, ch) in text[start..].char_indices() {
        if in_quote {
            match (escaped, ch) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_quote = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_quote = true,
            '{' | '(' | '[' => depth += 1,
            '}' | ')' | ']' => {
                depth -= 1;
                if depth == 0 {
                    return (ch == '}').then_some(start + i);
                }
                if depth < 0 {
                    return None;
                }
            }
            _ => {}
        }
    }
    None
}

/// Splits `a: 1, b: (2, 3)` at top-level commas.
fn split_fields(body: &str) -> Option<Vec<&str>> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut in_quote = false;
    let mut escaped = false;
    let mut from = 0;
    for (i, ch) in body.char_indices() {
        if in_quote {
            match (escaped, ch) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_quote = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_quote = true,
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&body[from..i]);
                from = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return None;
        }
    }
    if in_quote || depth != 0 {
        return None;
    }
    parts.push(&body[from..]);
    Some(parts)
}

fn unquote(value: &str) -> Option<String> {
    let v = value.trim();
    let Some(inner) = v.strip_prefix('"') else {
        return Some(v.to_string());
    };
    let inner = inner.strip_suffix('"')?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            if ch == '"' {
                return None;
            }
            out.push(ch);
            continue;
        }
        match chars.next()? {
            'n' => out.push('\n'),
            'r' => out.push('\r'),
            't' => out.push('\t'),
            c @ ('"' | '\\') => out.push(c),
            _ => return None,
        }
    }
    Some(out)
}

fn parse_pixel(value: &str) -> Option<(i64, i64)> {
    let inner = value.trim().strip_prefix('(')?.strip_suffix(')')?;
    let mut it = inner.split(',');
    let num = |s: &str| -> Option<i64> {
        let s = s.trim();
        s.parse::<i64>().ok().or_else(|| {
            s.parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .map(|f| f.round() as i64)
        })
    };
    let r = num(it.next()?)?;
    let c = num(it.next()?)?;
    if it.next().is_some() {
        return None;
    }
    Some((r, c))
}

#[derive(Default)]
struct RawRecord {
    action: Option<String>,
    target: Option<String>,
    end: Option<String>,
    rationale: Option<String>,
}

/// Key-value fields of a block, or `None` if it is not a record at all.
fn raw_record(block: &str) -> Option<Result<RawRecord, String>> {
    let body = &block[1..block.len() - 1];
    let fields = split_fields(body)?;
    let mut rec = RawRecord::default();
    let mut any_action = false;
    let mut problems = Vec::new();
    for field in fields {
        if field.trim().is_empty() {
            continue;
        }
        let Some((key, value)) = field.split_once(':') else {
            problems.push(format!("field without key: {}", field.trim()));
            continue;
        };
        let key = key.trim().trim_matches('"').to_lowercase();
        let slot = match key.as_str() {
            "action" => {
                any_action = true;
                &mut rec.action
            }
            "target" => &mut rec.target,
            "end" => &mut rec.end,
            "rationale" => &mut rec.rationale,
            other => {
                problems.push(format!("unknown key {other:?}"));
                continue;
            }
        };
        if slot.is_some() {
            problems.push(format!("duplicate key {key:?}"));
        }
        *slot = Some(value.trim().to_string());
    }
    if !any_action {
        return None;
    }
    Some(match problems.into_iter().next() {
        Some(p) => Err(p),
        None => Ok(rec),
    })
}

fn decide(rec: RawRecord, scene: &SceneDescription) -> Result<PlannerDecision, String> {
    let action_text = unquote(rec.action.as_deref().unwrap_or_default())
        .ok_or("bad quoting in action")?
        .to_lowercase();
    let action = match action_text.as_str() {
        "grasp" => ActionKind::Grasp,
        "push" => ActionKind::Push,
        other => return Err(format!("unknown action {other:?}")),
    };
    let target_text =
        unquote(rec.target.as_deref().ok_or("missing target")?).ok_or("bad quoting in target")?;
    let target = scene
        .find(&target_text)
        .ok_or_else(|| format!("target {target_text:?} is not in the scene"))?
        .category
        .clone();
    let rationale = match rec.rationale.as_deref() {
        Some(r) => unquote(r).ok_or("bad quoting in rationale")?,
        None => String::new(),
    };
    let end_pixel = match (action, rec.end.as_deref()) {
        (ActionKind::Grasp, Some(_)) => return Err("grasp must not give an end pixel".into()),
        (ActionKind::Grasp, None) => None,
        (ActionKind::Push, None) => return Err("push needs an end pixel".into()),
        (ActionKind::Push, Some(v)) => {
            let (r, c) = parse_pixel(v).ok_or_else(|| format!("bad end pixel {v:?}"))?;
            if scene.height == 0 || scene.width == 0 {
                return Err("scene has an empty frame".into());
            }
            let r = r.clamp(0, scene.height as i64 - 1) as usize;
            let c = c.clamp(0, scene.width as i64 - 1) as usize;
            Some((r, c))
        }
    };
    Ok(PlannerDecision {
        action,
        target,
        end_pixel,
        rationale,
    })
}

/// Extracts and validates the first decision record in `response`. Push end
/// pixels are clamped into the frame.
pub fn parse_decision(
    response: &str,
    scene: &SceneDescription,
) -> Result<PlannerDecision, PlannerError> {
    let mut from = 0;
    while let Some(rel) = response[from..].find('{') {
        let start = from + rel;
        let Some(end) = block_end(response, start) else {
            from = start + 1;
            continue;
        };
        let block = &response[start..=end];
        match raw_record(block) {
            None => from = start + 1,
            Some(Err(reason)) => {
                return Err(PlannerError::InvalidDecision {
                    reason,
                    excerpt: excerpt(block),
                })
            }
            Some(Ok(rec)) => {
                return decide(rec, scene).map_err(|reason| PlannerError::InvalidDecision {
                    reason,
                    excerpt: excerpt(block),
                })
            }
        }
    }
    Err(PlannerError::MalformedResponse {
        excerpt: excerpt(response),
    })
}

fn corrective_suffix(error: &PlannerError) -> String {
    format!(
        "\n\nYour previous reply could not be used ({error}). \
         Reply with exactly one decision record in the required format."
    )
}

/// Prompt, query, parse; unusable replies are retried with a corrective
/// note, up to [`PLAN_ATTEMPTS`] calls in total.
pub fn plan(
    scene: &SceneDescription,
    instruction: &str,
    client: &dyn PlannerClient,
) -> Result<PlannerDecision, PlannerError> {
    scene.validate()?;
    if instruction.trim().is_empty() {
        return Err(PlannerError::InvalidScene("instruction is empty".into()));
    }
    let base = build_prompt(scene, instruction);
    let mut prompt = base.clone();
    let mut last = String::new();
    for _ in 0..PLAN_ATTEMPTS {
        let response = client.complete(&prompt, scene.image.as_ref())?;
        match parse_decision(&response, scene) {
            Ok(d) => return Ok(d),
            Err(e) => {
                prompt = format!("{base}{}", corrective_suffix(&e));
                last = e.to_string();
            }
        }
    }
    Err(PlannerError::PlanningFailed {
        attempts: PLAN_ATTEMPTS,
        last,
    })
}

const PUSH_WORDS: &[&str] = &["push", "shove", "nudge", "slide", "move"];
const GRASP_WORDS: &[&str] = &[
    "pick", "grab", "grasp", "lift", "take", "hold", "seize", "raise", "get",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PushDirection {
    Left,
    Right,
    Forward,
    Backward,
}

impl PushDirection {
    /// Unit direction in the `(x, y)` table frame (`y` grows with rows).
    pub fn unit(self) -> [f64; 2] {
        match self {
            PushDirection::Left => [-1.0, 0.0],
            PushDirection::Right => [1.0, 0.0],
            PushDirection::Forward => [0.0, -1.0],
            PushDirection::Backward => [0.0, 1.0],
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            PushDirection::Left => "left",
            PushDirection::Right => "right",
            PushDirection::Forward => "forward",
            PushDirection::Backward => "backward",
        }
    }

    /// First direction word in an instruction.
    pub fn from_instruction(text: &str) -> Option<Self> {
        words(text).find_map(|w| match w.as_str() {
            "left" | "leftward" | "leftwards" => Some(PushDirection::Left),
            "right" | "rightward" | "rightwards" => Some(PushDirection::Right),
            "forward" | "forwards" | "up" | "away" | "ahead" => Some(PushDirection::Forward),
            "backward" | "backwards" | "back" | "down" | "toward" | "towards" => {
                Some(PushDirection::Backward)
            }
            _ => None,
        })
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// Longest scene category that appears as a whole-word phrase.
fn match_target<'a>(instruction: &str, objects: &'a [SceneObject]) -> Option<&'a SceneObject> {
    let padded = format!(" {} ", words(instruction).collect::<Vec<_>>().join(" "));
    objects
        .iter()
        .filter(|o| {
            let cat = words(&o.category).collect::<Vec<_>>().join(" ");
            !cat.is_empty() && padded.contains(&format!(" {cat} "))
        })
        .max_by_key(|o| o.category.len())
}

/// Keyword rules over the prompt text; needs no model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RuleStubPlanner;

impl RuleStubPlanner {
    /// End pixel one box extent past the object in `direction`, unclamped.
    pub fn end_pixel(bbox: (usize, usize, usize, usize), direction: PushDirection) -> (i64, i64) {
        let (r0, c0, r1, c1) = (bbox.0 as i64, bbox.1 as i64, bbox.2 as i64, bbox.3 as i64);
        let (width, height) = (c1 - c0, r1 - r0);
        let (row, col) = ((r0 + r1) / 2, (c0 + c1) / 2);
        match direction {
            PushDirection::Left => (row, c0 - width),
            PushDirection::Right => (row, c1 + width),
            PushDirection::Forward => (r0 - height, col),
            PushDirection::Backward => (r1 + height, col),
        }
    }

    fn respond(prompt: &str) -> Option<String> {
        let instruction = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Instruction: "))?
            .trim();
        let objects: Vec<SceneObject> = prompt
            .lines()
            .filter_map(|l| {
                let l = l.strip_prefix("- ")?;
                let (cat, rest) = l.rsplit_once(" @ ")?;
                let nums: Vec<usize> = rest
                    .trim()
                    .strip_prefix('(')?
                    .strip_suffix(')')?
                    .split(',')
                    .map(|n| n.trim().parse().ok())
                    .collect::<Option<_>>()?;
                let [r0, c0, r1, c1] = nums[..] else {
                    return None;
                };
                Some(SceneObject {
                    category: cat.to_string(),
                    bbox: (r0, c0, r1, c1),
                })
            })
            .collect();

        let verb = words(instruction).find_map(|w| {
            if PUSH_WORDS.contains(&w.as_str()) {
                Some(ActionKind::Push)
            } else if GRASP_WORDS.contains(&w.as_str()) {
                Some(ActionKind::Grasp)
            } else {
                None
            }
        })?;
        let target = match_target(instruction, &objects)?;
        let decision = match verb {
            ActionKind::Grasp => format!(
                "{{action: grasp, target: {}, rationale: \"grasp verb in the instruction\"}}",
                quote(&target.category)
            ),
            ActionKind::Push => {
                let dir = PushDirection::from_instruction(instruction)?;
                let (r, c) = Self::end_pixel(target.bbox, dir);
                format!(
                    "{{action: push, target: {}, end: ({r}, {c}), rationale: \"push {}\"}}",
                    quote(&target.category),
                    dir.word()
                )
            }
        };
        Some(format!("Decision: {decision}"))
    }
}

impl PlannerClient for RuleStubPlanner {
    fn complete(&self, prompt: &str, _image: Option<&ImageRgb>) -> Result<String, ClientError> {
        Ok(Self::respond(prompt).unwrap_or_else(|| "I cannot tell what to do here.".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cup_scene() -> SceneDescription {
        SceneDescription {
            height: 96,
            width: 96,
            objects: vec![SceneObject {
                category: "cup".into(),
                bbox: (10, 10, 50, 60),
            }],
            image: None,
        }
    }

    #[test]
    fn template_fill_is_single_pass() {
        let out = fill_template("a {x} {y} {z}", &[("x", "{y}"), ("y", "2")]);
        assert_eq!(out, "a {y} 2 {z}");
    }

    #[test]
    fn prompt_lists_objects_and_instruction() {
        let p = build_prompt(&cup_scene(), "push the cup to the left");
        assert!(p.contains("cup @ (10,10,50,60)"));
        assert!(p.contains("Instruction: push the cup to the left"));
        assert!(p.contains("Output format"));
        assert!(p.contains("96x96"));
    }

    #[test]
    fn empty_scene_prompt_has_marker() {
        let scene = SceneDescription {
            objects: vec![],
            ..cup_scene()
        };
        let p = build_prompt(&scene, "push it");
        assert!(p.contains(NO_OBJECTS_MARKER));
        assert!(p.contains("Instruction: push it"));
    }

    #[test]
    fn parses_bare_and_quoted_values() {
        let d = parse_decision(
            "Sure. {action: push, target: cup, end: (30, 5)} done",
            &cup_scene(),
        )
        .unwrap();
        assert_eq!(d.action, ActionKind::Push);
        assert_eq!(d.target, "cup");
        assert_eq!(d.end_pixel, Some((30, 5)));
        let d = parse_decision(
            r#"{action: "grasp", target: "CUP", rationale: "say \"hi\"\n"}"#,
            &cup_scene(),
        )
        .unwrap();
        assert_eq!(d.target, "cup");
        assert_eq!(d.rationale, "say \"hi\"\n");
    }

    #[test]
    fn chatter_braces_are_skipped() {
        let d = parse_decision(
            "Using {json} style: {action: grasp, target: cup}",
            &cup_scene(),
        )
        .unwrap();
        assert_eq!(d.action, ActionKind::Grasp);
    }

    #[test]
    fn invariant_violations_are_typed() {
        let scene = cup_scene();
        for bad in [
            "{action: push, target: cup}",
            "{action: grasp, target: cup, end: (1, 2)}",
            "{action: push, target: plate, end: (1, 2)}",
            "{action: fly, target: cup}",
            "{action: push, target: cup, end: (1, 2), end: (3, 4)}",
            "{action: push, target: cup, end: (a, b)}",
        ] {
            assert!(
                matches!(
                    parse_decision(bad, &scene),
                    Err(PlannerError::InvalidDecision { .. })
                ),
                "{bad}"
            );
        }
        assert!(matches!(
            parse_decision("I cannot help", &scene),
            Err(PlannerError::MalformedResponse { .. })
        ));
    }

    #[test]
    fn end_pixel_is_clamped() {
        let d =
            parse_decision("{action: push, target: cup, end: (30, -40)}", &cup_scene()).unwrap();
        assert_eq!(d.end_pixel, Some((30, 0)));
        let d = parse_decision(
            "{action: push, target: cup, end: (500, 12.6)}",
            &cup_scene(),
        )
        .unwrap();
        assert_eq!(d.end_pixel, Some((95, 13)));
    }

    #[test]
    fn canonical_record_round_trips() {
        let d = PlannerDecision {
            action: ActionKind::Push,
            target: "cup".into(),
            end_pixel: Some((30, 5)),
            rationale: "a, b: (c) {d} \"e\"".into(),
        };
        let text = d.to_string();
        assert_eq!(
            text,
            r#"{action: push, target: "cup", end: (30, 5), rationale: "a, b: (c) {d} \"e\""}"#
        );
        assert_eq!(parse_decision(&text, &cup_scene()).unwrap(), d);
    }

    #[test]
    fn stub_end_pixel_rule() {
        assert_eq!(
            RuleStubPlanner::end_pixel((10, 10, 50, 60), PushDirection::Left),
            (30, -40)
        );
        assert_eq!(
            RuleStubPlanner::end_pixel((10, 10, 50, 60), PushDirection::Backward),
            (90, 35)
        );
    }
}
