//! Running agents over a task suite and tabulating success.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry;
use super::library::BODY_PART;
use super::render::{render, Rendered};
use super::scenario::{Task, TaskGoal};
use super::step::{part_grasp_angle, step};
use crate::action::{
    grasp_angle, make_grasp, make_push, Action, GraspAction, PushAction, GRASP_DEPTH_OFFSET,
    PUSH_LENGTH,
};
use crate::dataset::{AffordanceKind, AffordanceMap, Split};
use crate::encoders::{fnv1a64, Encoders};
use crate::model::{forward, Checkpoint};
use crate::planner::{plan, ActionKind, PlannerClient, PlannerDecision};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Planner, then the affordance peak inside the target.
    Ours,
    /// Planner, then the centre of the target's bounding box.
    BboxCenter,
    /// Ground-truth part centre and angle; no planner or model.
    Oracle,
    /// Planner, then a uniformly random pixel.
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::BboxCenter => "bbox-center",
            Method::Oracle => "oracle",
            Method::Random => "random",
        }
    }
}

pub struct EvalSetup<'a> {
    pub checkpoint: &'a Checkpoint,
    pub encoders: &'a Encoders,
    pub planner: &'a dyn PlannerClient,
    /// Seeds the random agent.
    pub seed: u64,
}

/// Privileged action: centre of the target part at its short-edge angle,
/// or a push from the body centre straight along the task direction.
pub fn oracle_action(task: &Task) -> Action {
    let obj = task.target_object();
    let table = task.scene.camera.table_height;
    match &task.goal {
        TaskGoal::GraspPart { part } => {
            let poly = obj.world_part(part).expect("task part exists");
            let c = geometry::centroid(&poly);
            let z = (table + obj.height - GRASP_DEPTH_OFFSET).max(table);
            Action::Grasp(GraspAction {
                position_m: [c[0], c[1], z],
                angle_deg: part_grasp_angle(&poly),
            })
        }
        TaskGoal::Push { direction, .. } => {
            let body = obj.world_part(BODY_PART).expect("every object has a body");
            let c = geometry::centroid(&body);
            let u = direction.unit();
            Action::Push(PushAction {
                position_m: [c[0], c[1], table],
                direction: [u[0], u[1], 0.0],
                length_m: PUSH_LENGTH,
            })
        }
    }
}

/// Index of the first rendered object whose category the planner named.
pub fn target_index(rendered: &Rendered, decision: &PlannerDecision) -> Result<usize, String> {
    rendered
        .masks
        .iter()
        .position(|m| m.category() == decision.target && !m.is_empty())
        .ok_or_else(|| format!("target {:?} not rendered", decision.target))
}

fn end_world(task: &Task, decision: &PlannerDecision) -> Result<[f64; 3], String> {
    let (r, c) = decision
        .end_pixel
        .ok_or_else(|| "push decision without end pixel".to_string())?;
    Ok(task.scene.camera.unproject(r as f64, c as f64, task.scene.camera.table_height))
}

/// Acts at a fixed pixel: a grasp there at the target mask's angle, or a
/// push from there towards the planner's end point.
pub fn pixel_action(
    task: &Task,
    rendered: &Rendered,
    decision: &PlannerDecision,
    target: usize,
    pixel: (usize, usize),
) -> Result<Action, String> {
    let cam = &task.scene.camera;
    let h = rendered.depth.get(pixel.0, pixel.1);
    let [x, y, _] = cam.unproject(pixel.0 as f64, pixel.1 as f64, h);
    match decision.action {
        ActionKind::Grasp => {
            let angle = grasp_angle(&rendered.masks[target]).map_err(|e| e.to_string())?;
            let z = (h - GRASP_DEPTH_OFFSET).max(cam.table_height);
            Ok(Action::Grasp(GraspAction {
                position_m: [x, y, z],
                angle_deg: angle,
            }))
        }
        ActionKind::Push => {
            let end = end_world(task, decision)?;
            PushAction::towards([x, y, h], end)
                .map(Action::Push)
                .map_err(|e| e.to_string())
        }
    }
}

/// Model probabilities with everything outside the target zeroed.
pub fn masked_affordance(probabilities: &AffordanceMap, mask: &crate::dataset::ObjectMask) -> AffordanceMap {
    let (h, w) = probabilities.dims();
    let values = probabilities
        .values()
        .iter()
        .zip(mask.bits())
        .map(|(v, inside)| if *inside { *v } else { 0.0 })
        .collect();
    AffordanceMap::from_raw(h, w, values, AffordanceKind::PredictedProbabilities).expect("same dims")
}

fn model_action(
    task: &Task,
    rendered: &Rendered,
    decision: &PlannerDecision,
    target: usize,
    setup: &EvalSetup<'_>,
) -> Result<Action, String> {
    let pred = forward(&rendered.image, &task.instruction, setup.checkpoint, setup.encoders)
        .map_err(|e| e.to_string())?;
    let mask = &rendered.masks[target];
    let aff = masked_affordance(&pred.probabilities, mask);
    let cam = &task.scene.camera;
    match decision.action {
        ActionKind::Grasp => make_grasp(&aff, Some(&rendered.depth), mask, cam)
            .map(|g| Action::Grasp(g.action))
            .map_err(|e| e.to_string()),
        ActionKind::Push => {
            let end = end_world(task, decision)?;
            make_push(&aff, end, Some(&rendered.depth), cam)
                .map(Action::Push)
                .map_err(|e| e.to_string())
        }
    }
}

/// One agent's action for `task`, with the planner decision it used.
pub fn act(
    method: Method,
    task: &Task,
    rendered: &Rendered,
    setup: &EvalSetup<'_>,
) -> Result<(Action, Option<PlannerDecision>), (String, Option<PlannerDecision>)> {
    if method == Method::Oracle {
        return Ok((oracle_action(task), None));
    }
    let decision = plan(&rendered.description(), &task.instruction, setup.planner)
        .map_err(|e| (e.to_string(), None))?;
    let with = |r: Result<Action, String>| match r {
        Ok(a) => Ok((a, Some(decision.clone()))),
        Err(e) => Err((e, Some(decision.clone()))),
    };
    let target = match target_index(rendered, &decision) {
        Ok(t) => t,
        Err(e) => return with(Err(e)),
    };
    let action = match method {
        Method::Ours => model_action(task, rendered, &decision, target, setup),
        Method::BboxCenter => {
            let (r0, c0, r1, c1) = rendered.masks[target].bbox().expect("non-empty target");
            pixel_action(task, rendered, &decision, target, ((r0 + r1) / 2, (c0 + c1) / 2))
        }
        Method::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(setup.seed ^ fnv1a64(task.id.as_bytes()));
            let pixel = (rng.gen_range(0..task.scene.height), rng.gen_range(0..task.scene.width));
            pixel_action(task, rendered, &decision, target, pixel)
        }
        Method::Oracle => unreachable!("handled above"),
    };
    with(action)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: String,
    pub scene: usize,
    pub split: Split,
    pub method: String,
    pub instruction: String,
    pub target: String,
    /// Canonical planner record, when a planner was consulted.
    pub decision: Option<String>,
    pub action: Option<Action>,
    pub success: bool,
    pub reason: String,
    pub error: Option<String>,
}

pub const REASON_PIPELINE_ERROR: &str = "pipeline error";

pub fn run_task(method: Method, task: &Task, setup: &EvalSetup<'_>) -> TaskRecord {
    let rendered = render(&task.scene);
    let mut record = TaskRecord {
        task: task.id.clone(),
        scene: task.scene_index,
        split: task.split,
        method: method.name().to_string(),
        instruction: task.instruction.clone(),
        target: task.target_object().category.clone(),
        decision: None,
        action: None,
        success: false,
        reason: REASON_PIPELINE_ERROR.to_string(),
        error: None,
    };
    match act(method, task, &rendered, setup) {
        Ok((action, decision)) => {
            let (outcome, _) = step(&task.scene, &action, task);
            record.decision = decision.map(|d| d.to_string());
            record.action = Some(action);
            record.success = outcome.success;
            record.reason = outcome.reason;
        }
        Err((message, decision)) => {
            record.decision = decision.map(|d| d.to_string());
            record.error = Some(message);
        }
    }
    record
}

/// Successes per method and scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub methods: Vec<String>,
    pub scene_splits: Vec<Split>,
    /// `counts[m][s] = (successes, tasks)`.
    pub counts: Vec<Vec<(usize, usize)>>,
}

pub fn format_cell(k: usize, n: usize) -> String {
    if n == 0 {
        return "n/a".to_string();
    }
    // Half-up rounding in integers.
    let pct = (200 * k + n) / (2 * n);
    format!("{pct}% ({k}/{n})")
}

impl ResultsTable {
    pub fn from_records(records: &[TaskRecord], methods: &[Method], tasks: &[Task]) -> Self {
        let n_scenes = tasks.iter().map(|t| t.scene_index).max().unwrap_or(0);
        let mut scene_splits = vec![Split::Seen; n_scenes];
        for t in tasks {
            scene_splits[t.scene_index - 1] = t.split;
        }
        let counts = methods
            .iter()
            .map(|m| {
                let mut row = vec![(0, 0); n_scenes];
                for r in records.iter().filter(|r| r.method == m.name()) {
                    let cell = &mut row[r.scene - 1];
                    cell.0 += r.success as usize;
                    cell.1 += 1;
                }
                row
            })
            .collect();
        Self {
            methods: methods.iter().map(|m| m.name().to_string()).collect(),
            scene_splits,
            counts,
        }
    }

    fn row(&self, method: &str) -> Option<&Vec<(usize, usize)>> {
        let i = self.methods.iter().position(|m| m == method)?;
        Some(&self.counts[i])
    }

    fn sum<'a>(cells: impl Iterator<Item = &'a (usize, usize)>) -> (usize, usize) {
        cells.fold((0, 0), |(k, n), (a, b)| (k + a, n + b))
    }

    pub fn overall(&self, method: &str) -> Option<(usize, usize)> {
        Some(Self::sum(self.row(method)?.iter()))
    }

    pub fn split_total(&self, method: &str, split: Split) -> Option<(usize, usize)> {
        let row = self.row(method)?;
        Some(Self::sum(
            row.iter().zip(&self.scene_splits).filter(|(_, s)| **s == split).map(|(c, _)| c),
        ))
    }

    pub fn rate(cell: (usize, usize)) -> f64 {
        if cell.1 == 0 {
            0.0
        } else {
            cell.0 as f64 / cell.1 as f64
        }
    }

    /// Tab-separated, one row per method, one column per scene plus the
    /// overall rate.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method");
        for s in 1..=self.scene_splits.len() {
            write!(out, "\tScene {s}").expect("string write");
        }
        out.push_str("\tOverall\n");
        for (name, row) in self.methods.iter().zip(&self.counts) {
            out.push_str(name);
            for (k, n) in row {
                write!(out, "\t{}", format_cell(*k, *n)).expect("string write");
            }
            let (k, n) = Self::sum(row.iter());
            writeln!(out, "\t{}", format_cell(k, n)).expect("string write");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub table: ResultsTable,
    pub records: Vec<TaskRecord>,
}

impl Evaluation {
    /// One JSON object per line, in method then task order.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        out
    }
}

/// Runs every method on every task, in order. A task whose pipeline fails
/// counts as a failure and keeps the error in its record.
pub fn evaluate(tasks: &[Task], setup: &EvalSetup<'_>, methods: &[Method]) -> Evaluation {
    let records: Vec<TaskRecord> = methods
        .iter()
        .flat_map(|m| tasks.iter().map(move |t| run_task(*m, t, setup)))
        .collect();
    Evaluation {
        table: ResultsTable::from_records(&records, methods, tasks),
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_round_half_up() {
        assert_eq!(format_cell(17, 20), "85% (17/20)");
        assert_eq!(format_cell(1, 8), "13% (1/8)");
        assert_eq!(format_cell(0, 20), "0% (0/20)");
        assert_eq!(format_cell(0, 0), "n/a");
    }
}
