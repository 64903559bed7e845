//! End-to-end run: seed data, augmentation, training, task suite and
//! evaluation, all driven by one seed.

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalSetup, Evaluation, Method};
use super::library::ObjectLibrary;
use super::scenario::{generate_scenarios, seed_dataset, ScenarioConfig, SeedDataConfig, Task};
use super::{SimConfig, SimError};
use crate::augment::{augment_dataset, AugmentClients, AugmentPlan, AugmentReport, ProceduralInpaint, StubTextGen};
use crate::dataset::Dataset;
use crate::encoders::Encoders;
use crate::model::{train, Checkpoint, DecoderConfig, TrainOptions};
use crate::planner::PlannerClient;

pub const METHODS: [Method; 3] = [Method::Ours, Method::BboxCenter, Method::Oracle];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub sim: SimConfig,
    pub seed_data: SeedDataConfig,
    pub augment: AugmentPlan,
    pub augment_seed: u64,
    pub decoder: DecoderConfig,
    pub train: TrainOptions,
    pub scenarios: ScenarioConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            seed_data: SeedDataConfig::default(),
            augment: AugmentPlan {
                rotations: 1,
                inpaints: 1,
                paraphrases: 1,
            },
            augment_seed: 0,
            decoder: DecoderConfig::default(),
            train: TrainOptions {
                epochs: 30,
                learning_rate: 0.5,
                batch_size: Some(8),
                clip_norm: Some(1.0),
            },
            scenarios: ScenarioConfig::default(),
        }
    }
}

impl ProtocolConfig {
    /// Derives every stage's seed from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed_data.seed = seed;
        self.augment_seed = seed.wrapping_add(1);
        self.decoder.seed = seed.wrapping_add(2);
        self.scenarios.seed = seed.wrapping_add(3);
        self
    }
}

pub struct ProtocolRun {
    pub training_set: Dataset,
    pub augment_report: AugmentReport,
    pub checkpoint: Checkpoint,
    pub tasks: Vec<Task>,
    pub evaluation: Evaluation,
}

/// Seed dataset expanded by the stub generators.
pub fn build_training_set(
    library: &ObjectLibrary,
    config: &ProtocolConfig,
) -> Result<(Dataset, AugmentReport), SimError> {
    let seed = seed_dataset(library, &config.sim, &config.seed_data)?;
    let text = StubTextGen::new(config.augment_seed);
    let clients = AugmentClients {
        text: &text,
        inpaint: &ProceduralInpaint,
    };
    Ok(augment_dataset(&seed, config.augment, &clients, config.augment_seed)?)
}

pub fn run_protocol(
    library: &ObjectLibrary,
    config: &ProtocolConfig,
    encoders: &Encoders,
    planner: &dyn PlannerClient,
) -> Result<ProtocolRun, SimError> {
    let (training_set, augment_report) = build_training_set(library, config)?;
    let checkpoint = train(&training_set, &config.decoder, &config.train, encoders)?;
    let tasks = generate_scenarios(library, &config.sim, &config.scenarios)?;
    let setup = EvalSetup {
        checkpoint: &checkpoint,
        encoders,
        planner,
        seed: config.scenarios.seed,
    };
    let evaluation = evaluate(&tasks, &setup, &METHODS);
    Ok(ProtocolRun {
        training_set,
        augment_report,
        checkpoint,
        tasks,
        evaluation,
    })
}
