//! Plain SGD on the pixel-wise cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    encode_input, loss_and_gradient, Checkpoint, DecoderConfig, DecoderParams, EncodedInput,
    ModelError, TrainingMetadata,
};
use crate::dataset::{validate_sample, Dataset};
use crate::encoders::Encoders;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Samples per update; `None` or anything at least the dataset size
    /// means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Rescales each batch gradient to at most this L2 norm.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.5,
            batch_size: None,
            clip_norm: Some(1.0),
        }
    }
}

/// SHA-256 over every sample's id, instruction and rasters.
pub fn dataset_hash(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for s in &dataset.samples {
        h.update(s.id.as_bytes());
        h.update([0]);
        h.update(s.instruction.as_bytes());
        h.update([0]);
        h.update(s.image.pixels());
        for v in s.affordance.values() {
            h.update(v.to_le_bytes());
        }
        for b in s.mask.bits() {
            h.update([*b as u8]);
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Trains a decoder from its seeded initialisation. Encoders are only read.
pub fn train(
    dataset: &Dataset,
    config: &DecoderConfig,
    options: &TrainOptions,
    encoders: &Encoders,
) -> Result<Checkpoint, ModelError> {
    train_with_progress(dataset, config, options, encoders, |_, _| {})
}

/// As [`train`], calling `progress(epoch, mean_loss)` after every epoch.
pub fn train_with_progress(
    dataset: &Dataset,
    config: &DecoderConfig,
    options: &TrainOptions,
    encoders: &Encoders,
    mut progress: impl FnMut(usize, f64),
) -> Result<Checkpoint, ModelError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    for s in &dataset.samples {
        let report = validate_sample(s);
        if !report.is_empty() {
            let violations = report
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            return Err(ModelError::InvalidSample {
                id: s.id.clone(),
                violations,
            });
        }
    }
    if encoders.vision.channels() != config.feature_channels {
        return Err(ModelError::DimensionMismatch {
            what: "feature channels",
            expected: config.feature_channels,
            actual: encoders.vision.channels(),
        });
    }
    if encoders.text.dim() != config.goal_dim {
        return Err(ModelError::DimensionMismatch {
            what: "goal dimension",
            expected: config.goal_dim,
            actual: encoders.text.dim(),
        });
    }

    let inputs: Vec<EncodedInput> = dataset
        .samples
        .iter()
        .map(|s| encode_input(&s.image, &s.instruction, encoders))
        .collect::<Result<_, _>>()?;
    let targets: Vec<&[f64]> = dataset
        .samples
        .iter()
        .map(|s| s.affordance.values())
        .collect();

    let n = inputs.len();
    let batch = options.batch_size.unwrap_or(n).clamp(1, n);
    let mut params = DecoderParams::init(config);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_0a7a);
    let mut history = Vec::with_capacity(options.epochs);

    for epoch in 0..options.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad: Option<DecoderParams> = None;
            for &i in chunk {
                let (loss, g) = loss_and_gradient(&params, config, &inputs[i], targets[i])?;
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch });
                }
                epoch_loss += loss;
                match grad.as_mut() {
                    None => grad = Some(g),
                    Some(acc) => acc.add_scaled(&g, 1.0),
                }
            }
            let grad = grad.expect("non-empty batch");
            let mut step = options.learning_rate / chunk.len() as f64;
            if let Some(limit) = options.clip_norm {
                let norm = grad.norm() / chunk.len() as f64;
                if norm > limit {
                    step *= limit / norm;
                }
            }
            params.add_scaled(&grad, -step);
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        history.push(mean);
        progress(epoch, mean);
    }

    Ok(Checkpoint {
        config: config.clone(),
        params,
        metadata: TrainingMetadata {
            epochs: options.epochs,
            learning_rate: options.learning_rate,
            batch_size: batch,
            final_loss: history.last().copied(),
            loss_history: history,
            dataset_hash: dataset_hash(dataset),
            samples: n,
        },
    })
}
