//! Instruction-conditioned affordance decoder.
//!
//! Frozen vision features pass through three decoder stages. Each stage is
//! a convolution with ReLU whose output is multiplied channel-wise by a
//! linear projection of the goal encoding (the projection is tiled over all
//! spatial positions), followed by nearest-neighbour upsampling. A 1x1 head
//! reduces the last stage to one logit per pixel; probabilities are a
//! softmax over the whole image.

mod checkpoint;
mod layers;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AffordanceKind, AffordanceMap, ImageRgb};
use crate::encoders::{EncoderError, Encoders, FeatureGrid, GoalEncoding};

pub use checkpoint::{Checkpoint, CheckpointError, TrainingMetadata, CHECKPOINT_VERSION};
pub use layers::{
    resize_bilinear, resize_bilinear_backward, softmax, upsample_nearest, Conv, Dense, Tensor,
};
pub use train::{dataset_hash, train, train_with_progress, TrainOptions};

/// Lower clamp applied to probabilities inside the logarithm of the loss.
pub const LOG_EPSILON: f64 = 1e-12;

/// Number of goal-conditioned decoder stages.
pub const FUSION_STAGES: usize = 3;

/// Half-width of the uniform distribution used for weight initialisation.
pub const INIT_RANGE: f64 = 0.1;

/// Initial bias of every goal projection, so fusion starts near identity.
pub const GOAL_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {id} is invalid: {violations}")]
    InvalidSample { id: String, violations: String },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

fn mismatch(what: &'static str, expected: usize, actual: usize) -> ModelError {
    ModelError::DimensionMismatch {
        what,
        expected,
        actual,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub stage_channels: Vec<usize>,
    pub upsample_factor: usize,
    pub kernel_size: usize,
    /// Channels of the vision feature grid.
    pub feature_channels: usize,
    /// Length of the goal encoding.
    pub goal_dim: usize,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![32, 16, 8],
            upsample_factor: 2,
            kernel_size: 3,
            feature_channels: 3,
            goal_dim: 64,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stage_channels.len() != FUSION_STAGES {
            return Err(ModelError::InvalidConfig(format!(
                "expected {FUSION_STAGES} stage channel counts, got {}",
                self.stage_channels.len()
            )));
        }
        if self.stage_channels.iter().any(|c| *c == 0) {
            return Err(ModelError::InvalidConfig(
                "stage channels must be positive".into(),
            ));
        }
        if self.kernel_size % 2 == 0 {
            return Err(ModelError::InvalidConfig("kernel size must be odd".into()));
        }
        if self.upsample_factor == 0 || self.feature_channels == 0 || self.goal_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "upsample factor, feature channels and goal dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub conv: Conv,
    pub goal: Dense,
}

/// Every trainable tensor of the decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub stages: Vec<StageParams>,
    pub head: Dense,
}

impl DecoderParams {
    pub fn zeros(config: &DecoderConfig) -> Self {
        let mut stages = Vec::with_capacity(FUSION_STAGES);
        let mut cin = config.feature_channels;
        for &cout in &config.stage_channels {
            stages.push(StageParams {
                conv: Conv::zeros(config.kernel_size, cin, cout),
                goal: Dense::zeros(config.goal_dim, cout),
            });
            cin = cout;
        }
        Self {
            stages,
            head: Dense::zeros(cin, 1),
        }
    }

    /// Seeded initialisation: every weight and bias uniform in
    /// `[-INIT_RANGE, INIT_RANGE]`, goal-projection biases at
    /// [`GOAL_BIAS_INIT`].
    pub fn init(config: &DecoderConfig) -> Self {
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (name, values) in params.groups_mut() {
            if name.ends_with("goal.bias") {
                values.iter_mut().for_each(|v| *v = GOAL_BIAS_INIT);
            } else {
                values
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-INIT_RANGE..=INIT_RANGE));
            }
        }
        params
    }

    /// Named parameter groups in a fixed order.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            let n = i + 1;
            out.push((format!("stage{n}.conv.weight"), &s.conv.weight));
            out.push((format!("stage{n}.conv.bias"), &s.conv.bias));
            out.push((format!("stage{n}.goal.weight"), &s.goal.weight));
            out.push((format!("stage{n}.goal.bias"), &s.goal.bias));
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, s) in self.stages.iter_mut().enumerate() {
            let n = i + 1;
            out.push((format!("stage{n}.conv.weight"), &mut s.conv.weight));
            out.push((format!("stage{n}.conv.bias"), &mut s.conv.bias));
            out.push((format!("stage{n}.goal.weight"), &mut s.goal.weight));
            out.push((format!("stage{n}.goal.bias"), &mut s.goal.bias));
        }
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.groups().iter().map(|(_, v)| v.len()).sum()
    }

    /// L2 norm over every parameter.
    pub fn norm(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|(_, v)| v.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self += scale * other`, group by group.
    pub fn add_scaled(&mut self, other: &DecoderParams, scale: f64) {
        for ((_, dst), (_, src)) in self.groups_mut().into_iter().zip(other.groups()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn check_inputs(&self, features: &Tensor, goal: &[f64]) -> Result<(), ModelError> {
        let first = &self.stages[0];
        if features.channels != first.conv.in_channels {
            return Err(mismatch(
                "feature channels",
                first.conv.in_channels,
                features.channels,
            ));
        }
        if goal.len() != first.goal.in_dim {
            return Err(mismatch("goal dimension", first.goal.in_dim, goal.len()));
        }
        Ok(())
    }

    /// Runs the decoder and keeps every intermediate needed by
    /// [`DecoderParams::backward`].
    pub fn forward_trace(
        &self,
        features: &Tensor,
        goal: &[f64],
        out_height: usize,
        out_width: usize,
        upsample: usize,
    ) -> Result<Trace, ModelError> {
        self.check_inputs(features, goal)?;
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut x = features.clone();
        for stage in &self.stages {
            let pre = stage.conv.forward(&x);
            let gate = project_goal_dense(&stage.goal, goal);
            let mut act = pre.clone();
            layers::relu_inplace(&mut act);
            let fused = fuse_unchecked(&act, &gate);
            let next = upsample_nearest(&fused, upsample);
            stages.push(StageTrace {
                input: x,
                pre,
                gate,
                fused,
            });
            x = next;
        }
        // The 1x1 head commutes with nearest upsampling, so it runs on the
        // last stage before its upsample.
        let last = &stages.last().expect("three stages").fused;
        let mut coarse = Tensor::zeros(last.height, last.width, 1);
        for y in 0..last.height {
            for xx in 0..last.width {
                coarse.at_mut(y, xx)[0] = self.head.forward(last.at(y, xx))[0];
            }
        }
        let up = upsample_nearest(&coarse, upsample);
        let resized = up.height != out_height || up.width != out_width;
        let logits = if resized {
            resize_bilinear(&up, out_height, out_width)
        } else {
            up.clone()
        };
        Ok(Trace {
            stages,
            coarse,
            upsampled_dims: (up.height, up.width),
            resized,
            upsample,
            logits: logits.data,
            goal: goal.to_vec(),
            out_dims: (out_height, out_width),
        })
    }

    /// Gradient of a scalar with respect to every parameter, given its
    /// gradient with respect to the logits.
    pub fn backward(&self, trace: &Trace, d_logits: &[f64]) -> DecoderParams {
        let mut grad = DecoderParams {
            stages: self
                .stages
                .iter()
                .map(|s| StageParams {
                    conv: Conv::zeros(s.conv.kernel, s.conv.in_channels, s.conv.out_channels),
                    goal: Dense::zeros(s.goal.in_dim, s.goal.out_dim),
                })
                .collect(),
            head: Dense::zeros(self.head.in_dim, 1),
        };
        let (oh, ow) = trace.out_dims;
        let d_full = Tensor::from_vec(oh, ow, 1, d_logits.to_vec());
        let d_up = if trace.resized {
            let (uh, uw) = trace.upsampled_dims;
            resize_bilinear_backward(&d_full, uh, uw)
        } else {
            d_full
        };
        let d_coarse = layers::upsample_nearest_backward(&d_up, trace.upsample);

        let last = &trace.stages.last().expect("three stages").fused;
        let mut d_x = Tensor::zeros(last.height, last.width, last.channels);
        for y in 0..last.height {
            for x in 0..last.width {
                let g = d_coarse.at(y, x)[0];
                self.head.backward(last.at(y, x), &[g], &mut grad.head);
                for (d, w) in d_x.at_mut(y, x).iter_mut().zip(&self.head.weight) {
                    *d += g * w;
                }
            }
        }

        for (i, stage) in self.stages.iter().enumerate().rev() {
            let st = &trace.stages[i];
            // d_x is the gradient w.r.t. this stage's fused output.
            let c = stage.conv.out_channels;
            let mut d_gate = vec![0.0; c];
            let mut d_pre = Tensor::zeros(st.pre.height, st.pre.width, c);
            for ((dp, &pre), (&dx, k)) in d_pre
                .data
                .iter_mut()
                .zip(&st.pre.data)
                .zip(d_x.data.iter().zip((0..c).cycle()))
            {
                if pre > 0.0 {
                    d_gate[k] += dx * pre;
                    *dp = dx * st.gate[k];
                }
            }
            stage
                .goal
                .backward(&trace.goal, &d_gate, &mut grad.stages[i].goal);
            let d_in = stage
                .conv
                .backward(&st.input, &d_pre, &mut grad.stages[i].conv);
            if i > 0 {
                d_x = layers::upsample_nearest_backward(&d_in, trace.upsample);
            }
        }
        grad
    }
}

pub struct StageTrace {
    input: Tensor,
    pre: Tensor,
    gate: Vec<f64>,
    fused: Tensor,
}

/// Intermediates of one decoder pass.
pub struct Trace {
    stages: Vec<StageTrace>,
    coarse: Tensor,
    upsampled_dims: (usize, usize),
    resized: bool,
    upsample: usize,
    logits: Vec<f64>,
    goal: Vec<f64>,
    out_dims: (usize, usize),
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Fused output of each stage, before its upsample.
    pub fn fused(&self, stage: usize) -> &Tensor {
        &self.stages[stage].fused
    }

    /// Post-ReLU features of each stage, before fusion.
    pub fn activations(&self, stage: usize) -> Tensor {
        let mut t = self.stages[stage].pre.clone();
        layers::relu_inplace(&mut t);
        t
    }

    pub fn coarse_logits(&self) -> &Tensor {
        &self.coarse
    }
}

fn project_goal_dense(layer: &Dense, goal: &[f64]) -> Vec<f64> {
    layer.forward(goal)
}

/// Linear projection of a goal encoding to a stage's channel count.
pub fn project_goal(goal: &GoalEncoding, layer: &Dense) -> Result<Vec<f64>, ModelError> {
    if goal.dim() != layer.in_dim {
        return Err(mismatch("goal dimension", layer.in_dim, goal.dim()));
    }
    Ok(layer.forward(&goal.vector))
}

fn fuse_unchecked(features: &Tensor, gate: &[f64]) -> Tensor {
    let mut out = features.clone();
    for px in out.data.chunks_exact_mut(gate.len()) {
        for (v, g) in px.iter_mut().zip(gate) {
            *v *= g;
        }
    }
    out
}

/// Hadamard product of a feature map with a goal vector tiled over every
/// spatial position.
pub fn fuse(features: &Tensor, projected_goal: &[f64]) -> Result<Tensor, ModelError> {
    if features.channels != projected_goal.len() {
        return Err(mismatch(
            "fusion channels",
            features.channels,
            projected_goal.len(),
        ));
    }
    Ok(fuse_unchecked(features, projected_goal))
}

pub fn grid_to_tensor(grid: &FeatureGrid) -> Tensor {
    Tensor::from_vec(grid.height, grid.width, grid.channels, grid.data.clone())
}

/// Per-sample decoder input: frozen features plus the goal encoding.
pub struct EncodedInput {
    pub features: Tensor,
    pub goal: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

/// Upsampling factor that maps the feature grid back to full resolution
/// after all stages.
pub fn encode_input(
    image: &ImageRgb,
    prompt: &str,
    encoders: &Encoders,
) -> Result<EncodedInput, ModelError> {
    let grid = encoders.vision.encode_image(image);
    let goal = encoders.text.encode_text(prompt)?;
    Ok(EncodedInput {
        features: grid_to_tensor(&grid),
        goal: goal.vector,
        height: image.height(),
        width: image.width(),
    })
}

/// Logit map, its spatial softmax, and the ReLU'd logits for display.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: AffordanceMap,
    pub probabilities: AffordanceMap,
}

impl Prediction {
    fn from_logits(height: usize, width: usize, logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        Self {
            logits: AffordanceMap::from_raw(height, width, logits, AffordanceKind::PredictedLogits)
                .expect("logit length"),
            probabilities: AffordanceMap::from_raw(
                height,
                width,
                probs,
                AffordanceKind::PredictedProbabilities,
            )
            .expect("probability length"),
        }
    }

    /// `max(logit, 0)` per pixel; a raw non-negative map for visualisation.
    pub fn relu_map(&self) -> AffordanceMap {
        let (h, w) = self.logits.dims();
        let values = self.logits.values().iter().map(|v| v.max(0.0)).collect();
        AffordanceMap::from_raw(h, w, values, AffordanceKind::PredictedLogits).expect("same dims")
    }
}

pub(crate) fn forward_encoded(
    checkpoint: &Checkpoint,
    input: &EncodedInput,
) -> Result<Prediction, ModelError> {
    let trace = checkpoint.params.forward_trace(
        &input.features,
        &input.goal,
        input.height,
        input.width,
        checkpoint.config.upsample_factor,
    )?;
    Ok(Prediction::from_logits(
        input.height,
        input.width,
        trace.logits,
    ))
}

/// Predicts the affordance map of `image` for `prompt`.
pub fn forward(
    image: &ImageRgb,
    prompt: &str,
    checkpoint: &Checkpoint,
    encoders: &Encoders,
) -> Result<Prediction, ModelError> {
    let input = encode_input(image, prompt, encoders)?;
    forward_encoded(checkpoint, &input)
}

/// Most likely pixel (ties: lowest row, then lowest column) and the
/// probability map it came from.
pub fn predict_point(
    image: &ImageRgb,
    prompt: &str,
    checkpoint: &Checkpoint,
    encoders: &Encoders,
) -> Result<((usize, usize), AffordanceMap), ModelError> {
    let pred = forward(image, prompt, checkpoint, encoders)?;
    Ok((pred.probabilities.argmax(), pred.probabilities))
}

/// Pixel-wise cross-entropy `-sum P_G log max(P_A, eps)`.
pub fn cross_entropy(pred: &AffordanceMap, gt: &AffordanceMap) -> Result<f64, ModelError> {
    if pred.dims() != gt.dims() {
        return Err(mismatch(
            "affordance pixels",
            gt.height() * gt.width(),
            pred.height() * pred.width(),
        ));
    }
    Ok(cross_entropy_values(pred.values(), gt.values()))
}

pub(crate) fn cross_entropy_values(pred: &[f64], gt: &[f64]) -> f64 {
    -pred
        .iter()
        .zip(gt)
        .filter(|(_, g)| **g != 0.0)
        .map(|(p, g)| g * p.max(LOG_EPSILON).ln())
        .sum::<f64>()
}

/// Loss value and its gradient with respect to the logits.
pub(crate) fn loss_and_logit_grad(logits: &[f64], gt: &[f64]) -> (f64, Vec<f64>) {
    let probs = softmax(logits);
    let loss = cross_entropy_values(&probs, gt);
    let active: f64 = probs
        .iter()
        .zip(gt)
        .filter(|(p, _)| **p > LOG_EPSILON)
        .map(|(_, g)| g)
        .sum();
    let grad = probs
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let own = if *p > LOG_EPSILON { *g } else { 0.0 };
            p * active - own
        })
        .collect();
    (loss, grad)
}

/// Loss and parameter gradient for one encoded sample.
pub fn loss_and_gradient(
    params: &DecoderParams,
    config: &DecoderConfig,
    input: &EncodedInput,
    gt: &[f64],
) -> Result<(f64, DecoderParams), ModelError> {
    if gt.len() != input.height * input.width {
        return Err(mismatch(
            "affordance pixels",
            input.height * input.width,
            gt.len(),
        ));
    }
    let trace = params.forward_trace(
        &input.features,
        &input.goal,
        input.height,
        input.width,
        config.upsample_factor,
    )?;
    let (loss, d_logits) = loss_and_logit_grad(&trace.logits, gt);
    Ok((loss, params.backward(&trace, &d_logits)))
}

/// Loss only; used by finite-difference checks.
pub fn loss_value(
    params: &DecoderParams,
    config: &DecoderConfig,
    input: &EncodedInput,
    gt: &[f64],
) -> Result<f64, ModelError> {
    let trace = params.forward_trace(
        &input.features,
        &input.goal,
        input.height,
        input.width,
        config.upsample_factor,
    )?;
    Ok(cross_entropy_values(&softmax(&trace.logits), gt))
}
