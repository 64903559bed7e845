//! Instruction-guided manipulation toolkit.
//!
//! The pipeline runs from a small labeled dataset to executed actions:
//!
//! - [`dataset`] and [`manifest`]: text-image-affordance samples and their
//!   on-disk form.
//! - [`encoders`]: frozen vision and text encoders.
//! - [`model`]: the goal-conditioned affordance decoder, its loss and training.
//! - [`augment`]: rotation, background inpainting and instruction paraphrase.
//! - [`action`]: top-down grasp and fixed-length push primitives.
//! - [`planner`]: scene-grounded prompts and structured action decisions.
//! - [`sim`]: a deterministic 2D tabletop for closed-loop evaluation.
//! - [`overlay`]: heatmap overlays for inspecting predictions.

pub mod action;
pub mod augment;
pub mod dataset;
pub mod encoders;
pub mod manifest;
pub mod model;
pub mod overlay;
pub mod planner;
pub mod sim;
