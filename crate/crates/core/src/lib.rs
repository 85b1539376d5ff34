//! Core of the emotion-to-safe-content engine.
//!
//! Everything here is pure computation over owned buffers and builds without
//! `std`: audio buffers and segmentation, spectral features, a small CNN
//! engine with training and INT8 quantization, the four agents
//! (emotion, policy, content, safety) and the bounded verification loop that
//! ties them together. File IO, clocks and the command line live in the
//! `emotive` crate.
#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod audio;
pub mod content;
pub mod dsp;
pub mod emotion;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod safety;
pub mod synth;

pub use audio::{AudioError, AudioSegment, CANONICAL_RATE};
pub use content::{ContentParameters, GeneratorNet, Param};
pub use dsp::{FeatureTensor, InputMode, MelConfig, StftConfig};
pub use emotion::{ArousalLevel, EmotionCategories, EmotionState};
pub use pipeline::{Pipeline, PipelineConfig, PipelineOutput};
pub use policy::{PolicyTable, ResponseMode};
pub use safety::{RuleSet, VerificationResult};
