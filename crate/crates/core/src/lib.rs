//! Passive-sonar vessel classification pipeline: WAV ingestion, resampling,
//! log-mel features, leakage-free splits, augmentation, a small CNN trained
//! from scratch, and evaluation with Grad-CAM aggregation.

pub mod augment;
pub mod cli;
pub mod config;
pub mod datasplit;
pub mod dsp;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod trainer;
pub mod wavio;
