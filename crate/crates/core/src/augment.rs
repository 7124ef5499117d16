//! SpecAugment-style masking and Mixup.
//!
//! The time-mask bound follows the data/model rate ratio so that a mask covers
//! the same span of audio whatever rate the features were computed at:
//! `W = round(W_base * r_data / r_model)`. Frequency masks are not rescaled.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::LogMelSpectrogram;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target {index} sums to {sum}, expected 1")]
    InvalidTarget { index: usize, sum: f64 },
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub base_time_mask_width: usize,
    pub freq_mask_width: usize,
    pub n_time_masks: usize,
    pub n_freq_masks: usize,
    pub data_rate: u32,
    pub model_rate: u32,
    pub mixup_alpha: f64,
    /// Turns Mixup on or off; masking is controlled by the mask counts.
    pub mixup: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            base_time_mask_width: 64,
            freq_mask_width: 8,
            n_time_masks: 2,
            n_freq_masks: 2,
            data_rate: 32_000,
            model_rate: 32_000,
            mixup_alpha: 1.0,
            mixup: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.data_rate == 0 || self.model_rate == 0 {
            return Err(AugmentError::InvalidConfig("rates must be positive".into()));
        }
        if !(self.mixup_alpha > 0.0 && self.mixup_alpha.is_finite()) {
            return Err(AugmentError::InvalidConfig(format!("mixup_alpha must be positive, got {}", self.mixup_alpha)));
        }
        Ok(())
    }

    /// Same config with masking and Mixup switched off.
    pub fn disabled(&self) -> Self {
        Self { n_time_masks: 0, n_freq_masks: 0, mixup: false, ..self.clone() }
    }
}

/// `round(W_base * r_data / r_model)`, halves rounding up.
pub fn scaled_mask_width(cfg: &AugmentConfig) -> usize {
    let num = cfg.base_time_mask_width as u128 * cfg.data_rate as u128;
    let den = cfg.model_rate as u128;
    ((2 * num + den) / (2 * den)) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAxis {
    Time,
    Frequency,
}

/// A stripe `[start, start + width)` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mask {
    pub axis: MaskAxis,
    pub start: usize,
    pub width: usize,
}

fn draw_mask<R: Rng + ?Sized>(axis: MaskAxis, extent: usize, max_width: usize, rng: &mut R) -> Mask {
    let width = rng.random_range(0..=max_width);
    if width >= extent {
        return Mask { axis, start: 0, width: extent };
    }
    let start = rng.random_range(0..=extent - width);
    Mask { axis, start, width }
}

/// Draw the masks `spec_augment` would apply to a spectrogram of the given shape.
pub fn draw_masks<R: Rng + ?Sized>(n_frames: usize, n_mels: usize, cfg: &AugmentConfig, rng: &mut R) -> Vec<Mask> {
    let time_width = scaled_mask_width(cfg);
    let mut masks = Vec::with_capacity(cfg.n_time_masks + cfg.n_freq_masks);
    for _ in 0..cfg.n_time_masks {
        masks.push(draw_mask(MaskAxis::Time, n_frames, time_width, rng));
    }
    for _ in 0..cfg.n_freq_masks {
        masks.push(draw_mask(MaskAxis::Frequency, n_mels, cfg.freq_mask_width, rng));
    }
    masks
}

/// Zero the masked stripes in place.
pub fn apply_masks(spec: &mut LogMelSpectrogram, masks: &[Mask]) {
    let (rows, cols) = (spec.values.rows, spec.values.cols);
    for m in masks {
        match m.axis {
            MaskAxis::Time => {
                let end = (m.start + m.width).min(rows);
                spec.values.data[m.start.min(rows) * cols..end * cols].fill(0.0);
            }
            MaskAxis::Frequency => {
                let end = (m.start + m.width).min(cols);
                for r in 0..rows {
                    spec.values.data[r * cols + m.start.min(cols)..r * cols + end].fill(0.0);
                }
            }
        }
    }
}

/// Time and frequency masking. Returns the augmented copy and the masks used.
pub fn spec_augment_with_masks<R: Rng + ?Sized>(
    spec: &LogMelSpectrogram,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (LogMelSpectrogram, Vec<Mask>) {
    let masks = draw_masks(spec.n_frames(), spec.n_mels(), cfg, rng);
    let mut out = spec.clone();
    apply_masks(&mut out, &masks);
    (out, masks)
}

pub fn spec_augment<R: Rng + ?Sized>(spec: &LogMelSpectrogram, cfg: &AugmentConfig, rng: &mut R) -> LogMelSpectrogram {
    spec_augment_with_masks(spec, cfg, rng).0
}

/// Draw lambda from Beta(alpha, alpha).
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let beta = Beta::new(alpha, alpha).expect("alpha must be positive and finite");
    beta.sample(rng).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixPair {
    pub lambda: f64,
    pub index_a: usize,
    pub index_b: usize,
}

/// Pair each batch position with a partner from a random permutation; one lambda per pair.
pub fn draw_pairs<R: Rng + ?Sized>(batch_len: usize, alpha: f64, rng: &mut R) -> Vec<MixPair> {
    let mut partners: Vec<usize> = (0..batch_len).collect();
    partners.shuffle(rng);
    partners
        .into_iter()
        .enumerate()
        .map(|(index_a, index_b)| MixPair { lambda: sample_lambda(alpha, rng), index_a, index_b })
        .collect()
}

/// Convex combinations of inputs and their target vectors, one output per pair.
pub fn mixup(
    inputs: &[LogMelSpectrogram],
    targets: &[Vec<f64>],
    pairs: &[MixPair],
) -> Result<(Vec<LogMelSpectrogram>, Vec<Vec<f64>>), AugmentError> {
    if inputs.len() != targets.len() {
        return Err(AugmentError::ShapeMismatch(format!("{} inputs but {} targets", inputs.len(), targets.len())));
    }
    if let Some(first) = inputs.first() {
        let shape = (first.n_frames(), first.n_mels());
        if let Some(bad) = inputs.iter().position(|x| (x.n_frames(), x.n_mels()) != shape) {
            return Err(AugmentError::ShapeMismatch(format!("input {bad} differs from {shape:?}")));
        }
        let width = targets[0].len();
        if targets.iter().any(|t| t.len() != width) {
            return Err(AugmentError::ShapeMismatch("targets have differing lengths".into()));
        }
    }
    for (index, t) in targets.iter().enumerate() {
        let sum: f64 = t.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || t.iter().any(|&v| v < 0.0) {
            return Err(AugmentError::InvalidTarget { index, sum });
        }
    }
    let mut mixed_x = Vec::with_capacity(pairs.len());
    let mut mixed_y = Vec::with_capacity(pairs.len());
    for p in pairs {
        if p.index_a >= inputs.len() || p.index_b >= inputs.len() {
            return Err(AugmentError::ShapeMismatch(format!("pair ({}, {}) out of range", p.index_a, p.index_b)));
        }
        let (a, b) = (&inputs[p.index_a], &inputs[p.index_b]);
        let (l, m) = (p.lambda, 1.0 - p.lambda);
        let mut x = a.clone();
        for (dst, (&va, &vb)) in x.values.data.iter_mut().zip(a.values.data.iter().zip(&b.values.data)) {
            *dst = l * va + m * vb;
        }
        let y = targets[p.index_a].iter().zip(&targets[p.index_b]).map(|(&ya, &yb)| l * ya + m * yb).collect();
        mixed_x.push(x);
        mixed_y.push(y);
    }
    Ok((mixed_x, mixed_y))
}

pub fn one_hot(label: usize, n_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_classes];
    v[label] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{FeatureConfig, Matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(rows: usize, cols: usize, f: impl Fn(usize) -> f64) -> LogMelSpectrogram {
        LogMelSpectrogram::from_matrix(
            Matrix::from_vec(rows, cols, (0..rows * cols).map(f).collect()),
            FeatureConfig::default(),
            32_000,
        )
    }

    fn rates(data: u32, model: u32) -> AugmentConfig {
        AugmentConfig { data_rate: data, model_rate: model, ..AugmentConfig::default() }
    }

    #[test]
    fn mask_width_anchors() {
        assert_eq!(scaled_mask_width(&rates(32_000, 32_000)), 64);
        assert_eq!(scaled_mask_width(&rates(16_000, 32_000)), 32);
        assert_eq!(scaled_mask_width(&rates(2_000, 32_000)), 4);
        assert_eq!(scaled_mask_width(&rates(64_000, 8_000)), 512);
        let odd = AugmentConfig { base_time_mask_width: 3, ..rates(1, 2) };
        assert_eq!(scaled_mask_width(&odd), 2);
    }

    #[test]
    fn no_masks_is_identity() {
        let s = spec(20, 8, |i| i as f64 + 0.5);
        let cfg = AugmentConfig { n_time_masks: 0, n_freq_masks: 0, ..AugmentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(spec_augment(&s, &cfg, &mut rng), s);
    }

    #[test]
    fn full_time_mask_zeroes_everything() {
        let mut s = spec(10, 4, |i| i as f64 + 1.0);
        apply_masks(&mut s, &[Mask { axis: MaskAxis::Time, start: 0, width: 10 }]);
        assert!(s.values.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oversized_bound_clips_to_extent() {
        let s = spec(5, 4, |i| i as f64 + 1.0);
        let cfg = AugmentConfig { base_time_mask_width: 1000, n_freq_masks: 0, n_time_masks: 4, ..AugmentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            for m in draw_masks(5, 4, &cfg, &mut rng) {
                assert!(m.start + m.width <= 5);
            }
        }
        let (_, masks) = spec_augment_with_masks(&s, &cfg, &mut rng);
        assert_eq!(masks.len(), 4);
    }

    #[test]
    fn frequency_masks_hit_columns() {
        let mut s = spec(3, 6, |_| 1.0);
        apply_masks(&mut s, &[Mask { axis: MaskAxis::Frequency, start: 2, width: 3 }]);
        for r in 0..3 {
            assert_eq!(s.values.row(r), &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn uniform_lambda_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_lambda(1.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!((var - 1.0 / 12.0).abs() < 0.005, "var {var}");
    }

    #[test]
    fn mixup_endpoints_and_midpoint() {
        let a = spec(2, 3, |_| 0.0);
        let b = spec(2, 3, |_| 2.0);
        let ys = vec![one_hot(0, 2), one_hot(1, 2)];
        let inputs = vec![a.clone(), b];
        let (x, y) = mixup(&inputs, &ys, &[MixPair { lambda: 1.0, index_a: 0, index_b: 1 }]).unwrap();
        assert_eq!(x[0], a);
        assert_eq!(y[0], vec![1.0, 0.0]);
        let (x, y) = mixup(&inputs, &ys, &[MixPair { lambda: 0.5, index_a: 0, index_b: 1 }]).unwrap();
        assert!(x[0].values.data.iter().all(|&v| v == 1.0));
        assert_eq!(y[0], vec![0.5, 0.5]);
    }

    #[test]
    fn mixup_rejects_bad_input() {
        let a = spec(2, 3, |_| 0.0);
        let b = spec(3, 3, |_| 0.0);
        let ys = vec![one_hot(0, 2), one_hot(1, 2)];
        let pair = [MixPair { lambda: 0.5, index_a: 0, index_b: 1 }];
        assert!(matches!(mixup(&[a.clone(), b], &ys, &pair), Err(AugmentError::ShapeMismatch(_))));
        let bad = vec![vec![0.5, 0.6], one_hot(1, 2)];
        assert!(matches!(
            mixup(&[a.clone(), a.clone()], &bad, &pair),
            Err(AugmentError::InvalidTarget { index: 0, .. })
        ));
    }

    #[test]
    fn pairs_form_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs = draw_pairs(16, 1.0, &mut rng);
        let mut partners: Vec<usize> = pairs.iter().map(|p| p.index_b).collect();
        partners.sort_unstable();
        assert_eq!(partners, (0..16).collect::<Vec<_>>());
        assert!(pairs.iter().enumerate().all(|(i, p)| p.index_a == i && (0.0..=1.0).contains(&p.lambda)));
    }

    #[test]
    fn config_validation() {
        AugmentConfig::default().validate().unwrap();
        let bad = AugmentConfig { mixup_alpha: 0.0, ..AugmentConfig::default() };
        assert!(bad.validate().is_err());
    }
}
