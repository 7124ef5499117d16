//! Resampling, segmentation and the STFT to log-mel feature path.

mod archive;
mod mel;
mod resample;
mod stft;

pub use archive::{read_archive, write_archive, ArchiveError, ArchiveItem, ARCHIVE_MAGIC};
pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_filterbank_at, mel_to_hz, LOG_FLOOR};
pub use resample::{resample, resampled_len, Resampler, KAISER_BETA, ZERO_CROSSINGS};
pub use stft::{hann_window, stft_power, Stft};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wavio::Waveform;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid rate: {0}")]
    InvalidRate(String),
    #[error("scaled configuration is not usable: {0}")]
    NonPositiveResult(String),
    #[error("configuration does not fit the input: {0}")]
    ConfigMismatch(String),
    #[error("degenerate mel band: {0}")]
    DegenerateBand(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),
    #[error("segment length {0} is not a positive whole number of samples")]
    InvalidSegmentLength(f64),
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// STFT and mel parameters, expressed for a particular model sampling rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub model_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { model_rate: 32_000, win_length: 1024, hop_length: 320, n_mels: 64, f_min: 50.0, f_max: 14_000.0 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.model_rate == 0 {
            return Err(DspError::InvalidConfig("model_rate must be positive".into()));
        }
        if self.hop_length == 0 || self.win_length < self.hop_length {
            return Err(DspError::InvalidConfig(format!(
                "need win_length >= hop_length > 0, got win {} hop {}",
                self.win_length, self.hop_length
            )));
        }
        if self.n_mels == 0 {
            return Err(DspError::InvalidConfig("n_mels must be at least 1".into()));
        }
        let nyquist = self.model_rate as f64 / 2.0;
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(DspError::InvalidConfig(format!(
                "need 0 <= f_min < f_max <= {nyquist}, got {} and {}",
                self.f_min, self.f_max
            )));
        }
        Ok(())
    }

    /// Upper mel cutoff once clamped to the Nyquist frequency of `data_rate`.
    pub fn effective_f_max(&self, data_rate: u32) -> f64 {
        self.f_max.min(data_rate as f64 / 2.0)
    }

    pub fn n_bins(&self) -> usize {
        self.win_length / 2 + 1
    }
}

/// Rescale window, hop and upper cutoff by `model_rate / base.model_rate`.
///
/// Lengths are rounded to the nearest sample; `f_min` and `n_mels` are kept.
pub fn scale_config(base: &FeatureConfig, model_rate: u32) -> Result<FeatureConfig, DspError> {
    if model_rate == 0 {
        return Err(DspError::InvalidRate("model rate must be positive".into()));
    }
    if model_rate == base.model_rate {
        return Ok(base.clone());
    }
    let ratio = model_rate as f64 / base.model_rate as f64;
    let win_length = (base.win_length as f64 * ratio).round() as usize;
    let hop_length = (base.hop_length as f64 * ratio).round() as usize;
    let f_max = base.f_max * ratio;
    if hop_length < 1 || win_length < 1 {
        return Err(DspError::NonPositiveResult(format!(
            "ratio {ratio} gives win {win_length}, hop {hop_length}"
        )));
    }
    if f_max <= base.f_min {
        return Err(DspError::NonPositiveResult(format!(
            "scaled f_max {f_max} Hz is not above f_min {} Hz",
            base.f_min
        )));
    }
    Ok(FeatureConfig { model_rate, win_length, hop_length, n_mels: base.n_mels, f_min: base.f_min, f_max })
}

/// Frames produced by a centred STFT: `1 + floor(n_samples / hop)`.
pub fn frame_count(n_samples: usize, hop: usize) -> usize {
    assert!(hop > 0, "hop must be positive");
    1 + n_samples / hop
}

/// Fixed-length slice of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f32>,
    pub rate: u32,
    pub recording_id: String,
    pub index: usize,
}

/// Cut a waveform into consecutive non-overlapping segments, dropping the remainder.
pub fn segment(w: &Waveform, seconds: f64) -> Result<Vec<Segment>, DspError> {
    let exact = seconds * w.rate as f64;
    let len = exact.round();
    if !(seconds > 0.0) || len < 1.0 || (exact - len).abs() > 1e-9 * len.max(1.0) {
        return Err(DspError::InvalidSegmentLength(exact));
    }
    let len = len as usize;
    Ok(w
        .samples
        .chunks_exact(len)
        .enumerate()
        .map(|(index, chunk)| Segment {
            samples: chunk.to_vec(),
            rate: w.rate,
            recording_id: w.source_id.clone(),
            index,
        })
        .collect())
}

/// Log-compressed mel energies, `n_frames` rows by `n_mels` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Matrix,
    pub config: FeatureConfig,
    /// Sampling rate of the signal the features were computed from.
    pub rate: u32,
}

impl LogMelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.rows
    }

    pub fn n_mels(&self) -> usize {
        self.values.cols
    }

    /// Wrap raw values, e.g. when reloading from an archive.
    pub fn from_matrix(values: Matrix, config: FeatureConfig, rate: u32) -> Self {
        Self { values, config, rate }
    }
}

/// Feature extractor for one (config, data rate) pair. Shareable across threads.
pub struct LogMelExtractor {
    config: FeatureConfig,
    data_rate: u32,
    stft: Stft,
    filterbank: Matrix,
}

impl LogMelExtractor {
    /// Frames use the model's window and hop directly on `data_rate` samples;
    /// the mel band is clamped to the data's Nyquist frequency.
    pub fn new(config: &FeatureConfig, data_rate: u32) -> Result<Self, DspError> {
        config.validate()?;
        if data_rate == 0 {
            return Err(DspError::InvalidRate("data rate must be positive".into()));
        }
        let filterbank = mel_filterbank_at(config, data_rate)?;
        Ok(Self { config: config.clone(), data_rate, stft: Stft::new(config.win_length, config.hop_length)?, filterbank })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn data_rate(&self) -> u32 {
        self.data_rate
    }

    pub fn extract(&self, samples: &[f32]) -> Result<LogMelSpectrogram, DspError> {
        let power = self.stft.power(samples)?;
        let values = log_mel(&power, &self.filterbank)?;
        Ok(LogMelSpectrogram { values, config: self.config.clone(), rate: self.data_rate })
    }
}
