//! Glue from waveforms and a split file to normalized, labelled feature sets.

use rayon::prelude::*;
use thiserror::Error;

use crate::datasplit::{compute_norm_stats, normalize, NormError, NormStats, Split, SplitFile};
use crate::dsp::{resample, segment, ArchiveItem, DspError, LogMelExtractor, LogMelSpectrogram, Matrix, FeatureConfig};
use crate::nn::Tensor;
use crate::wavio::Waveform;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error("recording `{0}` has no split assignment")]
    Unassigned(String),
    #[error("the {0} split has no segments")]
    EmptySplit(Split),
    #[error("feature shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
}

/// Features with integer class labels, one entry per segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub features: Vec<LogMelSpectrogram>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn push(&mut self, spec: LogMelSpectrogram, label: usize) {
        self.features.push(spec);
        self.labels.push(label);
    }

    /// `(n_frames, n_mels)` shared by every item.
    pub fn shape(&self) -> Result<Option<(usize, usize)>, PipelineError> {
        let mut shape = None;
        for f in &self.features {
            let s = (f.n_frames(), f.n_mels());
            match shape {
                None => shape = Some(s),
                Some(first) if first != s => return Err(PipelineError::ShapeMismatch(first, s)),
                _ => {}
            }
        }
        Ok(shape)
    }

    /// Stack the chosen items into a `[B, 1, frames, mels]` batch.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        stack_specs(indices.iter().map(|&i| &self.features[i]))
    }

    pub fn to_archive(&self) -> Vec<ArchiveItem> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(f, &l)| ArchiveItem {
                n_frames: f.n_frames() as u32,
                n_mels: f.n_mels() as u32,
                label: l as u32,
                values: f.values.data.iter().map(|&v| v as f32).collect(),
            })
            .collect()
    }

    pub fn from_archive(items: &[ArchiveItem], config: &FeatureConfig, rate: u32) -> Self {
        let mut set = Self::default();
        for it in items {
            let values = Matrix::from_vec(
                it.n_frames as usize,
                it.n_mels as usize,
                it.values.iter().map(|&v| v as f64).collect(),
            );
            set.push(LogMelSpectrogram::from_matrix(values, config.clone(), rate), it.label as usize);
        }
        set
    }
}

/// Stack spectrograms of equal shape into `[B, 1, frames, mels]`.
pub fn stack_specs<'a>(specs: impl IntoIterator<Item = &'a LogMelSpectrogram>) -> Tensor {
    let mut data = Vec::new();
    let mut b = 0;
    let mut shape = (0, 0);
    for s in specs {
        shape = (s.n_frames(), s.n_mels());
        data.extend_from_slice(&s.values.data);
        b += 1;
    }
    Tensor { shape: vec![b, 1, shape.0, shape.1], data }
}

/// Normalized train/val/test sets and the training statistics used.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
    pub n_classes: usize,
    pub stats: NormStats,
}

impl Dataset {
    pub fn set(&self, split: Split) -> &LabeledSet {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Normalize raw per-split sets with extrema taken from `train` alone.
    pub fn from_raw(raw: [LabeledSet; 3], n_classes: usize) -> Result<Self, PipelineError> {
        for (set, split) in raw.iter().zip(Split::ALL) {
            if set.is_empty() {
                return Err(PipelineError::EmptySplit(split));
            }
            if let Some(&label) = set.labels.iter().find(|&&l| l >= n_classes) {
                return Err(PipelineError::LabelOutOfRange { label, n_classes });
            }
        }
        let stats = compute_norm_stats(&raw[0].features)?;
        let [train, val, test] = raw.map(|s| {
            let features = s.features.iter().map(|f| normalize(f, &stats)).collect::<Result<Vec<_>, _>>();
            features.map(|features| LabeledSet { features, labels: s.labels })
        });
        let ds = Self { train: train?, val: val?, test: test?, n_classes, stats };
        let shape = ds.train.shape()?;
        for s in [&ds.val, &ds.test] {
            if let (Some(a), Some(b)) = (shape, s.shape()?) {
                if a != b {
                    return Err(PipelineError::ShapeMismatch(a, b));
                }
            }
        }
        Ok(ds)
    }
}

/// A waveform with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub waveform: Waveform,
    pub label: usize,
}

/// Resample to `extractor.data_rate()`, cut into segments, and extract log-mel features.
pub fn featurize(w: &Waveform, extractor: &LogMelExtractor, seconds: f64) -> Result<Vec<LogMelSpectrogram>, PipelineError> {
    let resampled = resample(w, extractor.data_rate())?;
    segment(&resampled, seconds)?
        .iter()
        .map(|s| extractor.extract(&s.samples).map_err(PipelineError::from))
        .collect()
}

/// Featurize every recording in parallel and route segments by their split.
pub fn split_features(
    recordings: &[Recording],
    split: &SplitFile,
    extractor: &LogMelExtractor,
    seconds: f64,
) -> Result<[LabeledSet; 3], PipelineError> {
    let assignment = split.assignment();
    let per_recording: Vec<(Split, usize, Vec<LogMelSpectrogram>)> = recordings
        .par_iter()
        .map(|r| {
            let id = r.waveform.source_id.as_str();
            let s = *assignment.get(id).ok_or_else(|| PipelineError::Unassigned(id.to_string()))?;
            Ok((s, r.label, featurize(&r.waveform, extractor, seconds)?))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut sets: [LabeledSet; 3] = Default::default();
    for (s, label, feats) in per_recording {
        for f in feats {
            sets[s.index()].push(f, label);
        }
    }
    Ok(sets)
}

/// Full path from recordings to a normalized dataset at one (data rate, config) pair.
pub fn build_dataset(
    recordings: &[Recording],
    split: &SplitFile,
    n_classes: usize,
    data_rate: u32,
    feature: &FeatureConfig,
    seconds: f64,
) -> Result<Dataset, PipelineError> {
    let extractor = LogMelExtractor::new(feature, data_rate)?;
    Dataset::from_raw(split_features(recordings, split, &extractor, seconds)?, n_classes)
}
