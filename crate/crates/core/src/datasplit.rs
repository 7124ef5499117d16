//! Recording-level stratified splitting and train-statistics normalisation.
//!
//! Splits are decided per recording, never per segment, so every segment of a
//! recording lands in the same partition. Per-class quotas come from
//! largest-remainder rounding of the ratio targets with at least one recording
//! per split; which recordings fill each quota is a seeded shuffle, and among a
//! few seeded candidates the one closest to the segment-count targets wins.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::LogMelSpectrogram;
use crate::wavio::Manifest;

/// Seeded candidate orderings tried per class for the segment-count tie-break.
const SHUFFLE_CANDIDATES: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("class `{class}` has {count} recordings; at least 3 are needed to populate every split")]
    TooFewRecordings { class: String, count: usize },
    #[error("recording `{0}` has no segment count")]
    MissingSegmentCount(String),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("split file names unknown recording `{0}`")]
    UnknownRecording(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum NormError {
    #[error("no training spectrograms")]
    EmptyTrainingSet,
    #[error("degenerate statistics: min {min} >= max {max}")]
    DegenerateStats { min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { ratios: [0.7, 0.1, 0.2], seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        if self.ratios.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(SplitError::InvalidRatios(format!("each ratio must lie in (0, 1): {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::InvalidRatios(format!("ratios sum to {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitEntry {
    pub recording_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub recordings: usize,
    pub segments: usize,
}

/// A recording-level assignment plus per-class, per-split tallies.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFile {
    pub entries: Vec<SplitEntry>,
    pub seed: u64,
    /// class label -> counts indexed by [`Split::index`].
    pub class_counts: BTreeMap<String, [Counts; 3]>,
}

impl SplitFile {
    /// Rebuild tallies for an assignment, e.g. after loading one from disk.
    pub fn from_entries(
        entries: Vec<SplitEntry>,
        seed: u64,
        manifest: &Manifest,
        segment_counts: &HashMap<String, usize>,
    ) -> Result<Self, SplitError> {
        let mut class_counts: BTreeMap<String, [Counts; 3]> =
            manifest.classes.iter().map(|c| (c.clone(), [Counts::default(); 3])).collect();
        for e in &entries {
            let m = manifest.get(&e.recording_id).ok_or_else(|| SplitError::UnknownRecording(e.recording_id.clone()))?;
            let segs = *segment_counts
                .get(&e.recording_id)
                .ok_or_else(|| SplitError::MissingSegmentCount(e.recording_id.clone()))?;
            let c = &mut class_counts.get_mut(&m.class_label).expect("manifest class")[e.split.index()];
            c.recordings += 1;
            c.segments += segs;
        }
        Ok(Self { entries, seed, class_counts })
    }

    pub fn split_of(&self, recording_id: &str) -> Option<Split> {
        self.entries.iter().find(|e| e.recording_id == recording_id).map(|e| e.split)
    }

    pub fn assignment(&self) -> HashMap<&str, Split> {
        self.entries.iter().map(|e| (e.recording_id.as_str(), e.split)).collect()
    }

    pub fn recordings_in(&self, split: Split) -> Vec<&str> {
        self.entries.iter().filter(|e| e.split == split).map(|e| e.recording_id.as_str()).collect()
    }

    pub fn totals(&self) -> [Counts; 3] {
        let mut out = [Counts::default(); 3];
        for per_class in self.class_counts.values() {
            for (o, c) in out.iter_mut().zip(per_class) {
                o.recordings += c.recordings;
                o.segments += c.segments;
            }
        }
        out
    }

    /// CSV `recording_id,split` with a trailing `# seed=<n>` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("recording_id,split\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{}", e.recording_id, e.split);
        }
        let _ = writeln!(out, "# seed={}", self.seed);
        out
    }
}

/// Parse a split CSV into its rows and seed.
pub fn read_split_csv(text: &str) -> Result<(Vec<SplitEntry>, u64), SplitError> {
    let mut entries = Vec::new();
    let mut seed = None;
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let value = rest.trim().strip_prefix("seed=").ok_or_else(|| SplitError::Parse {
                line: lineno,
                message: format!("unrecognised comment `{line}`"),
            })?;
            seed = Some(value.parse().map_err(|_| SplitError::Parse {
                line: lineno,
                message: format!("bad seed `{value}`"),
            })?);
            continue;
        }
        if !header_seen {
            if line != "recording_id,split" {
                return Err(SplitError::Parse { line: lineno, message: format!("expected header, found `{line}`") });
            }
            header_seen = true;
            continue;
        }
        let (id, split) = line
            .split_once(',')
            .ok_or_else(|| SplitError::Parse { line: lineno, message: "expected `recording_id,split`".into() })?;
        let split = split.trim().parse().map_err(|message| SplitError::Parse { line: lineno, message })?;
        entries.push(SplitEntry { recording_id: id.trim().to_string(), split });
    }
    let seed = seed.ok_or(SplitError::Parse { line: text.lines().count(), message: "missing `# seed=` line".into() })?;
    Ok((entries, seed))
}

/// Largest-remainder recording quotas for one class, at least one per split.
pub fn class_quotas(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let targets: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut quotas = [0usize; 3];
    for (q, t) in quotas.iter_mut().zip(&targets) {
        *q = t.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    // stable sort keeps the lower split index first on equal remainders
    order.sort_by(|&a, &b| (targets[b] - targets[b].floor()).total_cmp(&(targets[a] - targets[a].floor())));
    let mut left = n - quotas.iter().sum::<usize>();
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        quotas[s] += 1;
        left -= 1;
    }
    while let Some(empty) = quotas.iter().position(|&q| q == 0) {
        let donor = (0..3)
            .filter(|&s| quotas[s] > 1)
            .max_by(|&a, &b| (quotas[a] as f64 - targets[a]).total_cmp(&(quotas[b] as f64 - targets[b])))
            .expect("n >= 3 leaves a donor");
        quotas[donor] -= 1;
        quotas[empty] += 1;
    }
    quotas
}

fn class_seed(seed: u64, class: &str) -> u64 {
    // FNV-1a over the label, mixed with the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in class.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn stratified_split(
    m: &Manifest,
    segment_counts: &HashMap<String, usize>,
    spec: &SplitSpec,
) -> Result<SplitFile, SplitError> {
    spec.validate()?;
    for e in &m.entries {
        if !segment_counts.contains_key(&e.recording_id) {
            return Err(SplitError::MissingSegmentCount(e.recording_id.clone()));
        }
    }
    let mut split_of: HashMap<&str, Split> = HashMap::with_capacity(m.len());
    for class in &m.classes {
        let members: Vec<&str> = m
            .entries
            .iter()
            .filter(|e| &e.class_label == class)
            .map(|e| e.recording_id.as_str())
            .collect();
        if members.len() < 3 {
            return Err(SplitError::TooFewRecordings { class: class.clone(), count: members.len() });
        }
        let quotas = class_quotas(members.len(), &spec.ratios);
        let total_segments: usize = members.iter().map(|id| segment_counts[*id]).sum();

        let mut rng = ChaCha8Rng::seed_from_u64(class_seed(spec.seed, class));
        let mut best: Option<(f64, Vec<&str>)> = None;
        for _ in 0..SHUFFLE_CANDIDATES {
            let mut order = members.clone();
            order.shuffle(&mut rng);
            let mut cost = 0.0;
            let mut start = 0;
            for (s, &q) in quotas.iter().enumerate() {
                let segs: usize = order[start..start + q].iter().map(|id| segment_counts[*id]).sum();
                cost += (segs as f64 - spec.ratios[s] * total_segments as f64).abs();
                start += q;
            }
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, order));
            }
        }
        let order = best.expect("at least one candidate").1;
        let mut start = 0;
        for (split, &q) in Split::ALL.iter().zip(&quotas) {
            for id in &order[start..start + q] {
                split_of.insert(id, *split);
            }
            start += q;
        }
    }
    let entries = m
        .entries
        .iter()
        .map(|e| SplitEntry { recording_id: e.recording_id.clone(), split: split_of[e.recording_id.as_str()] })
        .collect();
    SplitFile::from_entries(entries, spec.seed, m, segment_counts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitFailure {
    /// A recording appears in more than one split.
    LeakageDetected { recording_id: String, splits: Vec<Split> },
    /// A recording is listed twice in the same split.
    DuplicateEntry { recording_id: String },
    Unassigned { recording_id: String },
    UnknownRecording { recording_id: String },
    MissingClass { split: Split, class: String },
    CountMismatch { class: String, split: Split },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub failures: Vec<SplitFailure>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return writeln!(f, "PASS");
        }
        writeln!(f, "FAIL ({} problems)", self.failures.len())?;
        for x in &self.failures {
            writeln!(f, "  {x:?}")?;
        }
        Ok(())
    }
}

/// Check that a split partitions the manifest and covers every class in every split.
pub fn validate_split(sf: &SplitFile, m: &Manifest) -> ValidationReport {
    let mut failures = Vec::new();
    let known: HashSet<&str> = m.entries.iter().map(|e| e.recording_id.as_str()).collect();
    let mut seen: BTreeMap<&str, Vec<Split>> = BTreeMap::new();
    for e in &sf.entries {
        seen.entry(e.recording_id.as_str()).or_default().push(e.split);
    }
    for (id, splits) in &seen {
        if !known.contains(id) {
            failures.push(SplitFailure::UnknownRecording { recording_id: id.to_string() });
        }
        let mut distinct = splits.clone();
        distinct.sort();
        distinct.dedup();
        if distinct.len() > 1 {
            failures.push(SplitFailure::LeakageDetected { recording_id: id.to_string(), splits: distinct });
        } else if splits.len() > 1 {
            failures.push(SplitFailure::DuplicateEntry { recording_id: id.to_string() });
        }
    }
    for e in &m.entries {
        if !seen.contains_key(e.recording_id.as_str()) {
            failures.push(SplitFailure::Unassigned { recording_id: e.recording_id.clone() });
        }
    }

    let mut recordings: BTreeMap<(&str, Split), usize> = BTreeMap::new();
    for e in &sf.entries {
        if let Some(me) = m.get(&e.recording_id) {
            *recordings.entry((me.class_label.as_str(), e.split)).or_default() += 1;
        }
    }
    for split in Split::ALL {
        for class in &m.classes {
            let have = recordings.get(&(class.as_str(), split)).copied().unwrap_or(0);
            if have == 0 {
                failures.push(SplitFailure::MissingClass { split, class: class.clone() });
            }
            let recorded = sf.class_counts.get(class).map(|c| c[split.index()].recordings);
            if recorded.is_some_and(|r| r != have) {
                failures.push(SplitFailure::CountMismatch { class: class.clone(), split });
            }
        }
    }
    ValidationReport { failures }
}

/// Global scalar extrema of the training features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub global_min: f64,
    pub global_max: f64,
}

impl NormStats {
    pub fn is_degenerate(&self) -> bool {
        !(self.global_min < self.global_max)
    }
}

pub fn compute_norm_stats<'a, I>(train_features: I) -> Result<NormStats, NormError>
where
    I: IntoIterator<Item = &'a LogMelSpectrogram>,
{
    let mut any = false;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for spec in train_features {
        for &v in &spec.values.data {
            any = true;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !any {
        return Err(NormError::EmptyTrainingSet);
    }
    Ok(NormStats { global_min: lo, global_max: hi })
}

/// `(x - min) / (max - min)`; values outside the training range are not clamped.
pub fn normalize(spec: &LogMelSpectrogram, stats: &NormStats) -> Result<LogMelSpectrogram, NormError> {
    if stats.is_degenerate() {
        return Err(NormError::DegenerateStats { min: stats.global_min, max: stats.global_max });
    }
    let range = stats.global_max - stats.global_min;
    let mut out = spec.clone();
    out.values.data.iter_mut().for_each(|v| *v = (*v - stats.global_min) / range);
    Ok(out)
}
