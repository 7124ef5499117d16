//! WAV ingestion and dataset manifests.
//!
//! The parser accepts RIFF/WAVE containers carrying 16-bit PCM or 32-bit IEEE
//! float samples in one or two channels. Stereo input is averaged to mono.
//! Anything else (compressed formats, 8/24/32-bit integer PCM, more than two
//! channels) is rejected with [`WavError::UnsupportedEncoding`].

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

pub const MANIFEST_HEADER: &str = "recording_id,class_label,file_path,duration_seconds";

#[derive(Debug, Error, PartialEq)]
pub enum WavError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("truncated data chunk: declared {declared} bytes, found {found}")]
    TruncatedData { declared: usize, found: usize },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ManifestError {
    #[error("line {line}: duplicate recording id `{id}`")]
    DuplicateRecording { line: usize, id: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: duration must be positive, got `{value}`")]
    NonPositiveDuration { line: usize, value: String },
    #[error("line {line}: unexpected header `{found}`")]
    BadHeader { line: usize, found: String },
    #[error("label `{0}` is not in the class list")]
    UnknownClass(String),
}

/// A mono signal with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub rate: u32,
    pub source_id: String,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, rate: u32, source_id: impl Into<String>) -> Result<Self, WavError> {
        if rate == 0 {
            return Err(WavError::InvalidWaveform("rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(WavError::InvalidWaveform("non-finite sample".into()));
        }
        Ok(Self { samples, rate, source_id: source_id.into() })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }
}

struct Format {
    audio_format: u16,
    channels: u16,
    rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parse a complete WAV file held in memory.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform, WavError> {
    if bytes.len() < 12 {
        return Err(WavError::MalformedHeader("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(WavError::MalformedHeader("missing RIFF magic".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::MalformedHeader("missing WAVE form type".into()));
    }

    let mut format: Option<Format> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(WavError::MalformedHeader("fmt chunk too short".into()));
                }
                let mut audio_format = u16_at(bytes, body);
                if audio_format == FORMAT_EXTENSIBLE {
                    // sub-format GUID starts at byte 24 of the extensible fmt body
                    if size < 40 || body + 26 > bytes.len() {
                        return Err(WavError::MalformedHeader("extensible fmt chunk too short".into()));
                    }
                    audio_format = u16_at(bytes, body + 24);
                }
                format = Some(Format {
                    audio_format,
                    channels: u16_at(bytes, body + 2),
                    rate: u32_at(bytes, body + 4),
                    bits: u16_at(bytes, body + 14),
                });
            }
            b"data" => {
                let fmt = format
                    .ok_or_else(|| WavError::MalformedHeader("data chunk before fmt chunk".into()))?;
                let available = bytes.len() - body;
                if available < size {
                    return Err(WavError::TruncatedData { declared: size, found: available });
                }
                return decode(&fmt, &bytes[body..body + size]);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(WavError::MalformedHeader("no data chunk".into()))
}

fn decode(fmt: &Format, data: &[u8]) -> Result<Waveform, WavError> {
    if fmt.rate == 0 {
        return Err(WavError::MalformedHeader("sample rate is zero".into()));
    }
    let channels = fmt.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(WavError::UnsupportedEncoding(format!("{channels} channels")));
    }
    let raw: Vec<f32> = match (fmt.audio_format, fmt.bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => {
            let mut out = Vec::with_capacity(data.len() / 4);
            for c in data.chunks_exact(4) {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if !v.is_finite() {
                    return Err(WavError::InvalidWaveform("non-finite float sample".into()));
                }
                out.push(v);
            }
            out
        }
        (FORMAT_PCM, bits) => {
            return Err(WavError::UnsupportedEncoding(format!("{bits}-bit integer PCM")))
        }
        (FORMAT_FLOAT, bits) => {
            return Err(WavError::UnsupportedEncoding(format!("{bits}-bit float")))
        }
        (other, _) => {
            return Err(WavError::UnsupportedEncoding(format!("audio format tag {other}")))
        }
    };
    let samples: Vec<f32> = if channels == 2 {
        raw.chunks_exact(2).map(|f| 0.5 * (f[0] + f[1])).collect()
    } else {
        raw
    };
    if samples.is_empty() {
        return Err(WavError::MalformedHeader("data chunk holds no complete frame".into()));
    }
    Ok(Waveform { samples, rate: fmt.rate, source_id: String::new() })
}

/// Encode a mono waveform as 16-bit PCM. Samples are clipped to [-1, 1).
pub fn write_wav_pcm16(w: &Waveform) -> Vec<u8> {
    let data_len = w.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.rate.to_le_bytes());
    out.extend_from_slice(&(w.rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &w.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub recording_id: String,
    pub class_label: String,
    pub file_path: String,
    pub duration_seconds: f64,
}

/// Recording-to-label table with an ordered class list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub classes: Vec<String>,
}

impl Manifest {
    /// Build a manifest, deriving the class list as the sorted distinct labels.
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self, ManifestError> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.recording_id.as_str()) {
                return Err(ManifestError::DuplicateRecording { line: i + 2, id: e.recording_id.clone() });
            }
            if !(e.duration_seconds > 0.0) {
                return Err(ManifestError::NonPositiveDuration {
                    line: i + 2,
                    value: e.duration_seconds.to_string(),
                });
            }
        }
        let classes = entries
            .iter()
            .map(|e| e.class_label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self { entries, classes })
    }

    pub fn class_index(&self, label: &str) -> Result<usize, ManifestError> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| ManifestError::UnknownClass(label.to_string()))
    }

    pub fn get(&self, recording_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.recording_id == recording_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_manifest(text: &str) -> Result<Manifest, ManifestError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == MANIFEST_HEADER => {}
        Some((i, l)) => return Err(ManifestError::BadHeader { line: i + 1, found: l.to_string() }),
        None => return Err(ManifestError::MissingField { line: 1, field: "recording_id" }),
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let mut fields = line.split(',').map(str::trim);
        let mut next = |field: &'static str| match fields.next() {
            Some(v) if !v.is_empty() => Ok(v.to_string()),
            _ => Err(ManifestError::MissingField { line: lineno, field }),
        };
        let recording_id = next("recording_id")?;
        let class_label = next("class_label")?;
        let file_path = next("file_path")?;
        let duration_raw = next("duration_seconds")?;
        let duration_seconds: f64 = duration_raw
            .parse()
            .map_err(|_| ManifestError::NonPositiveDuration { line: lineno, value: duration_raw.clone() })?;
        if !(duration_seconds > 0.0) || !duration_seconds.is_finite() {
            return Err(ManifestError::NonPositiveDuration { line: lineno, value: duration_raw });
        }
        if !seen.insert(recording_id.clone()) {
            return Err(ManifestError::DuplicateRecording { line: lineno, id: recording_id });
        }
        entries.push(ManifestEntry { recording_id, class_label, file_path, duration_seconds });
    }
    Manifest::from_entries(entries)
}

/// Serialize a manifest. Durations use the shortest round-tripping decimal form.
pub fn write_manifest(m: &Manifest) -> String {
    let mut out = String::with_capacity(64 * (m.entries.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for e in &m.entries {
        let _ = writeln!(out, "{},{},{},{}", e.recording_id, e.class_label, e.file_path, e.duration_seconds);
    }
    out
}
