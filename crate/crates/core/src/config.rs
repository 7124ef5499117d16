//! Flat `section.key = value` run configuration.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::dsp::{scale_config, FeatureConfig};
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "SONARPREP_SEED";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}, column {col}: {message}")]
    ParseError { line: usize, col: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("`{key}` out of range: {message}")]
    OutOfRange { key: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Paths {
    pub corpus_root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSettings {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self { ratios: [0.7, 0.1, 0.2], seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGrid {
    pub data_rates: Vec<u32>,
    pub model_rates: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub paths: Paths,
    pub feature: FeatureConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub split: SplitSettings,
    pub sweep: Option<SweepGrid>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            paths: Paths::default(),
            feature: train.feature.clone(),
            augment: train.augment.clone(),
            train,
            split: SplitSettings::default(),
            sweep: None,
        }
    }
}

impl RunConfig {
    /// Training config with this file's feature and augmentation sections folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { feature: self.feature.clone(), augment: self.augment.clone(), ..self.train.clone() }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replace the training seeds and split seed with one value.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.seeds = vec![seed];
        self.split.seed = seed;
    }

    /// Apply `SONARPREP_SEED` when set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v.trim().parse().map_err(|_| ConfigError::OutOfRange {
                key: SEED_ENV.into(),
                message: format!("`{v}` is not an unsigned integer"),
            })?;
            self.override_seed(seed);
        }
        Ok(())
    }
}

/// `8000`, `8k`, `8K`, `44.1k` -> Hz.
pub fn parse_rate(text: &str) -> Result<u32, String> {
    let t = text.trim();
    let (num, scale) = match t.strip_suffix(['k', 'K']) {
        Some(n) => (n, 1000.0),
        None => (t, 1.0),
    };
    let v: f64 = num.parse().map_err(|_| format!("`{text}` is not a rate"))?;
    let hz = v * scale;
    if !(hz >= 1.0 && hz <= u32::MAX as f64) || hz.fract() != 0.0 {
        return Err(format!("`{text}` is not a positive whole number of Hz"));
    }
    Ok(hz as u32)
}

pub fn parse_rate_list(text: &str) -> Result<Vec<u32>, String> {
    text.split(',').map(parse_rate).collect()
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_config(&text)
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
    value_col: usize,
}

impl Entry<'_> {
    fn bad(&self, message: String) -> ConfigError {
        ConfigError::ParseError { line: self.line, col: self.value_col, message: format!("`{}`: {message}", self.key) }
    }

    fn num<T: std::str::FromStr>(&self) -> Result<T, ConfigError> {
        self.value.parse().map_err(|_| self.bad(format!("cannot parse `{}`", self.value)))
    }

    fn rate(&self) -> Result<u32, ConfigError> {
        parse_rate(self.value).map_err(|m| self.bad(m))
    }

    fn path(&self) -> Option<PathBuf> {
        Some(PathBuf::from(self.value))
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut scale_keys_set = false;
    let mut model_rate = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        let indent = raw.len() - trimmed.len();
        let Some(eq) = trimmed.find('=') else {
            return Err(ConfigError::ParseError { line, col: indent + 1, message: format!("expected `key = value`, got `{}`", trimmed.trim_end()) });
        };
        let key = trimmed[..eq].trim();
        let after = &trimmed[eq + 1..];
        let value = after.trim();
        let value_col = indent + eq + 2 + (after.len() - after.trim_start().len());
        let valid_key = key.split_once('.').is_some_and(|(s, k)| {
            !s.is_empty() && !k.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        });
        if !valid_key {
            return Err(ConfigError::ParseError { line, col: indent + 1, message: format!("malformed key `{key}`, expected `section.key`") });
        }
        let e = Entry { line, key, value, value_col };
        match key {
            "paths.corpus_root" => cfg.paths.corpus_root = e.path(),
            "paths.manifest" => cfg.paths.manifest = e.path(),
            "paths.split" => cfg.paths.split = e.path(),
            "paths.features" => cfg.paths.features = e.path(),
            "paths.out" => cfg.paths.out = e.path(),
            "feature.model_rate" => model_rate = Some(e.rate()?),
            "feature.win_length" => {
                cfg.feature.win_length = e.num()?;
                scale_keys_set = true;
            }
            "feature.hop_length" => {
                cfg.feature.hop_length = e.num()?;
                scale_keys_set = true;
            }
            "feature.f_max" => {
                cfg.feature.f_max = e.num()?;
                scale_keys_set = true;
            }
            "feature.n_mels" => cfg.feature.n_mels = e.num()?,
            "feature.f_min" => cfg.feature.f_min = e.num()?,
            "augment.base_time_mask_width" => cfg.augment.base_time_mask_width = e.num()?,
            "augment.freq_mask_width" => cfg.augment.freq_mask_width = e.num()?,
            "augment.n_time_masks" => cfg.augment.n_time_masks = e.num()?,
            "augment.n_freq_masks" => cfg.augment.n_freq_masks = e.num()?,
            "augment.mixup_alpha" => cfg.augment.mixup_alpha = e.num()?,
            "augment.mixup" => cfg.augment.mixup = e.num()?,
            "augment.data_rate" => cfg.augment.data_rate = e.rate()?,
            "train.lr" => cfg.train.lr = e.num()?,
            "train.batch_size" => cfg.train.batch_size = e.num()?,
            "train.max_epochs" => cfg.train.max_epochs = e.num()?,
            "train.patience" => cfg.train.patience = e.num()?,
            "train.segment_seconds" => cfg.train.segment_seconds = e.num()?,
            "train.seeds" => {
                cfg.train.seeds = value.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| e.bad(format!("cannot parse seed list `{value}`")))?
            }
            "split.ratios" => {
                let parts: Vec<f64> = value.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| e.bad(format!("cannot parse ratios `{value}`")))?;
                cfg.split.ratios = parts.try_into().map_err(|_| e.bad("expected three ratios".into()))?;
            }
            "split.seed" => cfg.split.seed = e.num()?,
            "sweep.data_rates" => {
                cfg.sweep.get_or_insert_with(|| SweepGrid { data_rates: vec![], model_rates: vec![] }).data_rates = parse_rate_list(value).map_err(|m| e.bad(m))?
            }
            "sweep.model_rates" => {
                cfg.sweep.get_or_insert_with(|| SweepGrid { data_rates: vec![], model_rates: vec![] }).model_rates = parse_rate_list(value).map_err(|m| e.bad(m))?
            }
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
    }
    if let Some(rate) = model_rate {
        if scale_keys_set {
            cfg.feature.model_rate = rate;
        } else {
            cfg.feature = scale_config(&cfg.feature, rate).map_err(|e| ConfigError::OutOfRange { key: "feature.model_rate".into(), message: e.to_string() })?;
        }
    }
    cfg.augment.model_rate = cfg.feature.model_rate;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let range = |key: &str, message: String| Err(ConfigError::OutOfRange { key: key.into(), message });
    if let Err(e) = cfg.feature.validate() {
        return range("feature", e.to_string());
    }
    if let Err(e) = cfg.augment.validate() {
        return range("augment", e.to_string());
    }
    if let Err(e) = cfg.train_config().validate() {
        return range("train", e.to_string());
    }
    let sum: f64 = cfg.split.ratios.iter().sum();
    if cfg.split.ratios.iter().any(|&r| !(r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return range("split.ratios", format!("need three positive ratios summing to 1, got {:?}", cfg.split.ratios));
    }
    if let Some(s) = &cfg.sweep {
        if s.data_rates.is_empty() || s.model_rates.is_empty() {
            return range("sweep", "both data_rates and model_rates are required".into());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let f = &cfg.feature;
        assert_eq!((f.model_rate, f.win_length, f.hop_length, f.n_mels), (32_000, 1024, 320, 64));
        assert_eq!((f.f_min, f.f_max), (50.0, 14_000.0));
        let t = &cfg.train;
        assert_eq!((t.lr, t.batch_size, t.max_epochs, t.patience, t.seeds.len()), (5e-5, 64, 100, 50, 3));
        assert_eq!(cfg.augment.base_time_mask_width, 64);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = parse_config("# sweep mode\ntrain.batch_size = 32\n\n  train.seeds = 7, 8\nsweep.data_rates = 2k,4k\nsweep.model_rates=8k\n").unwrap();
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.seeds, vec![7, 8]);
        assert_eq!(cfg.sweep, Some(SweepGrid { data_rates: vec![2000, 4000], model_rates: vec![8000] }));
    }

    #[test]
    fn model_rate_rescales_unless_pinned() {
        let cfg = parse_config("feature.model_rate = 16k\n").unwrap();
        assert_eq!((cfg.feature.win_length, cfg.feature.hop_length, cfg.feature.f_max), (512, 160, 7000.0));
        assert_eq!(cfg.augment.model_rate, 16_000);
        let cfg = parse_config("feature.model_rate = 16k\nfeature.hop_length = 100\nfeature.f_max = 6000\n").unwrap();
        assert_eq!((cfg.feature.win_length, cfg.feature.hop_length), (1024, 100));
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(
            parse_config("train.lr = 1e-3\nbatch_size = 3\n").unwrap_err(),
            ConfigError::ParseError { line: 2, col: 1, message: "malformed key `batch_size`, expected `section.key`".into() }
        );
        match parse_config("train.batch_size = many\n").unwrap_err() {
            ConfigError::ParseError { line: 1, col: 20, message } => assert!(message.contains("train.batch_size")),
            e => panic!("{e:?}"),
        }
        assert!(matches!(parse_config("no equals here\n"), Err(ConfigError::ParseError { line: 1, .. })));
        assert_eq!(parse_config("train.speed = 3\n").unwrap_err(), ConfigError::UnknownKey { line: 1, key: "train.speed".into() });
        assert!(matches!(parse_config("train.patience = 500\n"), Err(ConfigError::OutOfRange { .. })));
        assert!(matches!(parse_config("split.ratios = 0.5,0.5,0.5\n"), Err(ConfigError::OutOfRange { .. })));
    }

    #[test]
    fn rates() {
        assert_eq!(parse_rate("2k"), Ok(2000));
        assert_eq!(parse_rate("44.1k"), Ok(44_100));
        assert_eq!(parse_rate("16000"), Ok(16_000));
        assert!(parse_rate("0").is_err());
        assert!(parse_rate("fast").is_err());
        assert_eq!(parse_rate_list("2k,4k"), Ok(vec![2000, 4000]));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.override_seed(9);
        assert_ne!(a.hash(), b.hash());
    }
}
