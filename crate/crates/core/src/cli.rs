//! Command-line front end. Exit codes: 0 success, 1 validation or stage
//! failure, 2 usage error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_config, parse_rate, parse_rate_list, RunConfig};
use crate::datasplit::{read_split_csv, stratified_split, validate_split, NormStats, Split, SplitFile, SplitSpec};
use crate::dsp::{read_archive, scale_config, write_archive, FeatureConfig};
use crate::eval::{aggregate_cams, aggregate_runs, evaluate, render_report, write_cams, Metrics, ReportInput, ReportTable};
use crate::nn::{load_into, read_checkpoint, save_model, Architecture, Model};
use crate::pipeline::{split_features, Dataset, LabeledSet, Recording};
use crate::trainer::{desk_architecture, rate_label, run_seeds, sweep, RunSummary};
use crate::wavio::{load_manifest, parse_wav, write_manifest, Manifest, ManifestEntry};

#[derive(Parser, Debug)]
#[command(name = "sonarprep", version, about = "Passive-sonar vessel classification pipeline")]
struct Cli {
    /// Run-config file with `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a manifest from `<root>/<class>/**/*.wav`.
    Ingest {
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a stratified recording-level split, or check an existing one.
    Split {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, required_unless_present = "validate")]
        out: Option<PathBuf>,
        /// Validate this split file instead of writing one.
        #[arg(long)]
        validate: Option<PathBuf>,
    },
    /// Resample, segment, extract log-mel features, normalize, and archive.
    Featurize {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        data_rate: Option<String>,
        #[arg(long)]
        model_rate: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed on featurized data.
    Train {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
        /// Checkpoint to initialise from; 3-channel first kernels are aggregated.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Test-set metrics for a saved model.
    Eval {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every (data rate, model rate) combination.
    Sweep {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        data_rates: Option<String>,
        #[arg(long)]
        model_rates: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grad-CAM maps on the test set, averaged per class and correctness.
    Gradcam {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect train output directories into one accuracy table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct CorpusArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Directory that manifest file paths are relative to; defaults to the manifest's directory.
    #[arg(long)]
    root: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Validation(String),
    Stage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Stage(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Validation(m)) => {
            eprintln!("validation failed: {m}");
            1
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    cfg.apply_env().map_err(|e| Failure::Usage(e.to_string()))?;
    match cli.command {
        Command::Ingest { root, out } => ingest(&pick(root, &cfg.paths.corpus_root, "--root")?, &out),
        Command::Split { manifest, ratios, seed, out, validate } => {
            let manifest = pick(manifest, &cfg.paths.manifest, "--manifest")?;
            if let Some(r) = ratios {
                let parts: Vec<f64> = r.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().or_else(|_| usage(format!("bad --ratios `{r}`")))?;
                cfg.split.ratios = parts.try_into().or_else(|_| usage("--ratios needs three values"))?;
            }
            if let Some(s) = seed {
                cfg.split.seed = s;
            }
            match validate {
                Some(path) => check_split(&manifest, &path, &cfg),
                None => write_split(&manifest, &out.expect("clap enforces --out"), &cfg),
            }
        }
        Command::Featurize { corpus, data_rate, model_rate, jobs, out } => {
            if let Some(r) = model_rate {
                let rate = parse_rate(&r).or_else(usage)?;
                cfg.feature = scale_config(&cfg.feature, rate).map_err(|e| Failure::Usage(e.to_string()))?;
            }
            let data_rate = match data_rate {
                Some(r) => parse_rate(&r).or_else(usage)?,
                None => cfg.feature.model_rate,
            };
            with_jobs(jobs, || featurize(&corpus, &cfg, data_rate, &out))
        }
        Command::Train { features, out, lr, epochs, batch_size, patience, seeds, init } => {
            if let Some(v) = lr {
                cfg.train.lr = v;
            }
            if let Some(v) = epochs {
                cfg.train.max_epochs = v;
                cfg.train.patience = cfg.train.patience.min(v);
            }
            if let Some(v) = batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = patience {
                cfg.train.patience = v;
            }
            if let Some(s) = seeds {
                cfg.train.seeds = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().or_else(|_| usage(format!("bad --seeds `{s}`")))?;
            }
            let features = pick(features, &cfg.paths.features, "--features")?;
            train(&features, &out, init.as_deref(), &cfg)
        }
        Command::Eval { features, model, out } => eval(&pick(features, &cfg.paths.features, "--features")?, &model, &out, &cfg),
        Command::Sweep { corpus, data_rates, model_rates, jobs, out } => {
            let grid = cfg.sweep.clone();
            let data_rates = match (data_rates, &grid) {
                (Some(r), _) => parse_rate_list(&r).or_else(usage)?,
                (None, Some(g)) => g.data_rates.clone(),
                (None, None) => return usage("missing --data-rates"),
            };
            let model_rates = match (model_rates, &grid) {
                (Some(r), _) => parse_rate_list(&r).or_else(usage)?,
                (None, Some(g)) => g.model_rates.clone(),
                (None, None) => return usage("missing --model-rates"),
            };
            with_jobs(jobs, || run_sweep(&corpus, &cfg, &data_rates, &model_rates, &out))
        }
        Command::Gradcam { features, model, out } => gradcam(&pick(features, &cfg.paths.features, "--features")?, &model, &out),
        Command::Report { runs, out } => report(&runs, &out),
    }
}

fn pick(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    match flag.or_else(|| from_config.clone()) {
        Some(p) => Ok(p),
        None => usage(format!("{name} is required (flag or config)")),
    }
}

fn with_jobs<F>(jobs: Option<usize>, f: F) -> CliResult<()>
where
    F: FnOnce() -> CliResult<()> + Send,
{
    match jobs {
        Some(0) => usage("--jobs must be at least 1"),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().context("building worker pool")?;
            pool.install(f)
        }
        None => f(),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    Ok(std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seeds: &'a [u64],
    split_seed: u64,
}

fn write_run_json(out: &Path, command: &str, cfg: &RunConfig) -> CliResult<()> {
    let p = Provenance {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seeds: &cfg.train.seeds,
        split_seed: cfg.split.seed,
    };
    write(&out.join("run.json"), json(&p))
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if e.file_type()?.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

fn ingest(root: &Path, out: &Path) -> CliResult<()> {
    let mut files = Vec::new();
    collect_wavs(root, &mut files).with_context(|| format!("scanning {}", root.display()))?;
    let entries = files
        .par_iter()
        .map(|path| -> anyhow::Result<ManifestEntry> {
            let rel = path.strip_prefix(root).expect("walked under root");
            let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            if parts.len() < 2 {
                bail!("{} is not inside a class directory", path.display());
            }
            let rel_str = parts.join("/");
            if rel_str.contains(',') {
                bail!("{rel_str}: commas are not allowed in paths");
            }
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let w = parse_wav(&bytes).with_context(|| format!("parsing {}", path.display()))?;
            let id = rel_str.rsplit_once('.').map_or(rel_str.as_str(), |(stem, _)| stem).to_string();
            Ok(ManifestEntry {
                recording_id: id,
                class_label: parts[0].clone(),
                file_path: rel_str.clone(),
                duration_seconds: w.duration_seconds(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let m = Manifest::from_entries(entries).context("building manifest")?;
    write(out, write_manifest(&m))?;
    eprintln!("ingest: {} recordings, {} classes", m.len(), m.classes.len());
    Ok(())
}

fn load_manifest_file(path: &Path) -> CliResult<Manifest> {
    Ok(load_manifest(&read_text(path)?).with_context(|| format!("loading {}", path.display()))?)
}

fn segment_counts(m: &Manifest, seconds: f64) -> HashMap<String, usize> {
    m.entries
        .iter()
        .map(|e| (e.recording_id.clone(), (e.duration_seconds / seconds + 1e-9).floor() as usize))
        .collect()
}

fn write_split(manifest: &Path, out: &Path, cfg: &RunConfig) -> CliResult<()> {
    let m = load_manifest_file(manifest)?;
    let counts = segment_counts(&m, cfg.train.segment_seconds);
    let spec = SplitSpec { ratios: cfg.split.ratios, seed: cfg.split.seed };
    let sf = stratified_split(&m, &counts, &spec).context("splitting")?;
    write(out, sf.to_csv())?;
    let t = sf.totals();
    eprintln!(
        "split: train {} / val {} / test {} recordings",
        t[0].recordings, t[1].recordings, t[2].recordings
    );
    Ok(())
}

fn load_split(path: &Path, m: &Manifest, seconds: f64) -> CliResult<SplitFile> {
    let (entries, seed) = read_split_csv(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    Ok(SplitFile::from_entries(entries, seed, m, &segment_counts(m, seconds)).with_context(|| format!("loading {}", path.display()))?)
}

fn check_split(manifest: &Path, split: &Path, cfg: &RunConfig) -> CliResult<()> {
    let m = load_manifest_file(manifest)?;
    let sf = match load_split(split, &m, cfg.train.segment_seconds) {
        Ok(sf) => sf,
        Err(Failure::Stage(e)) => return Err(Failure::Validation(format!("{e:#}"))),
        Err(other) => return Err(other),
    };
    let report = validate_split(&sf, &m);
    if report.passed() {
        eprintln!("split OK");
        Ok(())
    } else {
        Err(Failure::Validation(report.to_string()))
    }
}

/// Metadata stored next to the feature archives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub data_rate: u32,
    pub segment_seconds: f64,
    pub feature: FeatureConfig,
    pub stats: NormStats,
    pub classes: Vec<String>,
    pub counts: [usize; 3],
}

fn load_recordings(corpus: &CorpusArgs, cfg: &RunConfig) -> CliResult<(Manifest, SplitFile, Vec<Recording>)> {
    let manifest_path = pick(corpus.manifest.clone(), &cfg.paths.manifest, "--manifest")?;
    let split_path = pick(corpus.split.clone(), &cfg.paths.split, "--split")?;
    let root = corpus
        .root
        .clone()
        .or_else(|| cfg.paths.corpus_root.clone())
        .unwrap_or_else(|| manifest_path.parent().map(Path::to_path_buf).unwrap_or_default());
    let m = load_manifest_file(&manifest_path)?;
    let sf = load_split(&split_path, &m, cfg.train.segment_seconds)?;
    let report = validate_split(&sf, &m);
    if !report.passed() {
        return Err(Failure::Validation(report.to_string()));
    }
    let recordings = m
        .entries
        .par_iter()
        .map(|e| -> anyhow::Result<Recording> {
            let path = root.join(&e.file_path);
            let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut waveform = parse_wav(&bytes).with_context(|| format!("parsing {}", path.display()))?;
            waveform.source_id = e.recording_id.clone();
            Ok(Recording { waveform, label: m.class_index(&e.class_label)? })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((m, sf, recordings))
}

fn featurize(corpus: &CorpusArgs, cfg: &RunConfig, data_rate: u32, out: &Path) -> CliResult<()> {
    let (m, sf, recordings) = load_recordings(corpus, cfg)?;
    let extractor = crate::dsp::LogMelExtractor::new(&cfg.feature, data_rate).context("feature config")?;
    let raw = split_features(&recordings, &sf, &extractor, cfg.train.segment_seconds).context("featurizing")?;
    let data = Dataset::from_raw(raw, m.classes.len()).context("normalizing")?;
    for split in Split::ALL {
        let bytes = write_archive(&data.set(split).to_archive()).context("encoding archive")?;
        write(&out.join(format!("{split}.sprf")), bytes)?;
    }
    let index = FeatureIndex {
        data_rate,
        segment_seconds: cfg.train.segment_seconds,
        feature: cfg.feature.clone(),
        stats: data.stats,
        classes: m.classes.clone(),
        counts: Split::ALL.map(|s| data.set(s).len()),
    };
    write(&out.join("features.json"), json(&index))?;
    write_run_json(out, "featurize", cfg)?;
    let (f, mels) = data.train.shape().context("feature shapes")?.unwrap_or_default();
    eprintln!("featurize: {:?} segments, {f} frames x {mels} mels", index.counts);
    Ok(())
}

/// Read `features.json` and the three archives written by `featurize`.
pub fn load_features(dir: &Path) -> anyhow::Result<(FeatureIndex, Dataset)> {
    let text = std::fs::read_to_string(dir.join("features.json")).with_context(|| format!("reading {}/features.json", dir.display()))?;
    let index: FeatureIndex = serde_json::from_str(&text).context("parsing features.json")?;
    let mut sets: [LabeledSet; 3] = Default::default();
    for split in Split::ALL {
        let path = dir.join(format!("{split}.sprf"));
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let items = read_archive(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        sets[split.index()] = LabeledSet::from_archive(&items, &index.feature, index.data_rate);
    }
    let [train, val, test] = sets;
    let data = Dataset { train, val, test, n_classes: index.classes.len(), stats: index.stats };
    Ok((index, data))
}

#[derive(Serialize, Deserialize)]
struct TrainSummary {
    classes: Vec<String>,
    config_hash: String,
    mean_accuracy: f64,
    std_accuracy: f64,
    runs: Vec<RunSummaryRecord>,
}

#[derive(Serialize, Deserialize)]
struct RunSummaryRecord {
    seed: u64,
    best_epoch: usize,
    stopped_epoch: usize,
    test_accuracy: f64,
    confusion: Vec<Vec<u64>>,
}

impl From<(RunSummary, &Metrics)> for RunSummaryRecord {
    fn from((s, m): (RunSummary, &Metrics)) -> Self {
        Self {
            seed: s.seed,
            best_epoch: s.best_epoch,
            stopped_epoch: s.stopped_epoch,
            test_accuracy: s.test_accuracy,
            confusion: m.confusion.clone(),
        }
    }
}

fn train(features: &Path, out: &Path, init: Option<&Path>, cfg: &RunConfig) -> CliResult<()> {
    let (index, data) = load_features(features)?;
    let mut tcfg = cfg.train_config();
    tcfg.feature = index.feature.clone();
    tcfg.augment.data_rate = index.data_rate;
    tcfg.augment.model_rate = index.feature.model_rate;
    tcfg.segment_seconds = index.segment_seconds;
    tcfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let arch = desk_architecture(&data).context("model shape")?;
    let init_tensors = match init {
        Some(p) => Some(read_checkpoint(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?).context("decoding checkpoint")?),
        None => None,
    };
    let runs = run_seeds(&tcfg, &data, &arch, init_tensors.as_deref()).context("training")?;
    let mut run_cfg = cfg.clone();
    run_cfg.train = tcfg;
    let hash = run_cfg.hash();
    for r in &runs {
        write(&out.join(format!("history_seed{}.csv", r.seed)), r.history.to_csv())?;
        write(&out.join(format!("model_seed{}.spnn", r.seed)), save_model(&r.model))?;
    }
    let metrics: Vec<Metrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    let agg = aggregate_runs(&metrics).context("aggregating runs")?;
    let summary = TrainSummary {
        classes: index.classes.clone(),
        config_hash: hash,
        mean_accuracy: agg.mean_accuracy,
        std_accuracy: agg.std_accuracy,
        runs: runs.iter().map(|r| (r.summary(&run_cfg.hash()), &r.metrics).into()).collect(),
    };
    write(&out.join("summary.json"), json(&summary))?;
    write_run_json(out, "train", &run_cfg)?;
    for r in &runs {
        eprintln!("train: seed {} best epoch {} test accuracy {:.4}", r.seed, r.history.best_epoch, r.metrics.accuracy);
    }
    Ok(())
}

fn load_model(path: &Path, arch: &Architecture, n_classes: usize) -> CliResult<Model> {
    let mut model = Model::new(arch, n_classes, 0).context("building model")?;
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_into(&mut model, read_checkpoint(&bytes).context("decoding checkpoint")?).context("loading weights")?;
    Ok(model)
}

fn eval(features: &Path, model_path: &Path, out: &Path, cfg: &RunConfig) -> CliResult<()> {
    let (index, data) = load_features(features)?;
    let model = load_model(model_path, &desk_architecture(&data).context("model shape")?, data.n_classes)?;
    let metrics = evaluate(&model, &data.test).context("evaluating")?;
    let agg = aggregate_runs(std::slice::from_ref(&metrics)).context("aggregating")?;
    write(&out.join("metrics.json"), json(&metrics))?;
    let input = ReportInput {
        table: ReportTable::new("model", vec!["test".into()], vec!["accuracy".into()], |_, _| Some((metrics.accuracy, 0.0))),
        class_names: index.classes,
        aggregates: vec![("test".into(), agg)],
        cams: None,
    };
    render_report(out, &input).context("writing report")?;
    write_run_json(out, "eval", cfg)?;
    eprintln!("eval: accuracy {:.4}", metrics.accuracy);
    Ok(())
}

fn gradcam(features: &Path, model_path: &Path, out: &Path) -> CliResult<()> {
    let (index, data) = load_features(features)?;
    let mut model = load_model(model_path, &desk_architecture(&data).context("model shape")?, data.n_classes)?;
    let cams = aggregate_cams(&mut model, &data.test, data.n_classes).context("computing Grad-CAM")?;
    write_cams(out, &cams, &index.classes).context("writing CAM files")?;
    for b in &cams.buckets {
        let kind = if b.correct { "correct" } else { "misclassified" };
        eprintln!("gradcam: {} {kind}: {}", index.classes[b.class], b.count);
    }
    Ok(())
}

fn run_sweep(corpus: &CorpusArgs, cfg: &RunConfig, data_rates: &[u32], model_rates: &[u32], out: &Path) -> CliResult<()> {
    let (m, sf, recordings) = load_recordings(corpus, cfg)?;
    let tcfg = cfg.train_config();
    let result = sweep(data_rates, model_rates, &tcfg, &recordings, &sf, m.classes.len()).context("sweep")?;
    let mut aggregates = Vec::new();
    for c in &result.cells {
        let name = format!("{}_{}", rate_label(c.data_rate), rate_label(c.model_rate));
        aggregates.push((name, aggregate_runs(&c.runs).context("aggregating")?));
    }
    let input = ReportInput { table: result.table().context("building table")?, class_names: m.classes.clone(), aggregates, cams: None };
    render_report(out, &input).context("writing report")?;
    write(&out.join("sweep.json"), json(&result))?;
    write_run_json(out, "sweep", cfg)?;
    eprint!("{}", input.table.to_csv());
    Ok(())
}

fn report(runs: &[PathBuf], out: &Path) -> CliResult<()> {
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut aggregates = Vec::new();
    let mut classes: Option<Vec<String>> = None;
    for dir in runs {
        let text = read_text(&dir.join("summary.json"))?;
        let s: TrainSummary = serde_json::from_str(&text).with_context(|| format!("parsing {}/summary.json", dir.display()))?;
        match &classes {
            None => classes = Some(s.classes.clone()),
            Some(c) if *c != s.classes => return Err(Failure::Validation(format!("{} uses different classes", dir.display()))),
            _ => {}
        }
        let metrics: Vec<Metrics> = s
            .runs
            .iter()
            .map(|r| {
                let preds_labels: Vec<(usize, usize)> = r
                    .confusion
                    .iter()
                    .enumerate()
                    .flat_map(|(t, row)| row.iter().enumerate().flat_map(move |(p, &n)| std::iter::repeat_n((p, t), n as usize)))
                    .collect();
                let (p, l): (Vec<usize>, Vec<usize>) = preds_labels.into_iter().unzip();
                Metrics::from_predictions(&p, &l, r.confusion.len())
            })
            .collect::<Result<_, _>>()
            .context("rebuilding metrics")?;
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        let agg = aggregate_runs(&metrics).context("aggregating")?;
        cells.push((agg.mean_accuracy, agg.std_accuracy));
        rows.push(name.clone());
        aggregates.push((name, agg));
    }
    let input = ReportInput {
        table: ReportTable::new("run", rows, vec!["accuracy".into()], |r, _| cells.get(r).copied()),
        class_names: classes.unwrap_or_default(),
        aggregates,
        cams: None,
    };
    render_report(out, &input).context("writing report")?;
    eprint!("{}", input.table.to_csv());
    Ok(())
}
