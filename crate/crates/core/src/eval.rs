//! Test metrics, multi-run aggregation, Grad-CAM bucketing, and report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::dsp::{write_archive, ArchiveError, ArchiveItem};
use crate::nn::{CamMap, Model, NnError, Tensor};
use crate::pipeline::LabeledSet;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("class index {index} out of range for {n_classes} classes")]
    ClassOutOfRange { index: usize, n_classes: usize },
    #[error("confusion matrices differ in size")]
    ConfusionShape,
    #[error("report parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Accuracy, per-class recall, and a count confusion matrix (rows = truth).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class_recall: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Self, EvalError> {
        if predictions.len() != labels.len() {
            return Err(EvalError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
        }
        if labels.is_empty() {
            return Err(EvalError::EmptyTestSet);
        }
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for (&p, &t) in predictions.iter().zip(labels) {
            for index in [p, t] {
                if index >= n_classes {
                    return Err(EvalError::ClassOutOfRange { index, n_classes });
                }
            }
            confusion[t][p] += 1;
        }
        let correct: u64 = (0..n_classes).map(|c| confusion[c][c]).sum();
        let per_class_recall = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let support: u64 = row.iter().sum();
                if support == 0 {
                    0.0
                } else {
                    row[c] as f64 / support as f64
                }
            })
            .collect();
        Ok(Self { accuracy: correct as f64 / labels.len() as f64, per_class_recall, confusion })
    }

    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn support(&self) -> Vec<u64> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Logits for every item, computed in chunks without augmentation.
pub fn predict_logits(model: &Model, set: &LabeledSet, chunk: usize) -> Result<Vec<Vec<f64>>, EvalError> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for part in idx.chunks(chunk.max(1)) {
        let logits = model.predict(&set.batch(part))?;
        let c = logits.shape[1];
        out.extend(logits.data.chunks_exact(c).map(<[f64]>::to_vec));
    }
    Ok(out)
}

pub fn evaluate(model: &Model, test: &LabeledSet) -> Result<Metrics, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let preds: Vec<usize> = predict_logits(model, test, 64)?.iter().map(|l| argmax(l)).collect();
    Metrics::from_predictions(&preds, &test.labels, model.n_classes)
}

/// Mean and sample standard deviation over runs, plus averaged confusions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunAggregate {
    pub n_runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Element-wise mean of the count matrices.
    pub mean_confusion: Vec<Vec<f64>>,
    /// Mean of the row-normalized matrices; empty rows stay zero.
    pub normalized_confusion: Vec<Vec<f64>>,
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate_runs(runs: &[Metrics]) -> Result<RunAggregate, EvalError> {
    let first = runs.first().ok_or(EvalError::NoRuns)?;
    let c = first.n_classes();
    if runs.iter().any(|m| m.n_classes() != c) {
        return Err(EvalError::ConfusionShape);
    }
    let accs: Vec<f64> = runs.iter().map(|m| m.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let k = runs.len() as f64;
    let mut mean_confusion = vec![vec![0.0; c]; c];
    let mut normalized_confusion = vec![vec![0.0; c]; c];
    for m in runs {
        for (r, row) in m.confusion.iter().enumerate() {
            let support: u64 = row.iter().sum();
            for (j, &v) in row.iter().enumerate() {
                mean_confusion[r][j] += v as f64 / k;
                if support > 0 {
                    normalized_confusion[r][j] += v as f64 / support as f64 / k;
                }
            }
        }
    }
    Ok(RunAggregate { n_runs: runs.len(), mean_accuracy, std_accuracy, mean_confusion, normalized_confusion })
}

/// `mean±std` in percent with one decimal, e.g. `70.6±0.8`.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.1}±{:.1}", mean * 100.0, std * 100.0)
}

/// Anything that can produce a prediction and its class activation map for one input.
pub trait CamSource {
    /// Returns the predicted class and the map computed for that class.
    fn predicted_cam(&mut self, input: &Tensor) -> Result<(usize, CamMap), EvalError>;
}

impl CamSource for Model {
    fn predicted_cam(&mut self, input: &Tensor) -> Result<(usize, CamMap), EvalError> {
        let logits = self.forward(input)?;
        let pred = argmax(&logits.data);
        Ok((pred, self.grad_cam(input, pred)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamBucket {
    pub class: usize,
    pub correct: bool,
    pub count: usize,
    /// `None` when the bucket is empty.
    pub mean: Option<CamMap>,
}

/// Mean maps per (true class, correct or misclassified).
#[derive(Debug, Clone, PartialEq)]
pub struct CamAggregate {
    pub buckets: Vec<CamBucket>,
}

impl CamAggregate {
    pub fn bucket(&self, class: usize, correct: bool) -> &CamBucket {
        &self.buckets[2 * class + usize::from(!correct)]
    }

    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.count).sum()
    }
}

pub fn aggregate_cams<S: CamSource + ?Sized>(source: &mut S, set: &LabeledSet, n_classes: usize) -> Result<CamAggregate, EvalError> {
    let mut sums: Vec<Option<CamMap>> = vec![None; 2 * n_classes];
    let mut counts = vec![0usize; 2 * n_classes];
    for (i, &label) in set.labels.iter().enumerate() {
        if label >= n_classes {
            return Err(EvalError::ClassOutOfRange { index: label, n_classes });
        }
        let (pred, cam) = source.predicted_cam(&set.batch(&[i]))?;
        let slot = 2 * label + usize::from(pred != label);
        counts[slot] += 1;
        match &mut sums[slot] {
            Some(acc) => {
                if (acc.height, acc.width) != (cam.height, cam.width) {
                    return Err(EvalError::Nn(NnError::ShapeMismatch(format!(
                        "CAM {}x{} vs {}x{}",
                        cam.height, cam.width, acc.height, acc.width
                    ))));
                }
                acc.values.iter_mut().zip(&cam.values).for_each(|(a, v)| *a += v);
            }
            empty => *empty = Some(cam),
        }
    }
    let buckets = sums
        .into_iter()
        .zip(counts)
        .enumerate()
        .map(|(slot, (sum, count))| CamBucket {
            class: slot / 2,
            correct: slot % 2 == 0,
            count,
            mean: sum.map(|mut m| {
                m.values.iter_mut().for_each(|v| *v /= count as f64);
                m
            }),
        })
        .collect();
    Ok(CamAggregate { buckets })
}

/// A grid of `mean±std` accuracy cells with row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub corner: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Percent values rounded to one decimal; `None` for cells not run.
    pub cells: Vec<Vec<Option<(f64, f64)>>>,
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

impl ReportTable {
    /// Build from accuracy fractions; stored as percents at display precision.
    pub fn new(corner: &str, rows: Vec<String>, cols: Vec<String>, mut cell: impl FnMut(usize, usize) -> Option<(f64, f64)>) -> Self {
        let cells = (0..rows.len())
            .map(|r| (0..cols.len()).map(|c| cell(r, c).map(|(m, s)| (round1(m * 100.0), round1(s * 100.0)))).collect())
            .collect();
        Self { corner: corner.to_string(), rows, cols, cells }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{},{}", self.corner, self.cols.join(","));
        for (label, row) in self.rows.iter().zip(&self.cells) {
            out.push_str(label);
            for cell in row {
                out.push(',');
                if let Some((m, s)) = cell {
                    let _ = write!(out, "{m:.1}±{s:.1}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self, EvalError> {
        let err = |line: usize, message: String| EvalError::Parse { line, message };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty report".into()))?;
        let mut head = header.split(',');
        let corner = head.next().unwrap_or_default().to_string();
        let cols: Vec<String> = head.map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            rows.push(parts.next().unwrap_or_default().to_string());
            let row: Vec<Option<(f64, f64)>> = parts
                .map(|c| {
                    if c.is_empty() {
                        return Ok(None);
                    }
                    let (m, s) = c.split_once('±').ok_or_else(|| err(i + 1, format!("cell `{c}` lacks ±")))?;
                    let num = |v: &str| v.parse::<f64>().map_err(|e| err(i + 1, format!("`{v}`: {e}")));
                    Ok(Some((num(m)?, num(s)?)))
                })
                .collect::<Result<_, EvalError>>()?;
            if row.len() != cols.len() {
                return Err(err(i + 1, format!("{} cells for {} columns", row.len(), cols.len())));
            }
            cells.push(row);
        }
        Ok(Self { corner, rows, cols, cells })
    }
}

/// Everything a report directory is built from.
#[derive(Debug, Clone)]
pub struct ReportInput {
    pub table: ReportTable,
    pub class_names: Vec<String>,
    /// Named aggregates, one confusion pair of files each.
    pub aggregates: Vec<(String, RunAggregate)>,
    pub cams: Option<CamAggregate>,
}

#[derive(Serialize)]
struct CamIndexEntry<'a> {
    item: Option<usize>,
    class: &'a str,
    correct: bool,
    count: usize,
    height: usize,
    width: usize,
}

fn matrix_csv(names: &[String], m: &[Vec<f64>]) -> String {
    let mut out = format!("truth\\pred,{}\n", names.join(","));
    for (name, row) in names.iter().zip(m) {
        out.push_str(name);
        for v in row {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

/// Bucket means as `cams.sprf` plus a `cams.json` index naming each item.
pub fn write_cams(dir: &Path, cams: &CamAggregate, class_names: &[String]) -> Result<Vec<String>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut items = Vec::new();
    let mut index = Vec::new();
    for b in &cams.buckets {
        let class = class_names.get(b.class).map(String::as_str).unwrap_or("?");
        let (item, height, width) = match &b.mean {
            Some(m) => {
                items.push(ArchiveItem {
                    n_frames: m.height as u32,
                    n_mels: m.width as u32,
                    label: b.class as u32,
                    values: m.values.iter().map(|&v| v as f32).collect(),
                });
                (Some(items.len() - 1), m.height, m.width)
            }
            None => (None, 0, 0),
        };
        index.push(CamIndexEntry { item, class, correct: b.correct, count: b.count, height, width });
    }
    std::fs::write(dir.join("cams.sprf"), write_archive(&items)?)?;
    let json = serde_json::to_string_pretty(&index).expect("CAM index serializes");
    std::fs::write(dir.join("cams.json"), json)?;
    Ok(vec!["cams.sprf".into(), "cams.json".into()])
}

/// Write `accuracy.csv`, confusion CSVs, and CAM archives under `dir`.
/// Returns the written file names in order.
pub fn render_report(dir: &Path, input: &ReportInput) -> Result<Vec<String>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> Result<(), EvalError> {
        std::fs::write(dir.join(&name), bytes)?;
        written.push(name);
        Ok(())
    };
    put("accuracy.csv".into(), input.table.to_csv().as_bytes())?;
    for (name, agg) in &input.aggregates {
        put(format!("confusion_{name}.csv"), matrix_csv(&input.class_names, &agg.mean_confusion).as_bytes())?;
        put(
            format!("confusion_{name}_normalized.csv"),
            matrix_csv(&input.class_names, &agg.normalized_confusion).as_bytes(),
        )?;
    }
    if let Some(cams) = &input.cams {
        written.extend(write_cams(dir, cams, &input.class_names)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor() {
        let labels = [0, 1, 2, 3, 0, 1, 2, 3];
        let m = Metrics::from_predictions(&labels, &labels, 4).unwrap();
        assert_eq!(m.accuracy, 1.0);
        for (i, row) in m.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 2 } else { 0 });
            }
        }
        assert_eq!(m.per_class_recall, vec![1.0; 4]);
    }

    #[test]
    fn constant_predictor() {
        let labels = [0, 1, 2, 3, 0, 1, 2, 3];
        let m = Metrics::from_predictions(&[2; 8], &labels, 4).unwrap();
        assert_eq!(m.accuracy, 0.25);
        for row in &m.confusion {
            assert_eq!(row, &vec![0, 0, 2, 0]);
        }
        assert_eq!(m.support(), vec![2; 4]);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(Metrics::from_predictions(&[], &[], 2), Err(EvalError::EmptyTestSet)));
        assert!(matches!(Metrics::from_predictions(&[0], &[0, 1], 2), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(Metrics::from_predictions(&[2], &[0], 2), Err(EvalError::ClassOutOfRange { .. })));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn aggregate_constant_runs() {
        let m = Metrics::from_predictions(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        let agg = aggregate_runs(&[m.clone(), m.clone(), m.clone()]).unwrap();
        assert!((agg.mean_accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(agg.std_accuracy, 0.0);
        assert_eq!(agg.mean_confusion, vec![vec![1.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(agg.normalized_confusion, vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert!(matches!(aggregate_runs(&[]), Err(EvalError::NoRuns)));
    }

    #[test]
    fn mean_std_formatting() {
        let (m, s) = mean_std(&[0.706, 0.698, 0.714]);
        assert!((m - 0.706).abs() < 1e-12);
        assert!((s - 0.008).abs() < 1e-12);
        assert_eq!(format_cell(m, s), "70.6±0.8");
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }

    struct Constant {
        value: f64,
        pred: usize,
    }

    impl CamSource for Constant {
        fn predicted_cam(&mut self, _input: &Tensor) -> Result<(usize, CamMap), EvalError> {
            Ok((self.pred, CamMap { height: 2, width: 2, values: vec![self.value; 4] }))
        }
    }

    fn tiny_set(labels: &[usize]) -> LabeledSet {
        use crate::dsp::{FeatureConfig, LogMelSpectrogram, Matrix};
        let mut set = LabeledSet::default();
        for &l in labels {
            set.push(LogMelSpectrogram::from_matrix(Matrix::zeros(2, 2), FeatureConfig::default(), 8000), l);
        }
        set
    }

    #[test]
    fn constant_maps_average_to_constant() {
        let set = tiny_set(&[0, 0, 1, 1, 1]);
        let agg = aggregate_cams(&mut Constant { value: 0.375, pred: 1 }, &set, 2).unwrap();
        assert_eq!(agg.total(), 5);
        assert_eq!(agg.bucket(0, false).count, 2);
        assert_eq!(agg.bucket(1, true).count, 3);
        assert_eq!(agg.bucket(0, true).count, 0);
        assert!(agg.bucket(0, true).mean.is_none());
        assert_eq!(agg.bucket(1, true).mean.as_ref().unwrap().values, vec![0.375; 4]);
    }

    #[test]
    fn table_round_trip() {
        let t = ReportTable::new(
            "data_rate",
            vec!["2k".into(), "4k".into()],
            vec!["8k".into(), "16k".into()],
            |r, c| if r == 1 && c == 0 { None } else { Some((0.70634 + r as f64 * 0.1, 0.0081 * c as f64)) },
        );
        let csv = t.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "data_rate,8k,16k");
        assert_eq!(csv.lines().nth(1).unwrap(), "2k,70.6±0.0,70.6±0.8");
        assert_eq!(ReportTable::parse_csv(&csv).unwrap(), t);
        assert!(ReportTable::parse_csv("x,a\nr,1.0\n").is_err());
    }

    #[test]
    fn report_files_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let m = Metrics::from_predictions(&[0, 1, 1, 1, 0], &[0, 0, 1, 1, 1], 2).unwrap();
        let agg = aggregate_runs(&[m]).unwrap();
        let cams = aggregate_cams(&mut Constant { value: 0.5, pred: 0 }, &tiny_set(&[0, 1]), 2).unwrap();
        let input = ReportInput {
            table: ReportTable::new("run", vec!["all".into()], vec!["acc".into()], |_, _| Some((agg.mean_accuracy, 0.0))),
            class_names: vec!["a".into(), "b".into()],
            aggregates: vec![("all".into(), agg)],
            cams: Some(cams),
        };
        let files = render_report(dir.path(), &input).unwrap();
        let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
        render_report(dir.path(), &input).unwrap();
        let second: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
        assert_eq!(first, second);
        assert_eq!(String::from_utf8(first[0].clone()).unwrap(), "run,acc\nall,60.0±0.0\n");
        let items = crate::dsp::read_archive(&first[3]).unwrap();
        assert_eq!(items.len(), 2);
        assert!(String::from_utf8(first[4].clone()).unwrap().contains("\"item\": null"));
    }
}
