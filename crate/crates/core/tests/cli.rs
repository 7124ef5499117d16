mod common;

use std::path::Path;

use sonarprep::config::parse_config;
use sonarprep::datasplit::{read_split_csv, SplitFile};
use sonarprep::dsp::Matrix;
use sonarprep::pipeline::{build_dataset, Recording};
use sonarprep::trainer::{desk_architecture, run_seeds};
use sonarprep::wavio::{load_manifest, parse_wav, write_wav_pcm16, Waveform};

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn exit_code(args: &[&str]) -> i32 {
    let mut full = vec!["sonarprep"];
    full.extend_from_slice(args);
    sonarprep::cli::run(full)
}

/// Corpus, manifest and split under `dir`; returns (manifest, split) paths.
fn prepare(dir: &Path, per_class: usize, seconds: f64, rate: u32) -> (String, String) {
    let root = dir.join("corpus");
    common::write_corpus(&root, per_class, seconds, rate);
    let manifest = s(&root.join("manifest.csv"));
    let split = s(&dir.join("split.csv"));
    common::cli(&["ingest", "--root", &s(&root), "--out", &manifest]);
    common::cli(&["split", "--manifest", &manifest, "--seed", "7", "--out", &split]);
    (manifest, split)
}

#[test]
fn split_is_byte_identical_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, split) = prepare(dir.path(), 4, 5.0, 8000);
    let again = s(&dir.path().join("again.csv"));
    common::cli(&["split", "--manifest", &manifest, "--seed", "7", "--out", &again]);
    assert_eq!(std::fs::read(&split).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(exit_code(&["split", "--manifest", &manifest, "--validate", &split]), 0);

    let text = std::fs::read_to_string(&split).unwrap();
    let first = text.lines().nth(1).unwrap();
    let leaked = format!("{text}{},test\n", first.split(',').next().unwrap());
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, leaked).unwrap();
    assert_eq!(exit_code(&["split", "--manifest", &manifest, "--validate", &s(&bad)]), 1);
}

#[test]
fn featurize_at_32k_gives_501_by_64_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, split) = prepare(dir.path(), 3, 5.0, 32_000);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        common::cli(&["featurize", "--manifest", &manifest, "--split", &split, "--data-rate", "32k", "--jobs", "2", "--out", &s(out)]);
    }
    for name in ["train.sprf", "val.sprf", "test.sprf", "features.json", "run.json"] {
        assert_eq!(std::fs::read(out_a.join(name)).unwrap(), std::fs::read(out_b.join(name)).unwrap(), "{name}");
    }
    let (index, data) = sonarprep::cli::load_features(&out_a).unwrap();
    assert_eq!(data.train.shape().unwrap(), Some((501, 64)));
    assert_eq!(index.counts.iter().sum::<usize>(), 12);
    assert!(data.train.features.iter().flat_map(|f| &f.values.data).all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn featurize_then_train_matches_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, split) = prepare(dir.path(), 3, 10.0, 8000);
    let config_text = "train.lr = 1e-3\ntrain.seeds = 1,2\naugment.n_time_masks = 1\n";
    let config = dir.path().join("run.ini");
    std::fs::write(&config, config_text).unwrap();
    let c = s(&config);
    let features = s(&dir.path().join("features"));
    let run = dir.path().join("run");
    common::cli(&["--config", &c, "featurize", "--manifest", &manifest, "--split", &split, "--data-rate", "8k", "--out", &features]);
    common::cli(&["--config", &c, "train", "--features", &features, "--out", &s(&run), "--epochs", "3", "--batch-size", "4"]);

    // same recordings, decoded from the same PCM16 bytes, but never written as features
    let m = load_manifest(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    let recordings: Vec<Recording> = m
        .entries
        .iter()
        .map(|e| {
            let class = m.class_index(&e.class_label).unwrap();
            let r: usize = e.recording_id.rsplit('_').next().unwrap().parse().unwrap();
            let samples = common::synth_recording(class, 10.0, 8000, (class * 1000 + r) as u64);
            let w = Waveform::new(samples, 8000, e.recording_id.clone()).unwrap();
            let mut w = parse_wav(&write_wav_pcm16(&w)).unwrap();
            w.source_id = e.recording_id.clone();
            Recording { waveform: w, label: class }
        })
        .collect();
    let (entries, seed) = read_split_csv(&std::fs::read_to_string(&split).unwrap()).unwrap();
    let counts = m.entries.iter().map(|e| (e.recording_id.clone(), (e.duration_seconds / 5.0).floor() as usize)).collect();
    let sf = SplitFile::from_entries(entries, seed, &m, &counts).unwrap();
    let cfg = parse_config(config_text).unwrap();
    let mut data = build_dataset(&recordings, &sf, m.classes.len(), 8000, &cfg.feature, 5.0).unwrap();
    for set in [&mut data.train, &mut data.val, &mut data.test] {
        for f in &mut set.features {
            let v: Vec<f64> = f.values.data.iter().map(|&x| x as f32 as f64).collect();
            f.values = Matrix::from_vec(f.values.rows, f.values.cols, v);
        }
    }
    let mut tcfg = cfg.train_config();
    tcfg.max_epochs = 3;
    tcfg.patience = 3;
    tcfg.batch_size = 4;
    tcfg.augment.data_rate = 8000;
    let runs = run_seeds(&tcfg, &data, &desk_architecture(&data).unwrap(), None).unwrap();

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    for (r, rec) in runs.iter().zip(summary["runs"].as_array().unwrap()) {
        assert_eq!(rec["seed"].as_u64().unwrap(), r.seed);
        assert_eq!(rec["test_accuracy"].as_f64().unwrap(), r.metrics.accuracy);
        assert_eq!(rec["best_epoch"].as_u64().unwrap() as usize, r.history.best_epoch);
        let history = std::fs::read_to_string(run.join(format!("history_seed{}.csv", r.seed))).unwrap();
        assert_eq!(history, r.history.to_csv());
    }
}

#[test]
fn small_sweep_fills_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, split) = prepare(dir.path(), 3, 10.0, 8000);
    let config = dir.path().join("sweep.ini");
    std::fs::write(&config, "train.max_epochs = 1\ntrain.patience = 1\ntrain.seeds = 1\ntrain.lr = 1e-3\n").unwrap();
    let out = dir.path().join("sweep");
    common::cli(&[
        "--config", &s(&config), "sweep", "--manifest", &manifest, "--split", &split,
        "--data-rates", "2k,4k", "--model-rates", "8k,16k", "--out", &s(&out),
    ]);
    let sweep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    let cells = sweep["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    let widths: Vec<u64> = cells.iter().map(|c| c["mask_width"].as_u64().unwrap()).collect();
    assert_eq!(widths, [16, 8, 32, 16]);
    let table = std::fs::read_to_string(out.join("accuracy.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().next().unwrap().contains("8k") && table.contains("16k"));
    for name in ["2k_8k", "2k_16k", "4k_8k", "4k_16k"] {
        assert!(out.join(format!("confusion_{name}.csv")).exists(), "{name}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(&["frobnicate"]), 2);
    assert_eq!(exit_code(&["split", "--manifest"]), 2);
    let bad = dir.path().join("bad.ini");
    std::fs::write(&bad, "train.lr = fast\n").unwrap();
    assert_eq!(exit_code(&["--config", &s(&bad), "ingest", "--root", ".", "--out", &s(&dir.path().join("m.csv"))]), 2);
    assert_eq!(
        exit_code(&["featurize", "--manifest", "m.csv", "--split", "s.csv", "--data-rate", "fast", "--out", &s(dir.path())]),
        2
    );
    assert_eq!(exit_code(&["ingest", "--root", &s(&dir.path().join("missing")), "--out", &s(&dir.path().join("m.csv"))]), 1);
}
