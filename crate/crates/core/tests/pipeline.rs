//! End-to-end runs on small synthetic stroke images.

mod common;

use std::fs;
use std::path::Path;

use kkc::experiment::{
    run_experiment, write_summary, ExperimentConfig, ExperimentData, CSV_HEADER,
};
use kkc::features::FeatureMode;
use kkc::mnist_io::{encode_idx_images, encode_idx_labels};
use kkc::persist::{decode, encode, load_model, save_model};
use kkc::pipeline::{error_rate, fit, TrainConfig};
use kkc::Error;

use common::synthetic_strokes;

const SIDE: usize = 10;

fn config(mode: FeatureMode, q: usize) -> TrainConfig {
    TrainConfig::new(mode, q, 4)
}

#[test]
fn every_mode_learns_strokes() {
    let (train, train_labels) = synthetic_strokes(300, SIDE, 1);
    let (test, test_labels) = synthetic_strokes(150, SIDE, 2);
    for mode in [
        FeatureMode::Raw,
        FeatureMode::RawFft,
        FeatureMode::Patch { side: 7 },
    ] {
        let out = fit(&train, &train_labels, &config(mode, 8)).unwrap();
        assert!(out.residual <= 1e-8, "{mode}: residual {:e}", out.residual);
        assert_eq!(out.classifier.model.support.rows(), 24);
        assert_eq!(out.classifier.model.dimension(), mode.dimension(SIDE));
        let pred = out.classifier.predict(&test).unwrap();
        let eta = error_rate(&pred, &test_labels.labels).unwrap();
        assert!(eta <= 5.0, "{mode}: error {eta}%");
    }
}

#[test]
fn full_size_patch_matches_whole_image_model() {
    let (train, labels) = synthetic_strokes(120, SIDE, 3);
    let (test, _) = synthetic_strokes(60, SIDE, 4);
    let raw = fit(&train, &labels, &config(FeatureMode::Raw, 5)).unwrap();
    let patch = fit(
        &train,
        &labels,
        &config(FeatureMode::Patch { side: SIDE }, 5),
    )
    .unwrap();
    assert_eq!(raw.classifier.model, patch.classifier.model);
    assert_eq!(
        raw.classifier.predict(&test).unwrap(),
        patch.classifier.predict(&test).unwrap()
    );
}

#[test]
fn saved_models_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (train, labels) = synthetic_strokes(90, SIDE, 5);
    let (test, _) = synthetic_strokes(45, SIDE, 6);
    for mode in [
        FeatureMode::Raw,
        FeatureMode::RawFft,
        FeatureMode::Patch { side: 6 },
    ] {
        let c = fit(&train, &labels, &config(mode, 4)).unwrap().classifier;
        let path = dir.path().join(format!("{mode}.kkcm"));
        save_model(&c, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.predict(&test).unwrap(), c.predict(&test).unwrap());
        assert_eq!(encode(&back), fs::read(&path).unwrap());

        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode(&bytes), Err(Error::Checksum { .. })));
    }
}

#[test]
fn training_is_deterministic() {
    let (train, labels) = synthetic_strokes(90, SIDE, 7);
    for mode in [FeatureMode::Raw, FeatureMode::Patch { side: 5 }] {
        let a = fit(&train, &labels, &config(mode, 6)).unwrap().classifier;
        let b = fit(&train, &labels, &config(mode, 6)).unwrap().classifier;
        assert_eq!(encode(&a), encode(&b));
    }
}

fn write_dataset(dir: &Path) {
    let (train, train_labels) = synthetic_strokes(150, SIDE, 8);
    let (test, test_labels) = synthetic_strokes(60, SIDE, 9);
    fs::write(dir.join("train-images"), encode_idx_images(&train)).unwrap();
    fs::write(dir.join("train-labels"), encode_idx_labels(&train_labels)).unwrap();
    fs::write(dir.join("test-images"), encode_idx_images(&test)).unwrap();
    fs::write(dir.join("test-labels"), encode_idx_labels(&test_labels)).unwrap();
}

fn run_to_files(
    cfg: &ExperimentConfig,
    dir: &Path,
    tag: &str,
) -> (Vec<u8>, Vec<u8>, kkc::experiment::ExperimentReport) {
    let data = ExperimentData::load(cfg.data.as_ref().unwrap(), cfg.classes).unwrap();
    let csv = dir.join(format!("{tag}.csv"));
    let summary = dir.join(format!("{tag}-summary.csv"));
    let report = run_experiment(
        cfg,
        &data,
        false,
        Some(fs::File::create(&csv).unwrap()),
        |_| {},
    )
    .unwrap();
    write_summary(&report.summary, fs::File::create(&summary).unwrap()).unwrap();
    (fs::read(csv).unwrap(), fs::read(summary).unwrap(), report)
}

#[test]
fn experiment_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let text =
        "mode = raw, patch\npatch_size = 6\nq = 3, 60\nruns = 2\nseed = 10\ntimings = false\n\
                train_images = train-images\ntrain_labels = train-labels\n\
                test_images = test-images\ntest_labels = test-labels\n";
    let cfg = ExperimentConfig::parse(text, dir.path()).unwrap();
    let (csv_a, sum_a, report) = run_to_files(&cfg, dir.path(), "a");
    let (csv_b, sum_b, _) = run_to_files(&cfg, dir.path(), "b");
    assert_eq!(csv_a, csv_b);
    assert_eq!(sum_a, sum_b);

    let text = String::from_utf8(csv_a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER.join(","));
    // 2 modes x 2 Q x 2 runs; raw Q=60 exceeds the 50 images per class
    assert_eq!(lines.len(), 1 + 8);
    let failed = report.rows.iter().filter(|r| r.outcome.is_err()).count();
    assert_eq!(failed, 2);
    assert!(lines.iter().filter(|l| l.contains(",NA,")).count() == 2);
    assert!(lines[1].starts_with("raw,3,0,10,"));
    assert!(lines[2].starts_with("raw,3,1,11,"));

    for s in &report.summary {
        let errs: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.mode == s.mode && r.q == s.q)
            .filter_map(|r| r.outcome.as_ref().ok().map(|m| m.error_pct))
            .collect();
        assert_eq!(s.runs, errs.len());
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!((s.mean_error - mean).abs() <= 1e-12);
        assert!(errs.iter().all(|e| (0.0..=100.0).contains(e)));
    }
    // patch Q=60 has plenty of patches, so it is the only surviving Q=60 cell
    assert!(report.cell(FeatureMode::Raw, 60).is_none());
    assert!(report.cell(FeatureMode::Patch { side: 6 }, 60).is_some());
}
