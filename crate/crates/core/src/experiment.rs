//! Seeded sweeps over feature modes and prototype counts, with CSV reports.
//!
//! A config is plain `key = value` text; `#` starts a comment. Keys:
//!
//! ```text
//! mode         raw | rawfft | patch | patch:<side>   (comma list)
//! q            prototype counts per class             (comma list)
//! runs         repetitions per cell, default 5
//! seed         base seed, run r uses seed + r
//! epsilon tau max_iter kernel patch_size
//! train_images train_labels test_images test_labels   (relative to the config file)
//! train_limit test_limit classes
//! timings      false writes 0 seconds so reports compare byte for byte
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::kmeans::KMeansParams;
use crate::lssvm::KernelSpec;
use crate::mnist_io::{load_idx_images, load_idx_labels, ImageSet, LabelSet};
use crate::pipeline::{error_rate, fit, TrainConfig};

/// Largest bordered system solved without the explicit `big` opt-in.
pub const MAX_DESK_ORDER: usize = 10_001;

pub const CSV_HEADER: [&str; 8] = [
    "mode",
    "q",
    "run",
    "seed",
    "error_pct",
    "train_seconds",
    "kmeans_iters",
    "residual",
];
pub const SUMMARY_HEADER: [&str; 5] = ["mode", "q", "runs", "mean_error", "stddev"];

#[derive(Clone, Debug, PartialEq)]
pub struct DataPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub modes: Vec<FeatureMode>,
    pub q: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub kmeans: KMeansParams,
    pub kernel: KernelSpec,
    pub data: Option<DataPaths>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub classes: Option<usize>,
    pub timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            modes: vec![FeatureMode::Raw],
            q: vec![100],
            runs: 5,
            seed: 1,
            epsilon: 1e-6,
            kmeans: KMeansParams::default(),
            kernel: KernelSpec::default(),
            data: None,
            train_limit: None,
            test_limit: None,
            classes: None,
            timings: true,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text; relative data paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut patch_size = 25;
        let mut raw_modes: Vec<String> = vec!["raw".into()];
        let mut paths: [Option<PathBuf>; 4] = Default::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (
                key.trim().to_ascii_lowercase(),
                value.trim().trim_matches('"'),
            );
            let k = key.as_str();
            match k {
                "mode" | "modes" => {
                    raw_modes = value.split(',').map(|s| s.trim().to_string()).collect()
                }
                "q" => cfg.q = parse_list(k, value)?,
                "runs" => cfg.runs = parse_value(k, value)?,
                "seed" => cfg.seed = parse_value(k, value)?,
                "epsilon" => cfg.epsilon = parse_value(k, value)?,
                "tau" => cfg.kmeans.tau = parse_value(k, value)?,
                "max_iter" => cfg.kmeans.max_iter = parse_value(k, value)?,
                "kernel" => cfg.kernel = value.parse()?,
                "patch_size" => patch_size = parse_value(k, value)?,
                "train_limit" => cfg.train_limit = Some(parse_value(k, value)?),
                "test_limit" => cfg.test_limit = Some(parse_value(k, value)?),
                "classes" => cfg.classes = Some(parse_value(k, value)?),
                "timings" => cfg.timings = parse_value(k, value)?,
                "train_images" | "train_labels" | "test_images" | "test_labels" => {
                    let slot = ["train_images", "train_labels", "test_images", "test_labels"]
                        .iter()
                        .position(|s| *s == k)
                        .unwrap();
                    paths[slot] = Some(base.join(value));
                }
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {key:?}",
                        n + 1
                    )))
                }
            }
        }
        cfg.modes = raw_modes
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| match s.to_ascii_lowercase().as_str() {
                "patch" => Ok(FeatureMode::Patch { side: patch_size }),
                other => other.parse(),
            })
            .collect::<Result<_>>()?;
        cfg.data = match paths {
            [Some(a), Some(b), Some(c), Some(d)] => Some(DataPaths {
                train_images: a,
                train_labels: b,
                test_images: c,
                test_labels: d,
            }),
            [None, None, None, None] => None,
            _ => {
                return Err(Error::Config(
                    "all four data paths must be given together".into(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.q.is_empty() || self.q.contains(&0) {
            return Err(Error::Config("q values must be positive".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("no feature mode".into()));
        }
        if self
            .modes
            .iter()
            .any(|m| matches!(m, FeatureMode::Patch { side: 0 }))
        {
            return Err(Error::Config("patch side must be positive".into()));
        }
        // written so that NaN fails both checks
        let eps_ok = self.epsilon > 0.0;
        let tau_ok = self.kmeans.tau >= 0.0;
        if !eps_ok || !tau_ok || self.kmeans.max_iter == 0 {
            return Err(Error::Config(
                "epsilon, tau or max_iter out of range".into(),
            ));
        }
        Ok(())
    }

    /// Rejects sweeps whose bordered system exceeds desk scale unless `big`.
    pub fn check_scale(&self, classes: usize, big: bool) -> Result<()> {
        let q = self.q.iter().copied().max().unwrap_or(0);
        let order = classes * q + 1;
        if order > MAX_DESK_ORDER && !big {
            return Err(Error::Config(format!(
                "Q = {q} with {classes} classes needs a {order}-square solve \
                 (about {:.1} GB); pass --big to allow it",
                (order * order * 8) as f64 / 1e9
            )));
        }
        Ok(())
    }
}

/// Training and test data for a sweep.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train_images: ImageSet,
    pub train_labels: LabelSet,
    pub test_images: ImageSet,
    pub test_labels: LabelSet,
}

impl ExperimentData {
    pub fn load(paths: &DataPaths, classes: Option<usize>) -> Result<Self> {
        let train_labels = load_idx_labels(&paths.train_labels, classes)?;
        let classes = classes.unwrap_or(train_labels.classes);
        let test_labels = load_idx_labels(&paths.test_labels, Some(classes))?;
        let train_labels = LabelSet::new(train_labels.labels, Some(classes))?;
        Ok(Self {
            train_images: load_idx_images(&paths.train_images)?,
            train_labels,
            test_images: load_idx_images(&paths.test_images)?,
            test_labels,
        })
    }

    /// Keeps the first `train` and `test` samples.
    pub fn limited(mut self, train: Option<usize>, test: Option<usize>) -> Self {
        if let Some(n) = train {
            self.train_images = self.train_images.truncated(n);
            self.train_labels = self.train_labels.truncated(n);
        }
        if let Some(n) = test {
            self.test_images = self.test_images.truncated(n);
            self.test_labels = self.test_labels.truncated(n);
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunMetrics {
    pub error_pct: f64,
    pub train_seconds: f64,
    pub kmeans_iters: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub mode: FeatureMode,
    pub q: usize,
    pub run: usize,
    pub seed: u64,
    /// Error message when any stage of the cell failed.
    pub outcome: std::result::Result<RunMetrics, String>,
}

impl RunRow {
    fn record(&self) -> [String; 8] {
        let (e, t, it, r) = match &self.outcome {
            Ok(m) => (
                m.error_pct.to_string(),
                format!("{:.3}", m.train_seconds),
                m.kmeans_iters.to_string(),
                format!("{:e}", m.residual),
            ),
            Err(_) => ("NA".into(), "NA".into(), "NA".into(), "NA".into()),
        };
        [
            self.mode.to_string(),
            self.q.to_string(),
            self.run.to_string(),
            self.seed.to_string(),
            e,
            t,
            it,
            r,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub mode: FeatureMode,
    pub q: usize,
    /// Successful runs aggregated.
    pub runs: usize,
    pub mean_error: f64,
    /// Sample standard deviation; 0 for a single run.
    pub stddev: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn cell(&self, mode: FeatureMode, q: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.mode == mode && s.q == q)
    }
}

pub fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    let mut cells: Vec<(FeatureMode, usize)> = Vec::new();
    for r in rows {
        if !cells.contains(&(r.mode, r.q)) {
            cells.push((r.mode, r.q));
        }
    }
    cells
        .into_iter()
        .filter_map(|(mode, q)| {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.mode == mode && r.q == q)
                .filter_map(|r| r.outcome.as_ref().ok().map(|m| m.error_pct))
                .collect();
            if errs.is_empty() {
                return None;
            }
            let n = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / n;
            let stddev = if errs.len() > 1 {
                (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Some(SummaryRow {
                mode,
                q,
                runs: errs.len(),
                mean_error: mean,
                stddev,
            })
        })
        .collect()
}

/// Runs one cell: fit on the training data, score the test data.
pub fn run_cell(data: &ExperimentData, config: &TrainConfig) -> Result<RunMetrics> {
    let start = Instant::now();
    let out = fit(&data.train_images, &data.train_labels, config)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let pred = out.classifier.predict(&data.test_images)?;
    Ok(RunMetrics {
        error_pct: error_rate(&pred, &data.test_labels.labels)?,
        train_seconds,
        kmeans_iters: out.kmeans_iters,
        residual: out.residual,
    })
}

/// Runs every (mode, Q, run) cell in order. Rows are written to `csv` as
/// they complete and passed to `progress`; a failing cell becomes an `NA`
/// row and the sweep continues.
pub fn run_experiment<W: Write>(
    config: &ExperimentConfig,
    data: &ExperimentData,
    big: bool,
    csv: Option<W>,
    mut progress: impl FnMut(&RunRow),
) -> Result<ExperimentReport> {
    config.validate()?;
    config.check_scale(data.train_labels.classes, big)?;
    let mut writer = csv.map(csv::Writer::from_writer);
    if let Some(w) = writer.as_mut() {
        w.write_record(CSV_HEADER)?;
        w.flush().map_err(|e| Error::io("report csv", e))?;
    }
    let mut rows = Vec::new();
    for &mode in &config.modes {
        for &q in &config.q {
            for run in 0..config.runs {
                let seed = config.seed.wrapping_add(run as u64);
                let tc = TrainConfig {
                    mode,
                    q,
                    kmeans: config.kmeans,
                    epsilon: config.epsilon,
                    kernel: config.kernel,
                    seed,
                };
                let outcome = run_cell(data, &tc)
                    .map(|mut m| {
                        if !config.timings {
                            m.train_seconds = 0.0;
                        }
                        m
                    })
                    .map_err(|e| e.to_string());
                let row = RunRow {
                    mode,
                    q,
                    run,
                    seed,
                    outcome,
                };
                if let Some(w) = writer.as_mut() {
                    w.write_record(row.record())?;
                    w.flush().map_err(|e| Error::io("report csv", e))?;
                }
                progress(&row);
                rows.push(row);
            }
        }
    }
    let summary = summarize(&rows);
    Ok(ExperimentReport { rows, summary })
}

pub fn write_summary<W: Write>(summary: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in summary {
        w.write_record([
            s.mode.to_string(),
            s.q.to_string(),
            s.runs.to_string(),
            s.mean_error.to_string(),
            s.stddev.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("summary csv", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_config() {
        let cfg = ExperimentConfig::parse(
            "# sweep\nmode = raw, patch\npatch_size = 14\nq = 100,1000\nruns=2\nseed = 7\n\
             kernel = poly:3\ntimings = false\ntrain_images = a\ntrain_labels = b\n\
             test_images = c\ntest_labels = d  # trailing\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(
            cfg.modes,
            vec![FeatureMode::Raw, FeatureMode::Patch { side: 14 }]
        );
        assert_eq!(cfg.q, vec![100, 1000]);
        assert_eq!(cfg.runs, 2);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.kernel, KernelSpec::Poly { degree: 3 });
        assert!(!cfg.timings);
        assert_eq!(cfg.data.unwrap().test_labels, PathBuf::from("/data/d"));
    }

    #[test]
    fn rejects_bad_configs() {
        let base = Path::new(".");
        assert!(ExperimentConfig::parse("runs = 0", base).is_err());
        assert!(ExperimentConfig::parse("q = 0", base).is_err());
        assert!(ExperimentConfig::parse("colour = red", base).is_err());
        assert!(ExperimentConfig::parse("just words", base).is_err());
        assert!(ExperimentConfig::parse("train_images = a", base).is_err());
    }

    #[test]
    fn big_gate() {
        let mut cfg = ExperimentConfig {
            q: vec![1000],
            ..ExperimentConfig::default()
        };
        assert!(cfg.check_scale(10, false).is_ok());
        cfg.q = vec![2500];
        assert!(cfg.check_scale(10, false).is_err());
        assert!(cfg.check_scale(10, true).is_ok());
    }

    #[test]
    fn summary_statistics() {
        let row = |run, e: Option<f64>| RunRow {
            mode: FeatureMode::Raw,
            q: 5,
            run,
            seed: run as u64,
            outcome: e
                .map(|error_pct| RunMetrics {
                    error_pct,
                    train_seconds: 0.0,
                    kmeans_iters: 1,
                    residual: 0.0,
                })
                .ok_or_else(|| "failed".to_string()),
        };
        let s = summarize(&[row(0, Some(2.0)), row(1, None), row(2, Some(4.0))]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].runs, 2);
        assert_eq!(s[0].mean_error, 3.0);
        assert!((s[0].stddev - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(row(1, None).record()[4], "NA");
    }
}
