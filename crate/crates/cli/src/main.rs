use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kkc::experiment::{run_experiment, write_summary, ExperimentConfig, ExperimentData};
use kkc::features::{featurize_images, image_patches, FeatureMode};
use kkc::kmeans::{self, KMeansParams};
use kkc::lssvm::KernelSpec;
use kkc::mnist_io::{load_idx_images, load_idx_labels};
use kkc::numeric::RngState;
use kkc::persist::{load_model, save_model};
use kkc::pipeline::{error_rate, fit, TrainConfig};
use kkc::Matrix;

#[derive(Parser)]
#[command(
    name = "kkc",
    version,
    about = "K-means prototypes + least-squares kernel classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and save it.
    Fit(FitArgs),
    /// Report the test error of a saved model.
    Eval(EvalArgs),
    /// Run a seeded sweep described by a key=value config file.
    Experiment(ExperimentArgs),
    /// Extract the prototypes of one class, for inspection.
    Kmeans(KmeansArgs),
}

#[derive(Args)]
struct TrainData {
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    /// Use only the first N training samples.
    #[arg(long)]
    train_limit: Option<usize>,
}

#[derive(Args)]
struct Clustering {
    /// raw, rawfft or patch
    #[arg(long, default_value = "raw")]
    mode: String,
    #[arg(long, default_value_t = 25)]
    patch_size: usize,
    /// Prototypes per class.
    #[arg(long, default_value_t = 100)]
    q: usize,
    #[arg(long, default_value_t = 1e-6)]
    tau: f64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl Clustering {
    fn mode(&self) -> Result<FeatureMode> {
        Ok(match self.mode.to_ascii_lowercase().as_str() {
            "patch" => FeatureMode::Patch {
                side: self.patch_size,
            },
            m => m.parse()?,
        })
    }

    fn params(&self) -> KMeansParams {
        KMeansParams {
            tau: self.tau,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: TrainData,
    #[command(flatten)]
    clustering: Clustering,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// poly:<degree> or gaussian:<gamma>
    #[arg(long, default_value = "poly:4")]
    kernel: KernelSpec,
    /// Allow bordered systems above 10001 x 10001.
    #[arg(long)]
    big: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test_images: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    #[arg(long)]
    test_limit: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Per-run report, written as runs complete.
    #[arg(long)]
    csv: PathBuf,
    /// Per-(mode, Q) mean and standard deviation of the error.
    #[arg(long)]
    summary: PathBuf,
    #[arg(long)]
    big: bool,
}

#[derive(Args)]
struct KmeansArgs {
    #[command(flatten)]
    data: TrainData,
    #[command(flatten)]
    clustering: Clustering,
    #[arg(long)]
    class: usize,
    /// Write the centroids as CSV, one per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Kmeans(a) => cmd_kmeans(a),
    }
}

fn load_train(d: &TrainData) -> Result<(kkc::mnist_io::ImageSet, kkc::mnist_io::LabelSet)> {
    let mut images = load_idx_images(&d.train_images)?;
    let mut labels = load_idx_labels(&d.train_labels, None)?;
    if let Some(n) = d.train_limit {
        images = images.truncated(n);
        labels = labels.truncated(n);
    }
    if images.count != labels.count() {
        bail!(
            "{} training images but {} labels",
            images.count,
            labels.count()
        );
    }
    Ok((images, labels))
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let (images, labels) = load_train(&a.data)?;
    let c = &a.clustering;
    let order = labels.classes * c.q + 1;
    if order > kkc::experiment::MAX_DESK_ORDER && !a.big {
        bail!("a {order}-square solve needs --big");
    }
    let config = TrainConfig {
        mode: c.mode()?,
        q: c.q,
        kmeans: c.params(),
        epsilon: a.epsilon,
        kernel: a.kernel,
        seed: c.seed,
    };
    let start = Instant::now();
    let out = fit(&images, &labels, &config)?;
    save_model(&out.classifier, &a.out)?;
    println!(
        "trained {} model: {} support vectors, {} k-means iterations, residual {:.3e}, {:.1} s",
        config.mode,
        out.classifier.model.support.rows(),
        out.kmeans_iters,
        out.residual,
        start.elapsed().as_secs_f64()
    );
    if out.skipped_images > 0 {
        println!("skipped {} flat training images", out.skipped_images);
    }
    println!("saved {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut images = load_idx_images(&a.test_images)?;
    let mut labels = load_idx_labels(&a.test_labels, Some(model.model.classes()))?;
    if let Some(n) = a.test_limit {
        images = images.truncated(n);
        labels = labels.truncated(n);
    }
    let pred = model.predict(&images)?;
    let unclassified = pred.iter().filter(|p| p.is_none()).count();
    let eta = error_rate(&pred, &labels.labels)?;
    println!(
        "mode {} on {} test images: error {eta:.2}%",
        model.mode,
        labels.count()
    );
    if unclassified > 0 {
        println!("{unclassified} unclassifiable images counted as errors");
    }
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let paths = config
        .data
        .as_ref()
        .context("config must name train_images, train_labels, test_images and test_labels")?;
    let data =
        ExperimentData::load(paths, config.classes)?.limited(config.train_limit, config.test_limit);
    let csv = File::create(&a.csv).with_context(|| format!("creating {}", a.csv.display()))?;
    let report = run_experiment(&config, &data, a.big, Some(csv), |row| match &row.outcome {
        Ok(m) => eprintln!(
            "{} q={} run={} seed={}: error {:.2}% ({:.1} s)",
            row.mode, row.q, row.run, row.seed, m.error_pct, m.train_seconds
        ),
        Err(e) => eprintln!(
            "{} q={} run={} seed={}: failed: {e}",
            row.mode, row.q, row.run, row.seed
        ),
    })?;
    let summary =
        File::create(&a.summary).with_context(|| format!("creating {}", a.summary.display()))?;
    write_summary(&report.summary, BufWriter::new(summary))?;
    for s in &report.summary {
        println!(
            "{} q={}: mean error {:.3}% (sd {:.3}, {} runs)",
            s.mode, s.q, s.mean_error, s.stddev, s.runs
        );
    }
    Ok(())
}

fn cmd_kmeans(a: KmeansArgs) -> Result<()> {
    let (images, labels) = load_train(&a.data)?;
    if a.class >= labels.classes {
        bail!("class {} out of range (0..{})", a.class, labels.classes);
    }
    let c = &a.clustering;
    let idx = labels.indices_of(a.class);
    let samples = match c.mode()? {
        FeatureMode::Patch { side } => {
            let mut blocks = Vec::with_capacity(idx.len());
            for &i in &idx {
                let ps = image_patches(&images, i, side)?;
                let valid: Vec<usize> = (0..ps.valid_mask.len())
                    .filter(|&p| ps.valid_mask[p])
                    .collect();
                blocks.push(ps.patches.select_rows(&valid));
            }
            Matrix::vstack(&blocks)?
        }
        mode => {
            let f = featurize_images(&images, mode)?;
            let keep: Vec<usize> = idx.into_iter().filter(|&i| f.valid[i]).collect();
            f.matrix.select_rows(&keep)
        }
    };
    let mut rng = RngState::for_stream(c.seed, a.class as u64);
    let set = kmeans::fit(&samples, c.q, &c.params(), &mut rng)?;
    println!(
        "class {}: {} samples, Q = {}, {} iterations, final delta {:.3e}, {} reseeded",
        a.class,
        samples.rows(),
        c.q,
        set.iterations,
        set.final_delta,
        set.reseeded
    );
    let counts = kmeans::assign(&samples, &set.centroids)?.counts();
    println!("cluster sizes: {counts:?}");
    if let Some(path) = a.out {
        let mut w = csv::Writer::from_path(&path)?;
        for row in set.centroids.row_iter() {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
