//! `sessrec` — data preparation, training, evaluation and reporting for the
//! session-based recommendation experiments.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sessrec_core::corpus::preprocess::DAY_MS;
use sessrec_core::corpus::{
    ingest, load_bundle, parse_line, preprocess, removed_item_set, save_bundle, subset_fraction,
    PreprocessOptions, SourceFormat,
};
use sessrec_core::runner::{
    comparison_csv, evaluate, synth_corpus, train, ExperimentConfig, ModelSource, RunRecord,
    Split, RECORD_FILE,
};

#[derive(Parser)]
#[command(
    name = "sessrec",
    version,
    about = "Session-based recommendation experiments: prepare data, train models, audit bias"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw clickstream dump into a dataset bundle.
    Prepare {
        /// Raw dump path (yoochoose CSV or diginetica CSV with header).
        #[arg(long)]
        input: PathBuf,
        /// Source layout: yoochoose | diginetica.
        #[arg(long)]
        format: String,
        /// Bundle file to write.
        #[arg(long)]
        output: PathBuf,
        /// Keep items with at least this many event occurrences.
        #[arg(long, default_value_t = 5)]
        min_support: u64,
        /// Days at the end of the history that become the test split.
        #[arg(long, default_value_t = 1)]
        test_window_days: i64,
        /// Keep only the newest 1/D of train sessions (e.g. 64 for YC 1/64).
        #[arg(long)]
        subset_denominator: Option<usize>,
    },
    /// Remove a share of the most popular items from a raw dump, keeping the
    /// surviving lines byte-identical.
    Imbalance {
        #[arg(long)]
        input: PathBuf,
        /// Source layout: yoochoose | diginetica.
        #[arg(long)]
        format: String,
        #[arg(long)]
        output: PathBuf,
        /// Fraction of the top popularity quartile to remove, in [0, 1].
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic Markov corpus bundle with a planted popularity skew.
    Synth {
        #[arg(long, default_value_t = 200)]
        n_items: usize,
        #[arg(long, default_value_t = 5000)]
        n_sessions: usize,
        /// Probability of following the planted successor at each step.
        #[arg(long, default_value_t = 0.8)]
        sharpness: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run one experiment: train (when the variant has parameters), evaluate
    /// both splits, and write a run directory.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint or baseline on one split of a bundle.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        /// `random`, `bigram`, or a checkpoint path.
        #[arg(long)]
        model: String,
        /// train | test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Seed for the random baseline's recommendation streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON report here.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Merge run records into one comparison CSV.
    Report {
        /// run.json files or run directories containing one.
        records: Vec<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Flags mirror configuration keys one-to-one; anything set here overrides
/// the config file.
#[derive(Args)]
struct TrainArgs {
    /// Configuration file: JSON or key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lr_decay: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    spherical: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    p_count: Option<String>,
    #[arg(long)]
    pair_budget: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl TrainArgs {
    fn into_config(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        let overrides = [
            ("dataset", &self.dataset),
            ("variant", &self.variant),
            ("d", &self.d),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("lr_decay", &self.lr_decay),
            ("k", &self.k),
            ("spherical", &self.spherical),
            ("kappa", &self.kappa),
            ("lambda", &self.lambda),
            ("tau", &self.tau),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("p_count", &self.p_count),
            ("pair_budget", &self.pair_budget),
            ("seed", &self.seed),
            ("out_dir", &self.out_dir),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                cfg.set(key, value)?;
            }
        }
        Ok(cfg)
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn cmd_prepare(
    input: &Path,
    format: SourceFormat,
    output: &Path,
    min_support: u64,
    test_window_days: i64,
    subset_denominator: Option<usize>,
) -> Result<()> {
    let ingested = ingest(input, format)?;
    if ingested.malformed > 0 {
        eprintln!("skipped {} malformed rows", ingested.malformed);
    }
    let opts = PreprocessOptions {
        min_item_support: min_support,
        test_window_ms: test_window_days * DAY_MS,
        source_label: format!("{:?}:{}", format, input.display()),
    };
    let mut bundle = preprocess(&ingested.events, &opts)?;
    if let Some(denom) = subset_denominator {
        bundle = subset_fraction(&bundle, denom)?;
    }
    save_bundle(output, &bundle)?;
    println!(
        "items={} train_examples={} test_examples={}",
        bundle.vocab.len(),
        bundle.train.len(),
        bundle.test.len()
    );
    Ok(())
}

fn cmd_imbalance(
    input: &Path,
    format: SourceFormat,
    output: &Path,
    ratio: f64,
    seed: u64,
) -> Result<()> {
    let lines = read_lines(input)?;
    let events: Vec<_> = lines
        .iter()
        .filter_map(|l| parse_line(l, format))
        .collect();
    let removed = removed_item_set(&events, ratio, seed)?;
    let mut kept = String::new();
    let mut dropped = 0usize;
    for line in &lines {
        // Unparseable lines (headers, malformed rows) pass through untouched.
        let drop = parse_line(line, format)
            .map(|ev| removed.contains(&ev.item_key))
            .unwrap_or(false);
        if drop {
            dropped += 1;
        } else {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    std::fs::write(output, kept).with_context(|| format!("writing {}", output.display()))?;
    println!("removed_items={} dropped_rows={}", removed.len(), dropped);
    Ok(())
}

fn parse_model(model: &str, seed: u64) -> Result<ModelSource> {
    Ok(match model {
        "random" => ModelSource::Random { seed },
        "bigram" => ModelSource::Bigram,
        path => {
            let path = Path::new(path);
            if !path.exists() {
                bail!(
                    "model `{}` is neither `random`, `bigram`, nor an existing checkpoint",
                    path.display()
                );
            }
            ModelSource::Checkpoint(path.to_path_buf())
        }
    })
}

fn parse_split(split: &str) -> Result<Split> {
    match split {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => bail!("unknown split `{other}` (expected train or test)"),
    }
}

fn record_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(RECORD_FILE)
    } else {
        path.to_path_buf()
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Prepare {
            input,
            format,
            output,
            min_support,
            test_window_days,
            subset_denominator,
        } => cmd_prepare(
            &input,
            format.parse()?,
            &output,
            min_support,
            test_window_days,
            subset_denominator,
        ),
        Command::Imbalance {
            input,
            format,
            output,
            ratio,
            seed,
        } => cmd_imbalance(&input, format.parse()?, &output, ratio, seed),
        Command::Synth {
            n_items,
            n_sessions,
            sharpness,
            seed,
            output,
        } => {
            let bundle = synth_corpus(n_items, n_sessions, sharpness, seed)?;
            save_bundle(&output, &bundle)?;
            println!(
                "items={} train_examples={} test_examples={}",
                bundle.vocab.len(),
                bundle.train.len(),
                bundle.test.len()
            );
            Ok(())
        }
        Command::Train(args) => {
            let cfg = args.into_config()?;
            let record = train(&cfg)?;
            println!("{}", record.to_json()?);
            eprintln!("run directory: {}", record.run_dir);
            Ok(())
        }
        Command::Evaluate {
            bundle,
            model,
            split,
            k,
            seed,
            json_out,
        } => {
            let data = load_bundle(&bundle)?;
            let source = parse_model(&model, seed)?;
            let report = evaluate(&source, &data, parse_split(&split)?, k)?;
            let json = report.to_json()?;
            if let Some(path) = &json_out {
                std::fs::write(path, &json)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{json}");
            Ok(())
        }
        Command::Report { records, output } => {
            if records.is_empty() {
                bail!("no run records given");
            }
            let loaded: Vec<RunRecord> = records
                .iter()
                .map(|p| RunRecord::load(&record_path(p)))
                .collect::<sessrec_core::Result<_>>()?;
            let csv = comparison_csv(&loaded);
            match output {
                Some(path) => std::fs::write(&path, csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}
