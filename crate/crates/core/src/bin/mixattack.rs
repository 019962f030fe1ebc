use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mixattack::data::{
    decode, encode_all, fit_standardization, generate_synthetic, load_csv, train_test_split, write_csv,
    EncodedSample, MixedSample, MixedSchema, StandardizationStats, SyntheticSpec,
};
use mixattack::harness::{
    attack_batch, run_e1_likelihood, run_e2_success, run_e3_tradeoff, write_campaign, write_csv_rows,
    write_histogram_csv, write_json, write_jsonl, Budget, ExperimentConfig, Method, Pipeline,
    ResultRecord,
};
use mixattack::mahalanobis::{CovarianceOptions, GeneralizedCovariance};
use mixattack::model::{train, MlpClassifier, TrainConfig};
use mixattack::ood::{fit_kde, KdeModel, DEFAULT_REFERENCE_CAP};
use mixattack::Result;

#[derive(Parser)]
#[command(name = "mixattack", version, about = "Adversarial examples for mixed-type tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the seeded synthetic dataset as CSV plus its schema.
    Generate {
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schema_out: PathBuf,
    },
    /// Train the classifier; also writes `<model-out>.stats.json`.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Fit the generalized covariance on the training split.
    FitCov {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the KDE detector on the training split and calibrate it on the test split.
    FitOod {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REFERENCE_CAP)]
        cap: usize,
    },
    /// Attack correctly classified test rows; writes JSON lines.
    Attack(AttackArgs),
    /// Run one experiment from a TOML config.
    Experiment {
        #[arg(value_enum)]
        which: Experiment,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_eval_samples: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    E1,
    E2,
    E3,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Separate test file; when absent `--data` is split.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Saved covariance; fitted on the training split when absent.
    #[arg(long)]
    cov: Option<PathBuf>,
    /// Saved detector; fitted when absent.
    #[arg(long)]
    ood: Option<PathBuf>,
    #[arg(long, default_value = "mattack")]
    method: String,
    #[arg(long, default_value_t = 0.6)]
    eps1: f64,
    #[arg(long, default_value_t = 3)]
    eps2: usize,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    steps: Option<usize>,
    /// Number of test rows to attack.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

struct Split {
    schema: MixedSchema,
    stats: StandardizationStats,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<usize>,
    test_x: Vec<Vec<f64>>,
    test_y: Vec<usize>,
}

fn load_split(args: &DataArgs) -> Result<Split> {
    let schema = MixedSchema::load(&args.schema)?;
    let rows = load_csv(&args.data, &schema)?;
    let (train_rows, test_rows) = match &args.test {
        Some(t) => (rows, load_csv(t, &schema)?),
        None => train_test_split(&rows, args.split, args.seed)?,
    };
    let stats = fit_standardization(&train_rows)?;
    Ok(Split {
        train_x: encode_all(&train_rows, &stats, &schema),
        train_y: train_rows.iter().map(|s| s.label).collect(),
        test_x: encode_all(&test_rows, &stats, &schema),
        test_y: test_rows.iter().map(|s| s.label).collect(),
        schema,
        stats,
    })
}

fn stats_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

/// One CLI output line: the record plus the adversarial row in original units.
#[derive(Serialize)]
struct AttackLine {
    #[serde(flatten)]
    record: ResultRecord,
    adv_sample: RawSample,
}

#[derive(Serialize)]
struct RawSample {
    numerics: Vec<f64>,
    categories: Vec<String>,
}

fn raw_sample(split: &Split, record: &ResultRecord) -> Result<RawSample> {
    let dense = record.result.dense(&split.schema.layout());
    let MixedSample {
        numerics, categoricals, ..
    } = decode(&EncodedSample { dense }, &split.stats, &split.schema)?;
    let categories = categoricals
        .iter()
        .zip(&split.schema.categorical_specs)
        .map(|(&c, spec)| spec.vocabulary[c].clone())
        .collect();
    Ok(RawSample { numerics, categories })
}

fn run_attack(args: AttackArgs) -> Result<()> {
    let method = Method::parse(&args.method)?;
    let split = load_split(&args.data)?;
    let model = MlpClassifier::load(&args.model)?;
    let maha = match &args.cov {
        Some(p) => GeneralizedCovariance::load(p)?,
        None => GeneralizedCovariance::fit(&split.train_x, CovarianceOptions::default())?,
    };
    let kde = match &args.ood {
        Some(p) => KdeModel::load(p)?,
        None => fit_kde(&split.train_x, DEFAULT_REFERENCE_CAP, args.data.seed)?.calibrate_threshold(&split.test_x)?,
    };
    let mut config = ExperimentConfig {
        seed: args.data.seed,
        n_eval_samples: args.n,
        ..ExperimentConfig::default()
    };
    if let Some(steps) = args.steps {
        config.attack.steps = steps;
    }
    config.validate()?;
    let budget = Budget {
        epsilon1: args.eps1,
        epsilon2: args.eps2,
        lambda: args.lambda,
    };
    let pipeline = Pipeline {
        layout: split.schema.layout(),
        schema: split.schema.clone(),
        stats: split.stats.clone(),
        model,
        maha,
        kde,
        train_x: split.train_x.clone(),
        train_y: split.train_y.clone(),
        test_x: split.test_x.clone(),
        test_y: split.test_y.clone(),
        train_report: None,
    };
    let indices = pipeline.eval_indices(args.n, config.seed)?;
    let records = attack_batch(&pipeline, &config, method, budget, &indices)?;
    let lines = records
        .into_iter()
        .map(|record| {
            let adv_sample = raw_sample(&split, &record)?;
            Ok(AttackLine { record, adv_sample })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&args.out, &lines)?;
    let successes = lines.iter().filter(|l| mixattack::harness::counts_as_success(&l.record.result, true)).count();
    eprintln!("{} attacks, {successes} successful, written to {}", lines.len(), args.out.display());
    Ok(())
}

fn run_experiment(
    which: Experiment,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    n_eval_samples: Option<usize>,
    threads: Option<usize>,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(&p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = n_eval_samples {
        cfg.n_eval_samples = n;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let pipeline = Pipeline::build(&cfg)?;
    eprintln!("test accuracy {:.4}", pipeline.test_accuracy());
    match which {
        Experiment::E1 => {
            let table = run_e1_likelihood(&pipeline, &cfg)?;
            write_histogram_csv(&dir.join("histogram.csv"), &table)?;
            for c in &table.cohorts {
                eprintln!("{}: median log-likelihood {:.3}", c.name, c.median);
            }
        }
        Experiment::E2 => {
            let report = run_e2_success(&pipeline, &cfg)?;
            write_campaign(&dir, &report)?;
            write_csv_rows(&dir.join("success.csv"), &report.rows)?;
            for r in &report.rows {
                eprintln!(
                    "{:<10} eps1={} eps2={} lambda={} success={:.3} time={:.4}s",
                    r.method.name(),
                    r.epsilon1,
                    r.epsilon2,
                    r.lambda,
                    r.success_rate,
                    r.mean_wall_time_secs
                );
            }
        }
        Experiment::E3 => {
            let rows = run_e3_tradeoff(&pipeline, &cfg)?;
            write_csv_rows(&dir.join("tradeoff.csv"), &rows)?;
            write_json(&dir.join("report.json"), &rows)?;
        }
    }
    eprintln!("outputs written to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            n,
            seed,
            out,
            schema_out,
        } => {
            let ds = generate_synthetic(&SyntheticSpec::criteo_shaped(n, seed))?;
            write_csv(&out, &ds.samples, &ds.schema)?;
            ds.schema.save(&schema_out)
        }
        Command::Train {
            data,
            model_out,
            epochs,
            hidden,
            lr,
            batch_size,
        } => {
            let split = load_split(&data)?;
            let defaults = TrainConfig::default();
            let tc = TrainConfig {
                epochs: epochs.unwrap_or(defaults.epochs),
                hidden: hidden.unwrap_or(defaults.hidden),
                learning_rate: lr.unwrap_or(defaults.learning_rate),
                batch_size: batch_size.unwrap_or(defaults.batch_size),
                seed: data.seed,
                ..defaults
            };
            let (model, report) = train(
                &split.train_x,
                &split.train_y,
                split.schema.num_classes(),
                &tc,
                Some((&split.test_x, &split.test_y)),
            )?;
            model.save(&model_out)?;
            split.stats.save_json(&stats_path(&model_out))?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialize"));
            Ok(())
        }
        Command::FitCov { data, out } => {
            let split = load_split(&data)?;
            let cov = GeneralizedCovariance::fit(&split.train_x, CovarianceOptions::default())?;
            cov.save(&out)?;
            eprintln!("covariance dim {} rank {}", cov.dim(), cov.rank());
            Ok(())
        }
        Command::FitOod { data, out, cap } => {
            let split = load_split(&data)?;
            let kde = fit_kde(&split.train_x, cap, data.seed)?.calibrate_threshold(&split.test_x)?;
            kde.save(&out)?;
            eprintln!(
                "detector: {} reference points, threshold {:.4}",
                kde.num_reference(),
                kde.threshold().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Attack(args) => run_attack(args),
        Command::Experiment {
            which,
            config,
            out,
            seed,
            n_eval_samples,
            threads,
        } => run_experiment(which, config, out, seed, n_eval_samples, threads),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

