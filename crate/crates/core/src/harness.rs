//! Experiment orchestration: artifact pipeline, likelihood histograms (E1),
//! success-rate campaigns (E2) and loss/distance trade-off sweeps (E3).
//!
//! Per-sample attacks run on a rayon pool. Results are collected in sample
//! order, so reports do not depend on the thread count. With
//! `measure_time = false` every output is byte-for-byte reproducible.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{attack, AttackConfig, AttackContext, AttackResult};
use crate::baselines::{greedy_attack, search_attack, BaselineConfig, DEFAULT_MAX_SEARCH_COMBINATIONS};
use crate::data::{
    encode_all, fit_standardization, generate_synthetic, load_csv, train_test_split, FeatureLayout, MixedSample,
    MixedSchema, StandardizationStats, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::mahalanobis::{CovarianceOptions, GeneralizedCovariance};
use crate::model::{accuracy, train, MlpClassifier, TrainConfig, TrainReport};
use crate::ood::{fit_kde, KdeModel, DEFAULT_REFERENCE_CAP};

pub const HISTOGRAM_BINS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[serde(rename = "mattack")]
    MAttack,
    PgdSearch,
    PgdGreedy,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MAttack, Method::PgdSearch, Method::PgdGreedy];

    pub fn name(self) -> &'static str {
        match self {
            Method::MAttack => "mattack",
            Method::PgdSearch => "pgd-search",
            Method::PgdGreedy => "pgd-greedy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown method `{s}` (mattack, pgd-search, pgd-greedy)")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub epsilon1: f64,
    pub epsilon2: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic {
        n_samples: usize,
    },
    Csv {
        schema: PathBuf,
        train: PathBuf,
        /// When absent the train file is split.
        test: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train_fraction: f64,
    pub methods: Vec<Method>,
    pub epsilon1: Vec<f64>,
    pub epsilon2: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// λ grid for the trade-off sweep.
    pub tradeoff_lambdas: Vec<f64>,
    /// Budget for the histogram and trade-off experiments.
    pub fixed_epsilon1: f64,
    pub fixed_epsilon2: usize,
    /// Regularized cohort of the histogram experiment.
    pub histogram_lambda: f64,
    pub n_eval_samples: usize,
    pub seed: u64,
    /// Count flagged adversarial examples as failures.
    pub use_ood_flag: bool,
    pub measure_time: bool,
    pub kde_cap: usize,
    pub max_search_combinations: u64,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub training: TrainConfig,
    /// Template for optimizer settings; budgets and seed are overridden.
    pub attack: AttackConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic { n_samples: 5000 },
            train_fraction: 0.8,
            methods: Method::ALL.to_vec(),
            epsilon1: vec![0.3, 0.6],
            epsilon2: vec![2, 3, 4],
            lambdas: vec![0.0, 6.0],
            tradeoff_lambdas: vec![0.0, 0.5, 1.0, 2.0, 4.0, 6.0, 10.0],
            fixed_epsilon1: 0.6,
            fixed_epsilon2: 3,
            histogram_lambda: 6.0,
            n_eval_samples: 100,
            seed: 0,
            use_ood_flag: true,
            measure_time: true,
            kde_cap: DEFAULT_REFERENCE_CAP,
            max_search_combinations: DEFAULT_MAX_SEARCH_COMBINATIONS,
            threads: None,
            output_dir: None,
            training: TrainConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config. Relative CSV paths resolve against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&s)?;
        if let (DataSource::Csv { schema, train, test }, Some(base)) = (&mut cfg.data, path.parent()) {
            for p in [Some(schema), Some(train), test.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty()
            || self.epsilon1.is_empty()
            || self.epsilon2.is_empty()
            || self.lambdas.is_empty()
            || self.tradeoff_lambdas.is_empty()
        {
            return Err(Error::usage("methods and all grids must be non-empty"));
        }
        if self.n_eval_samples == 0 {
            return Err(Error::usage("n_eval_samples must be >= 1"));
        }
        if self.epsilon1.iter().chain([&self.fixed_epsilon1]).any(|e| !(*e > 0.0)) {
            return Err(Error::usage("epsilon1 values must be > 0"));
        }
        if self
            .lambdas
            .iter()
            .chain(&self.tradeoff_lambdas)
            .chain([&self.histogram_lambda])
            .any(|l| !(*l >= 0.0) || !l.is_finite())
        {
            return Err(Error::usage("lambda values must be finite and >= 0"));
        }
        if let DataSource::Synthetic { n_samples } = self.data {
            if n_samples < 10 {
                return Err(Error::usage("synthetic n_samples must be >= 10"));
            }
        }
        self.attack.validate()
    }

    /// Attack settings for one budget and sample.
    pub fn attack_config(&self, budget: Budget, seed: u64) -> AttackConfig {
        AttackConfig {
            epsilon1: budget.epsilon1,
            epsilon2: budget.epsilon2,
            lambda: budget.lambda,
            seed,
            ..self.attack.clone()
        }
    }

    pub fn baseline_config(&self, budget: Budget, seed: u64) -> BaselineConfig {
        BaselineConfig {
            epsilon1: budget.epsilon1,
            epsilon2: budget.epsilon2,
            lambda: budget.lambda,
            step_num: self.attack.step_num,
            steps: self.attack.steps,
            seed,
            max_search_combinations: self.max_search_combinations,
        }
    }
}

/// Seed of the private RNG for one sample.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fitted artifacts shared by all experiments.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub schema: MixedSchema,
    pub layout: FeatureLayout,
    pub stats: StandardizationStats,
    pub model: MlpClassifier,
    pub maha: GeneralizedCovariance,
    pub kde: KdeModel,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<usize>,
    pub train_report: Option<TrainReport>,
}

/// Reads or generates the raw tables.
pub fn load_data(config: &ExperimentConfig) -> Result<(MixedSchema, Vec<MixedSample>, Vec<MixedSample>)> {
    match &config.data {
        DataSource::Synthetic { n_samples } => {
            let ds = generate_synthetic(&SyntheticSpec::criteo_shaped(*n_samples, config.seed))?;
            let (tr, te) = train_test_split(&ds.samples, config.train_fraction, config.seed)?;
            Ok((ds.schema, tr, te))
        }
        DataSource::Csv { schema, train, test } => {
            let schema = MixedSchema::load(schema)?;
            let rows = load_csv(train, &schema)?;
            match test {
                Some(t) => {
                    let test_rows = load_csv(t, &schema)?;
                    Ok((schema, rows, test_rows))
                }
                None => {
                    let (tr, te) = train_test_split(&rows, config.train_fraction, config.seed)?;
                    Ok((schema, tr, te))
                }
            }
        }
    }
}

impl Pipeline {
    /// Data, split, standardization, training, covariance and detector.
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (schema, train_rows, test_rows) = load_data(config)?;
        let stats = fit_standardization(&train_rows)?;
        let train_x = encode_all(&train_rows, &stats, &schema);
        let test_x = encode_all(&test_rows, &stats, &schema);
        let train_y: Vec<usize> = train_rows.iter().map(|s| s.label).collect();
        let test_y: Vec<usize> = test_rows.iter().map(|s| s.label).collect();
        let tc = TrainConfig {
            seed: config.seed,
            ..config.training.clone()
        };
        let (model, report) = train(&train_x, &train_y, schema.num_classes(), &tc, Some((&test_x, &test_y)))?;
        let maha = GeneralizedCovariance::fit(&train_x, CovarianceOptions::default())?;
        let kde = fit_kde(&train_x, config.kde_cap, config.seed)?.calibrate_threshold(&test_x)?;
        Ok(Pipeline {
            layout: schema.layout(),
            schema,
            stats,
            model,
            maha,
            kde,
            train_x,
            train_y,
            test_x,
            test_y,
            train_report: Some(report),
        })
    }

    pub fn context(&self) -> AttackContext<'_> {
        AttackContext::new(&self.model, &self.layout, Some(&self.maha))
    }

    pub fn test_accuracy(&self) -> f64 {
        accuracy(&self.model, &self.test_x, &self.test_y)
    }

    /// Up to `n` correctly classified test indices, in a seeded random order.
    pub fn eval_indices(&self, n: usize, seed: u64) -> Result<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.test_x.len())
            .filter(|&i| self.model.predict(&self.test_x[i]) == self.test_y[i])
            .collect();
        if idx.is_empty() {
            return Err(Error::usage("no correctly classified test samples to attack"));
        }
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1));
        idx.truncate(n);
        Ok(idx)
    }
}

/// Runs one method on one encoded sample.
pub fn run_method(
    ctx: &AttackContext<'_>,
    method: Method,
    config: &ExperimentConfig,
    budget: Budget,
    x: &[f64],
    y: usize,
    seed: u64,
) -> Result<AttackResult> {
    match method {
        Method::MAttack => attack(ctx, x, y, &config.attack_config(budget, seed)),
        Method::PgdSearch => search_attack(ctx, x, y, &config.baseline_config(budget, seed)),
        Method::PgdGreedy => greedy_attack(ctx, x, y, &config.baseline_config(budget, seed)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: Method,
    pub epsilon1: f64,
    pub epsilon2: usize,
    pub lambda: f64,
    pub sample_index: usize,
    #[serde(flatten)]
    pub result: AttackResult,
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::usage(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Attacks every index with one method and budget; results in index order.
pub fn attack_batch(
    pipeline: &Pipeline,
    config: &ExperimentConfig,
    method: Method,
    budget: Budget,
    indices: &[usize],
) -> Result<Vec<ResultRecord>> {
    let ctx = pipeline.context();
    let run = || {
        indices
            .par_iter()
            .map(|&i| {
                let mut r = run_method(
                    &ctx,
                    method,
                    config,
                    budget,
                    &pipeline.test_x[i],
                    pipeline.test_y[i],
                    sample_seed(config.seed, i),
                )?;
                let x_adv = r.dense(&pipeline.layout);
                r.flagged_ood = Some(pipeline.kde.is_flagged(&x_adv)?);
                if !config.measure_time {
                    r.wall_time_secs = 0.0;
                }
                Ok(ResultRecord {
                    method,
                    epsilon1: budget.epsilon1,
                    epsilon2: budget.epsilon2,
                    lambda: budget.lambda,
                    sample_index: i,
                    result: r,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    with_pool(config.threads, run)?
}

/// Success under the campaign rule: flipped and, when enabled, not flagged.
pub fn counts_as_success(r: &AttackResult, use_ood_flag: bool) -> bool {
    r.success && !(use_ood_flag && r.flagged_ood == Some(true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub method: Method,
    pub epsilon1: f64,
    pub epsilon2: usize,
    pub lambda: f64,
    pub success_rate: f64,
    pub mean_wall_time_secs: f64,
    pub mean_loss: f64,
    pub mean_m_distance: f64,
    pub flag_rate: f64,
    pub n: usize,
}

impl CampaignRow {
    pub fn summarize(records: &[ResultRecord], use_ood_flag: bool) -> Self {
        let n = records.len();
        let nf = n.max(1) as f64;
        let first = &records[0];
        let mean = |f: &dyn Fn(&AttackResult) -> f64| records.iter().map(|r| f(&r.result)).sum::<f64>() / nf;
        CampaignRow {
            method: first.method,
            epsilon1: first.epsilon1,
            epsilon2: first.epsilon2,
            lambda: first.lambda,
            success_rate: mean(&|r| f64::from(u8::from(counts_as_success(r, use_ood_flag)))),
            mean_wall_time_secs: mean(&|r| r.wall_time_secs),
            mean_loss: mean(&|r| r.loss),
            mean_m_distance: mean(&|r| r.m_distance.unwrap_or(f64::NAN)),
            flag_rate: mean(&|r| f64::from(u8::from(r.flagged_ood == Some(true)))),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub seed: u64,
    pub test_accuracy: f64,
    pub rows: Vec<CampaignRow>,
    #[serde(skip)]
    pub records: Vec<ResultRecord>,
}

impl CampaignReport {
    pub fn row(&self, method: Method, budget: Budget) -> Option<&CampaignRow> {
        self.rows.iter().find(|r| {
            r.method == method
                && r.epsilon1 == budget.epsilon1
                && r.epsilon2 == budget.epsilon2
                && r.lambda == budget.lambda
        })
    }
}

/// Every (ε₁, ε₂, λ) combination of the configured grids.
pub fn budget_grid(config: &ExperimentConfig) -> Vec<Budget> {
    let mut out = Vec::new();
    for &epsilon1 in &config.epsilon1 {
        for &epsilon2 in &config.epsilon2 {
            for &lambda in &config.lambdas {
                out.push(Budget {
                    epsilon1,
                    epsilon2,
                    lambda,
                });
            }
        }
    }
    out
}

/// Success rate and timing per method over the budget grid.
pub fn run_e2_success(pipeline: &Pipeline, config: &ExperimentConfig) -> Result<CampaignReport> {
    config.validate()?;
    let indices = pipeline.eval_indices(config.n_eval_samples, config.seed)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &method in &config.methods {
        for budget in budget_grid(config) {
            let recs = attack_batch(pipeline, config, method, budget, &indices)?;
            rows.push(CampaignRow::summarize(&recs, config.use_ood_flag));
            records.extend(recs);
        }
    }
    Ok(CampaignReport {
        seed: config.seed,
        test_accuracy: pipeline.test_accuracy(),
        rows,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub name: String,
    pub log_likelihoods: Vec<f64>,
    pub counts: Vec<usize>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramTable {
    /// `HISTOGRAM_BINS + 1` shared edges.
    pub edges: Vec<f64>,
    pub cohorts: Vec<Cohort>,
}

pub fn median(values: &[f64]) -> f64 {
    crate::ood::percentile(values, 50.0)
}

/// Bins every cohort on shared equal-width edges spanning the pooled range.
pub fn histogram(cohorts: Vec<(String, Vec<f64>)>, bins: usize) -> Result<HistogramTable> {
    if bins == 0 {
        return Err(Error::usage("histogram needs at least one bin"));
    }
    if let Some((name, _)) = cohorts.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::usage(format!("cohort `{name}` is empty")));
    }
    let lo = cohorts.iter().flat_map(|(_, v)| v).copied().fold(f64::INFINITY, f64::min);
    let mut hi = cohorts.iter().flat_map(|(_, v)| v).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| if b == bins { hi } else { lo + width * b as f64 }).collect();
    let cohorts = cohorts
        .into_iter()
        .map(|(name, values)| {
            let mut counts = vec![0usize; bins];
            for &v in &values {
                let b = (((v - lo) / width).floor() as usize).min(bins - 1);
                counts[b] += 1;
            }
            Cohort {
                name,
                median: median(&values),
                log_likelihoods: values,
                counts,
            }
        })
        .collect();
    Ok(HistogramTable { edges, cohorts })
}

/// KDE log-likelihood histograms of the attacked clean test samples and of
/// their M-Attack examples with and without the distance penalty.
pub fn run_e1_likelihood(pipeline: &Pipeline, config: &ExperimentConfig) -> Result<HistogramTable> {
    config.validate()?;
    let indices = pipeline.eval_indices(config.n_eval_samples, config.seed)?;
    let score = |recs: &[ResultRecord]| -> Vec<f64> {
        recs.iter()
            .map(|r| pipeline.kde.log_likelihood(&r.result.dense(&pipeline.layout)))
            .collect()
    };
    let clean: Vec<f64> = indices
        .iter()
        .map(|&i| pipeline.kde.log_likelihood(&pipeline.test_x[i]))
        .collect();
    let budget = |lambda| Budget {
        epsilon1: config.fixed_epsilon1,
        epsilon2: config.fixed_epsilon2,
        lambda,
    };
    let reg = attack_batch(pipeline, config, Method::MAttack, budget(config.histogram_lambda), &indices)?;
    let unreg = attack_batch(pipeline, config, Method::MAttack, budget(0.0), &indices)?;
    histogram(
        vec![
            ("clean".into(), clean),
            (format!("adv_lambda_{}", config.histogram_lambda), score(&reg)),
            ("adv_lambda_0".into(), score(&unreg)),
        ],
        HISTOGRAM_BINS,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub method: Method,
    pub lambda: f64,
    pub mean_loss: f64,
    pub mean_m_distance: f64,
    pub n: usize,
}

/// Mean loss and mean Mahalanobis distance per method and λ.
pub fn run_e3_tradeoff(pipeline: &Pipeline, config: &ExperimentConfig) -> Result<Vec<TradeoffRow>> {
    config.validate()?;
    let indices = pipeline.eval_indices(config.n_eval_samples, config.seed)?;
    let mut rows = Vec::new();
    for &method in &config.methods {
        for &lambda in &config.tradeoff_lambdas {
            let budget = Budget {
                epsilon1: config.fixed_epsilon1,
                epsilon2: config.fixed_epsilon2,
                lambda,
            };
            let recs = attack_batch(pipeline, config, method, budget, &indices)?;
            let row = CampaignRow::summarize(&recs, config.use_ood_flag);
            rows.push(TradeoffRow {
                method,
                lambda,
                mean_loss: row.mean_loss,
                mean_m_distance: row.mean_m_distance,
                n: row.n,
            });
        }
    }
    Ok(rows)
}

/// Linear interpolation of `loss(distance)` on a trade-off curve sorted by
/// distance; `None` outside the covered range.
pub fn interpolate_loss(curve: &[(f64, f64)], distance: f64) -> Option<f64> {
    let mut pts = curve.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first = pts.first()?;
    let last = pts.last()?;
    if distance < first.0 || distance > last.0 {
        return None;
    }
    for w in pts.windows(2) {
        let ((d0, l0), (d1, l1)) = (w[0], w[1]);
        if distance >= d0 && distance <= d1 {
            if d1 == d0 {
                return Some(l0.max(l1));
            }
            return Some(l0 + (l1 - l0) * (distance - d0) / (d1 - d0));
        }
    }
    Some(first.1)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    create_parent(path)?;
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::format(path, e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_histogram_csv(path: &Path, table: &HistogramTable) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
    header.extend(table.cohorts.iter().map(|c| c.name.clone()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for b in 0..table.edges.len() - 1 {
        let mut rec = vec![table.edges[b].to_string(), table.edges[b + 1].to_string()];
        rec.extend(table.cohorts.iter().map(|c| c.counts[b].to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.json` and `results.jsonl` for a campaign.
pub fn write_campaign(dir: &Path, report: &CampaignReport) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    write_jsonl(&dir.join("results.jsonl"), &report.records)
}

/// Appends a line to a log file; used by the CLI for run summaries.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    create_parent(path)?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}
