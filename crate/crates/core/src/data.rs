//! Mixed-type data model: schema, CSV ingestion, standardization, one-hot
//! encoding and a seeded synthetic generator.
//!
//! Encoded layout: the first `d_n` entries are z-scored numerics, followed by
//! one contiguous one-hot block per categorical feature in schema order.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::argmax;

pub const MAX_CATEGORIES: usize = 50;
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub name: String,
    pub vocabulary: Vec<String>,
}

/// Column roles and vocabularies of a mixed-type table.
///
/// Serialized as TOML:
///
/// ```toml
/// label = "y"
/// label_vocabulary = ["no", "yes"]
/// numerical = ["age", "income"]
///
/// [[categorical]]
/// name = "status"
/// vocabulary = ["single", "married", "other"]
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedSchema {
    #[serde(rename = "numerical", default)]
    pub numerical_names: Vec<String>,
    #[serde(rename = "categorical", default)]
    pub categorical_specs: Vec<CategoricalSpec>,
    #[serde(rename = "label")]
    pub label_name: String,
    pub label_vocabulary: Vec<String>,
}

impl MixedSchema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let all = self
            .numerical_names
            .iter()
            .chain(self.categorical_specs.iter().map(|c| &c.name))
            .chain(std::iter::once(&self.label_name));
        for name in all {
            if name.is_empty() {
                return Err(Error::Schema("empty column identifier".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate column identifier '{name}'")));
            }
        }
        for spec in &self.categorical_specs {
            let k = spec.vocabulary.len();
            if !(2..=MAX_CATEGORIES).contains(&k) {
                return Err(Error::Schema(format!(
                    "categorical '{}' has {k} categories; must be between 2 and {MAX_CATEGORIES}",
                    spec.name
                )));
            }
            let uniq: HashSet<_> = spec.vocabulary.iter().collect();
            if uniq.len() != k {
                return Err(Error::Schema(format!(
                    "categorical '{}' has duplicate vocabulary entries",
                    spec.name
                )));
            }
        }
        if self.label_vocabulary.len() < 2 {
            return Err(Error::Schema("label vocabulary needs at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let schema: MixedSchema =
            toml::from_str(s).map_err(|e| Error::Schema(format!("invalid schema file: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema is always representable as TOML")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn num_numerical(&self) -> usize {
        self.numerical_names.len()
    }

    pub fn num_categorical(&self) -> usize {
        self.categorical_specs.len()
    }

    pub fn num_classes(&self) -> usize {
        self.label_vocabulary.len()
    }

    pub fn category_counts(&self) -> Vec<usize> {
        self.categorical_specs
            .iter()
            .map(|c| c.vocabulary.len())
            .collect()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.num_numerical(), &self.category_counts())
    }
}

/// Position of one categorical feature's one-hot block in the encoded vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub size: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    pub num_numerical: usize,
    pub blocks: Vec<Block>,
    pub width: usize,
}

impl FeatureLayout {
    pub fn new(num_numerical: usize, category_counts: &[usize]) -> Self {
        let mut offset = num_numerical;
        let blocks = category_counts
            .iter()
            .map(|&size| {
                let b = Block { offset, size };
                offset += size;
                b
            })
            .collect();
        FeatureLayout {
            num_numerical,
            blocks,
            width: offset,
        }
    }

    pub fn num_categorical(&self) -> usize {
        self.blocks.len()
    }

    /// Category index of each block (argmax, lowest index on ties).
    pub fn categories_of(&self, dense: &[f64]) -> Vec<usize> {
        self.blocks
            .iter()
            .map(|b| argmax(&dense[b.range()]))
            .collect()
    }

    /// Overwrites the one-hot blocks of `dense` with the given categories.
    pub fn set_categories(&self, dense: &mut [f64], categories: &[usize]) {
        for (b, &c) in self.blocks.iter().zip(categories) {
            let block = &mut dense[b.range()];
            block.iter_mut().for_each(|v| *v = 0.0);
            block[c] = 1.0;
        }
    }

    /// Which of the columns are one-hot (as opposed to numerical).
    pub fn is_categorical_column(&self, col: usize) -> bool {
        col >= self.num_numerical
    }

    /// Maps an encoded column to its categorical feature and category index.
    pub fn block_of_column(&self, col: usize) -> Option<(usize, usize)> {
        self.blocks
            .iter()
            .enumerate()
            .find(|(_, b)| b.range().contains(&col))
            .map(|(i, b)| (i, col - b.offset))
    }
}

/// A raw row: numerics in original units, categories as vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub numerics: Vec<f64>,
    pub categoricals: Vec<usize>,
    pub label: usize,
}

impl MixedSample {
    pub fn validate(&self, schema: &MixedSchema) -> Result<()> {
        if self.numerics.len() != schema.num_numerical()
            || self.categoricals.len() != schema.num_categorical()
        {
            return Err(Error::InvalidData(format!(
                "sample has {} numerics / {} categoricals, schema expects {} / {}",
                self.numerics.len(),
                self.categoricals.len(),
                schema.num_numerical(),
                schema.num_categorical()
            )));
        }
        if let Some(x) = self.numerics.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite numeric value {x}")));
        }
        for (c, spec) in self.categoricals.iter().zip(&schema.categorical_specs) {
            if *c >= spec.vocabulary.len() {
                return Err(Error::InvalidData(format!(
                    "category index {c} out of range for '{}'",
                    spec.name
                )));
            }
        }
        if self.label >= schema.num_classes() {
            return Err(Error::InvalidData(format!("label index {} out of range", self.label)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
}

impl StandardizationStats {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).expect("stats serialize");
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Per-column mean and sample standard deviation (N−1 denominator) of the
/// training numerics. Standard deviations are floored at [`STD_FLOOR`].
pub fn fit_standardization(train: &[MixedSample]) -> Result<StandardizationStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::usage("cannot fit standardization on an empty training set"))?;
    let d = first.numerics.len();
    let n = train.len() as f64;
    let mut means = vec![0.0; d];
    for s in train {
        for (m, x) in means.iter_mut().zip(&s.numerics) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for s in train {
        for ((v, x), m) in var.iter_mut().zip(&s.numerics).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    let denom = (train.len().max(2) - 1) as f64;
    let std_devs = var
        .into_iter()
        .map(|v| (v / denom).sqrt().max(STD_FLOOR))
        .collect();
    Ok(StandardizationStats { means, std_devs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub dense: Vec<f64>,
}

pub fn encode(sample: &MixedSample, stats: &StandardizationStats, schema: &MixedSchema) -> EncodedSample {
    let layout = schema.layout();
    let mut dense = vec![0.0; layout.width];
    for (j, x) in sample.numerics.iter().enumerate() {
        dense[j] = (x - stats.means[j]) / stats.std_devs[j];
    }
    layout.set_categories(&mut dense, &sample.categoricals);
    EncodedSample { dense }
}

/// Inverse of [`encode`]. Relaxed blocks decode to their argmax (lowest index
/// on ties). The returned label is 0.
pub fn decode(dense: &EncodedSample, stats: &StandardizationStats, schema: &MixedSchema) -> Result<MixedSample> {
    let layout = schema.layout();
    if dense.dense.len() != layout.width {
        return Err(Error::InvalidData(format!(
            "encoded width {} does not match schema width {}",
            dense.dense.len(),
            layout.width
        )));
    }
    if let Some(i) = dense.dense.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidData(format!(
            "non-finite encoded value at column {i}"
        )));
    }
    let numerics = (0..layout.num_numerical)
        .map(|j| dense.dense[j] * stats.std_devs[j] + stats.means[j])
        .collect();
    Ok(MixedSample {
        numerics,
        categoricals: layout.categories_of(&dense.dense),
        label: 0,
    })
}

pub fn encode_all(samples: &[MixedSample], stats: &StandardizationStats, schema: &MixedSchema) -> Vec<Vec<f64>> {
    samples.iter().map(|s| encode(s, stats, schema).dense).collect()
}

/// Reads a headered CSV. Columns may appear in any order; extra columns are
/// ignored. Row numbers in errors are 1-based data rows.
pub fn load_csv(path: &Path, schema: &MixedSchema) -> Result<Vec<MixedSample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(input: R, schema: &MixedSchema) -> Result<Vec<MixedSample>> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::InvalidData(format!("cannot read CSV header: {e}")))?
        .clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("missing column '{name}' in CSV header")))
    };
    let num_cols: Vec<usize> = schema
        .numerical_names
        .iter()
        .map(|n| col(n))
        .collect::<Result<_>>()?;
    let cat_cols: Vec<usize> = schema
        .categorical_specs
        .iter()
        .map(|c| col(&c.name))
        .collect::<Result<_>>()?;
    let label_col = col(&schema.label_name)?;

    let cat_lookup: Vec<HashMap<&str, usize>> = schema
        .categorical_specs
        .iter()
        .map(|c| c.vocabulary.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect())
        .collect();
    let label_lookup: HashMap<&str, usize> = schema
        .label_vocabulary
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();

    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Data {
            row,
            message: format!("malformed record: {e}"),
        })?;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let mut numerics = Vec::with_capacity(num_cols.len());
        for (name, &c) in schema.numerical_names.iter().zip(&num_cols) {
            let raw = cell(c);
            let v: f64 = raw.parse().map_err(|_| Error::Data {
                row,
                message: format!("column '{name}': cannot parse '{raw}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row,
                    message: format!("column '{name}': non-finite value '{raw}'"),
                });
            }
            numerics.push(v);
        }
        let mut categoricals = Vec::with_capacity(cat_cols.len());
        for ((spec, &c), lookup) in schema.categorical_specs.iter().zip(&cat_cols).zip(&cat_lookup) {
            let raw = cell(c);
            let idx = lookup.get(raw).copied().ok_or_else(|| Error::Data {
                row,
                message: format!(
                    "column '{}': value '{raw}' is not in the vocabulary",
                    spec.name
                ),
            })?;
            categoricals.push(idx);
        }
        let raw = cell(label_col);
        let label = label_lookup.get(raw).copied().ok_or_else(|| Error::Data {
            row,
            message: format!("label '{raw}' is not in the label vocabulary"),
        })?;
        out.push(MixedSample {
            numerics,
            categoricals,
            label,
        });
    }
    Ok(out)
}

/// Renders samples as CSV with columns in schema order (numerics,
/// categoricals, label).
pub fn to_csv_string(samples: &[MixedSample], schema: &MixedSchema) -> String {
    let mut s = String::new();
    let header: Vec<&str> = schema
        .numerical_names
        .iter()
        .map(String::as_str)
        .chain(schema.categorical_specs.iter().map(|c| c.name.as_str()))
        .chain(std::iter::once(schema.label_name.as_str()))
        .collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for sample in samples {
        let mut first = true;
        let mut sep = |s: &mut String| {
            if !first {
                s.push(',');
            }
            first = false;
        };
        for x in &sample.numerics {
            sep(&mut s);
            write!(s, "{x}").unwrap();
        }
        for (c, spec) in sample.categoricals.iter().zip(&schema.categorical_specs) {
            sep(&mut s);
            s.push_str(&spec.vocabulary[*c]);
        }
        sep(&mut s);
        s.push_str(&schema.label_vocabulary[sample.label]);
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, samples: &[MixedSample], schema: &MixedSchema) -> Result<()> {
    fs::write(path, to_csv_string(samples, schema)).map_err(|e| Error::io(path, e))
}

/// Seeded shuffle then split; `train_fraction` of the rows go to train.
pub fn train_test_split(
    samples: &[MixedSample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<MixedSample>, Vec<MixedSample>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::usage(format!(
            "split fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((samples.len() as f64) * train_fraction).round() as usize;
    if n_train == 0 || n_train == samples.len() {
        return Err(Error::usage(format!(
            "split {train_fraction} of {} rows leaves an empty partition",
            samples.len()
        )));
    }
    let train = idx[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let test = idx[n_train..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_numerical: usize,
    pub categories: Vec<usize>,
    pub n_samples: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Same shape as the Criteo display-advertising table (13 numerical and
    /// 7 categorical features), with 10 categories each.
    pub fn criteo_shaped(n_samples: usize, seed: u64) -> Self {
        SyntheticSpec {
            num_numerical: 13,
            categories: vec![10; 7],
            n_samples,
            seed,
        }
    }
}

/// The labelling rule used by the generator, before label noise.
///
/// `score = Σ_j w_j·x_j + Σ_i v_i[c_i]`, class 1 iff `score > threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedRule {
    pub numeric_weights: Vec<f64>,
    pub category_weights: Vec<Vec<f64>>,
    pub threshold: f64,
}

impl PlantedRule {
    pub fn score(&self, sample: &MixedSample) -> f64 {
        let num: f64 = self
            .numeric_weights
            .iter()
            .zip(&sample.numerics)
            .map(|(w, x)| w * x)
            .sum();
        let cat: f64 = self
            .category_weights
            .iter()
            .zip(&sample.categoricals)
            .map(|(v, &c)| v[c])
            .sum();
        num + cat
    }

    pub fn predict(&self, sample: &MixedSample) -> usize {
        usize::from(self.score(sample) > self.threshold)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub schema: MixedSchema,
    pub samples: Vec<MixedSample>,
    pub rule: PlantedRule,
}

const LABEL_NOISE: f64 = 0.03;
const NUMERIC_NOISE_STD: f64 = 0.5;
const CATEGORY_SHIFT_STD: f64 = 1.0;

/// Seeded binary-classification table with correlated numeric and
/// categorical features.
///
/// Each categorical feature shifts the means of two numeric features
/// (category-conditioned Gaussians), so changing a category without moving
/// the numerics produces an atypical row. Labels follow a [`PlantedRule`]
/// with 3% flips.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.n_samples < 10 {
        return Err(Error::usage(format!(
            "synthetic generator needs n_samples >= 10, got {}",
            spec.n_samples
        )));
    }
    if spec.categories.is_empty() && spec.num_numerical == 0 {
        return Err(Error::usage("synthetic generator needs at least one feature"));
    }
    if let Some(&k) = spec
        .categories
        .iter()
        .find(|&&k| !(2..=MAX_CATEGORIES).contains(&k))
    {
        return Err(Error::usage(format!(
            "category count {k} outside [2, {MAX_CATEGORIES}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let d_n = spec.num_numerical;

    // Category frequencies: mildly non-uniform.
    let freqs: Vec<Vec<f64>> = spec
        .categories
        .iter()
        .map(|&k| {
            let w: Vec<f64> = (0..k).map(|_| 0.5 + rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    // Per-category mean shifts on two numeric features per categorical.
    let shifts: Vec<Vec<f64>> = spec
        .categories
        .iter()
        .map(|&k| (0..k).map(|_| CATEGORY_SHIFT_STD * std_normal.sample(&mut rng)).collect())
        .collect();
    let targets: Vec<[usize; 2]> = (0..spec.categories.len())
        .map(|i| [(2 * i) % d_n.max(1), (2 * i + 1) % d_n.max(1)])
        .collect();
    let base_means: Vec<f64> = (0..d_n).map(|_| 2.0 * std_normal.sample(&mut rng)).collect();
    let scales: Vec<f64> = (0..d_n).map(|_| 0.5 + 2.0 * rng.random::<f64>()).collect();

    let numeric_weights: Vec<f64> = (0..d_n)
        .map(|j| std_normal.sample(&mut rng) / scales[j])
        .collect();
    let category_weights: Vec<Vec<f64>> = spec
        .categories
        .iter()
        .map(|&k| (0..k).map(|_| 0.8 * std_normal.sample(&mut rng)).collect())
        .collect();

    let mut samples = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let categoricals: Vec<usize> = freqs
            .iter()
            .map(|f| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (c, p) in f.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return c;
                    }
                }
                f.len() - 1
            })
            .collect();
        let mut z: Vec<f64> = (0..d_n).map(|_| NUMERIC_NOISE_STD * std_normal.sample(&mut rng)).collect();
        if d_n > 0 {
            for (i, &c) in categoricals.iter().enumerate() {
                for (t, &j) in targets[i].iter().enumerate() {
                    let sign = if t == 0 { 1.0 } else { -0.7 };
                    z[j] += sign * shifts[i][c];
                }
            }
        }
        let numerics = z
            .iter()
            .enumerate()
            .map(|(j, v)| base_means[j] + scales[j] * v)
            .collect();
        samples.push(MixedSample {
            numerics,
            categoricals,
            label: 0,
        });
    }

    let mut rule = PlantedRule {
        numeric_weights,
        category_weights,
        threshold: 0.0,
    };
    let mut scores: Vec<f64> = samples.iter().map(|s| rule.score(s)).collect();
    scores.sort_by(f64::total_cmp);
    rule.threshold = scores[scores.len() / 2];
    for s in &mut samples {
        s.label = rule.predict(s);
        if rng.random::<f64>() < LABEL_NOISE {
            s.label = 1 - s.label;
        }
    }

    let schema = MixedSchema {
        numerical_names: (0..d_n).map(|j| format!("num_{j}")).collect(),
        categorical_specs: spec
            .categories
            .iter()
            .enumerate()
            .map(|(i, &k)| CategoricalSpec {
                name: format!("cat_{i}"),
                vocabulary: (0..k).map(|c| format!("c{i}_{c}")).collect(),
            })
            .collect(),
        label_name: "label".into(),
        label_vocabulary: vec!["neg".into(), "pos".into()],
    };
    schema.validate()?;
    Ok(SyntheticDataset {
        schema,
        samples,
        rule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_schema() -> MixedSchema {
        MixedSchema {
            numerical_names: vec!["a".into(), "b".into()],
            categorical_specs: vec![CategoricalSpec {
                name: "color".into(),
                vocabulary: vec!["red".into(), "green".into(), "blue".into()],
            }],
            label_name: "y".into(),
            label_vocabulary: vec!["no".into(), "yes".into()],
        }
    }

    #[test]
    fn parses_csv_in_any_column_order() {
        let csv = "color,y,b,a\nred,no,2.5,1\nblue,yes,-1,3e2\n";
        let rows = read_csv(csv.as_bytes(), &tiny_schema()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].numerics, vec![1.0, 2.5]);
        assert_eq!(rows[0].categoricals, vec![0]);
        assert_eq!(rows[1].numerics, vec![300.0, -1.0]);
        assert_eq!(rows[1].categoricals, vec![2]);
        assert_eq!(rows[1].label, 1);
    }

    #[test]
    fn csv_errors_are_specific() {
        let schema = tiny_schema();
        let err = read_csv("a,b,y\n1,2,no\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("color")));

        let err = read_csv("a,b,color,y\n1,2,red,no\n1,2,purple,no\n".as_bytes(), &schema).unwrap_err();
        match err {
            Error::Data { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("purple"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let err = read_csv("a,b,color,y\nx1,2,red,no\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(&err, Error::Data { row: 1, message } if message.contains("'a'")));

        let err = read_csv("a,b,color,y\n,2,red,no\n".as_bytes(), &schema).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn schema_validation() {
        let mut s = tiny_schema();
        s.categorical_specs[0].vocabulary.truncate(1);
        assert!(s.validate().is_err());
        let mut s = tiny_schema();
        s.numerical_names.push("y".into());
        assert!(s.validate().is_err());
        let mut s = tiny_schema();
        s.categorical_specs[0].vocabulary = (0..51).map(|i| i.to_string()).collect();
        assert!(s.validate().is_err());
        let s = tiny_schema();
        assert_eq!(MixedSchema::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }

    #[test]
    fn standardization_examples() {
        let mk = |x: f64| MixedSample {
            numerics: vec![x],
            categoricals: vec![],
            label: 0,
        };
        let st = fit_standardization(&[mk(1.0), mk(2.0), mk(3.0)]).unwrap();
        assert_eq!(st.means, vec![2.0]);
        assert_eq!(st.std_devs, vec![1.0]);
        let st = fit_standardization(&[mk(5.0), mk(5.0)]).unwrap();
        assert_eq!(st.means, vec![5.0]);
        assert_eq!(st.std_devs, vec![STD_FLOOR]);
        assert!(matches!(fit_standardization(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn encode_layout_and_decode() {
        let schema = MixedSchema {
            numerical_names: vec!["a".into()],
            ..tiny_schema()
        };
        let stats = StandardizationStats {
            means: vec![2.0],
            std_devs: vec![1.0],
        };
        let s = MixedSample {
            numerics: vec![2.0],
            categoricals: vec![1],
            label: 0,
        };
        let e = encode(&s, &stats, &schema);
        assert_eq!(e.dense, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(decode(&e, &stats, &schema).unwrap(), s);

        let stats = StandardizationStats {
            means: vec![3.0],
            std_devs: vec![2.0],
        };
        let d = decode(&EncodedSample { dense: vec![0.0, 0.2, 0.7, 0.1] }, &stats, &schema).unwrap();
        assert_eq!(d.numerics, vec![3.0]);
        assert_eq!(d.categoricals, vec![1]);

        let two = MixedSchema {
            numerical_names: vec![],
            categorical_specs: vec![CategoricalSpec {
                name: "f".into(),
                vocabulary: vec!["p".into(), "q".into()],
            }],
            ..tiny_schema()
        };
        let empty = StandardizationStats {
            means: vec![],
            std_devs: vec![],
        };
        let d = decode(&EncodedSample { dense: vec![0.5, 0.5] }, &empty, &two).unwrap();
        assert_eq!(d.categoricals, vec![0]);
        assert!(decode(&EncodedSample { dense: vec![f64::NAN, 0.5] }, &empty, &two).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_criteo_shaped() {
        let spec = SyntheticSpec::criteo_shaped(5000, 7);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(to_csv_string(&a.samples, &a.schema), to_csv_string(&b.samples, &b.schema));
        assert_eq!(a.schema.num_numerical(), 13);
        assert_eq!(a.schema.num_categorical(), 7);
        assert_eq!(a.schema.layout().width, 13 + 70);
        assert_eq!(a.samples.len(), 5000);
        for s in &a.samples {
            s.validate(&a.schema).unwrap();
        }
        assert!(generate_synthetic(&SyntheticSpec { n_samples: 9, ..spec }).is_err());
    }

    #[test]
    fn planted_rule_accuracy() {
        let data = generate_synthetic(&SyntheticSpec::criteo_shaped(5000, 1)).unwrap();
        let correct = data
            .samples
            .iter()
            .filter(|s| data.rule.predict(s) == s.label)
            .count();
        assert!(correct as f64 / 5000.0 > 0.85);
    }

    #[test]
    fn split_is_seeded_partition() {
        let data = generate_synthetic(&SyntheticSpec::criteo_shaped(100, 1)).unwrap();
        let (tr, te) = train_test_split(&data.samples, 0.8, 4).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let (tr2, _) = train_test_split(&data.samples, 0.8, 4).unwrap();
        assert_eq!(tr, tr2);
        assert!(train_test_split(&data.samples, 1.0, 4).is_err());
    }
}
