//! Kernel density detector over encoded clean data.
//!
//! A product Gaussian kernel with per-dimension Scott bandwidths is placed on
//! a seeded subsample of the training rows. Samples whose log-likelihood is
//! strictly below the 10th percentile of clean calibration scores are flagged.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;

pub const DEFAULT_REFERENCE_CAP: usize = 2000;
pub const BANDWIDTH_FLOOR: f64 = 1e-3;
pub const FLAG_PERCENTILE: f64 = 10.0;
pub const MIN_CALIBRATION_SAMPLES: usize = 10;

const MAGIC: &[u8; 4] = b"MXKD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    /// Row-major `M × D`.
    reference: Vec<f64>,
    num_reference: usize,
    dim: usize,
    bandwidths: Vec<f64>,
    threshold: Option<f64>,
    /// `−Σ_j ln h_j − (D/2)·ln 2π − ln M`.
    log_norm: f64,
}

fn log_normalizer(bandwidths: &[f64], m: usize) -> f64 {
    let d = bandwidths.len() as f64;
    -bandwidths.iter().map(|h| h.ln()).sum::<f64>()
        - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
        - (m as f64).ln()
}

impl KdeModel {
    /// Builds a detector from explicit reference rows and bandwidths.
    pub fn from_parts(reference: &[Vec<f64>], bandwidths: Vec<f64>, threshold: Option<f64>) -> Result<Self> {
        let m = reference.len();
        if m == 0 {
            return Err(Error::usage("KDE needs at least one reference point"));
        }
        let dim = bandwidths.len();
        if reference.iter().any(|r| r.len() != dim) {
            return Err(Error::usage("reference rows and bandwidths differ in width"));
        }
        if bandwidths.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::usage("bandwidths must be finite and > 0"));
        }
        if threshold.is_some_and(|t| !t.is_finite()) {
            return Err(Error::usage("threshold must be finite"));
        }
        Ok(KdeModel {
            reference: reference.iter().flatten().copied().collect(),
            num_reference: m,
            dim,
            log_norm: log_normalizer(&bandwidths, m),
            bandwidths,
            threshold,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_reference(&self) -> usize {
        self.num_reference
    }

    pub fn reference_point(&self, m: usize) -> &[f64] {
        &self.reference[m * self.dim..(m + 1) * self.dim]
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    /// `log[(1/M)·Σ_m Π_j N(x_j; ref_mj, h_j)]`.
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "query width");
        let terms: Vec<f64> = (0..self.num_reference)
            .map(|m| {
                -0.5 * self
                    .reference_point(m)
                    .iter()
                    .zip(x)
                    .zip(&self.bandwidths)
                    .map(|((r, v), h)| {
                        let z = (v - r) / h;
                        z * z
                    })
                    .sum::<f64>()
            })
            .collect();
        log_sum_exp(&terms) + self.log_norm
    }

    /// Sets the threshold to the 10th percentile of `clean` log-likelihoods.
    pub fn calibrate_threshold(mut self, clean: &[Vec<f64>]) -> Result<Self> {
        if clean.len() < MIN_CALIBRATION_SAMPLES {
            return Err(Error::usage(format!(
                "calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {}",
                clean.len()
            )));
        }
        let scores: Vec<f64> = clean.iter().map(|x| self.log_likelihood(x)).collect();
        let t = percentile(&scores, FLAG_PERCENTILE);
        if !t.is_finite() {
            return Err(Error::numeric("calibration threshold is not finite"));
        }
        self.threshold = Some(t);
        Ok(self)
    }

    /// `log_likelihood(x) < threshold`.
    pub fn is_flagged(&self, x: &[f64]) -> Result<bool> {
        let t = self
            .threshold
            .ok_or_else(|| Error::usage("KDE detector is not calibrated"))?;
        Ok(self.log_likelihood(x) < t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u64(self.num_reference as u64);
        w.u64(self.dim as u64);
        w.f64s(&self.bandwidths);
        w.f64(self.threshold.unwrap_or(f64::NAN));
        w.f64s(&self.reference);
        w.finish(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = Reader::open(path, MAGIC, VERSION)?;
        let m = r.usize("reference count")?;
        let d = r.usize("dimension")?;
        let bandwidths = r.f64s(d)?;
        let t = r.f64()?;
        let flat = r.f64s(m.checked_mul(d).ok_or_else(|| Error::format(path, "size overflow"))?)?;
        r.finish()?;
        let rows: Vec<Vec<f64>> = flat.chunks(d.max(1)).map(<[f64]>::to_vec).collect();
        let rows = if d == 0 { vec![Vec::new(); m] } else { rows };
        let threshold = if t.is_nan() { None } else { Some(t) };
        KdeModel::from_parts(&rows, bandwidths, threshold).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = pct / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

/// Fits an uncalibrated detector on a seeded subsample of at most `cap` rows.
pub fn fit_kde(train: &[Vec<f64>], cap: usize, seed: u64) -> Result<KdeModel> {
    if train.len() < 2 {
        return Err(Error::usage("KDE needs at least 2 training points"));
    }
    if cap == 0 {
        return Err(Error::usage("reference cap must be >= 1"));
    }
    let dim = train[0].len();
    if train.iter().any(|r| r.len() != dim) {
        return Err(Error::usage("training rows differ in width"));
    }
    if train.iter().all(|r| r == &train[0]) {
        return Err(Error::usage("KDE training data is degenerate (all rows identical)"));
    }
    let m = cap.min(train.len());
    let reference: Vec<Vec<f64>> = if m == train.len() {
        train.to_vec()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, train.len(), m).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| train[i].clone()).collect()
    };
    let scale = (m as f64).powf(-1.0 / (dim as f64 + 4.0));
    let bandwidths = (0..dim)
        .map(|j| {
            let mean = reference.iter().map(|r| r[j]).sum::<f64>() / m as f64;
            let var = if m > 1 {
                reference.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (m - 1) as f64
            } else {
                0.0
            };
            (var.sqrt() * scale).max(BANDWIDTH_FLOOR)
        })
        .collect();
    KdeModel::from_parts(&reference, bandwidths, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn naive_ll(kde: &KdeModel, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for m in 0..kde.num_reference() {
            let mut p = 1.0;
            for ((r, v), h) in kde.reference_point(m).iter().zip(x).zip(kde.bandwidths()) {
                let z = (v - r) / h;
                p *= (-0.5 * z * z).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
            }
            total += p;
        }
        (total / kde.num_reference() as f64).ln()
    }

    #[test]
    fn kernel_center_value() {
        let kde = KdeModel::from_parts(&[vec![0.0]], vec![1.0], None).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((kde.log_likelihood(&[0.0]) - expected).abs() < 1e-15);

        let kde3 = KdeModel::from_parts(&[vec![1.0, 2.0, 3.0]], vec![1.0; 3], None).unwrap();
        assert!((kde3.log_likelihood(&[1.0, 2.0, 3.0]) - 3.0 * expected).abs() < 1e-14);
    }

    #[test]
    fn decays_away_from_reference() {
        let kde = KdeModel::from_parts(&[vec![0.5, -0.5]], vec![0.7, 1.3], None).unwrap();
        for axis in 0..2 {
            let mut prev = kde.log_likelihood(&[0.5, -0.5]);
            for k in 1..20 {
                let mut x = vec![0.5, -0.5];
                x[axis] += 0.25 * k as f64;
                let ll = kde.log_likelihood(&x);
                assert!(ll < prev);
                prev = ll;
            }
        }
    }

    #[test]
    fn matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let kde = fit_kde(&rows, 2000, 1).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!((kde.log_likelihood(&x) - naive_ll(&kde, &x)).abs() < 1e-10);
        }
    }

    #[test]
    fn far_queries_stay_finite() {
        let kde = KdeModel::from_parts(&[vec![0.0], vec![1.0]], vec![0.01], None).unwrap();
        assert!(kde.log_likelihood(&[1e6]).is_finite());
    }

    #[test]
    fn standard_normal_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let train: Vec<Vec<f64>> = (0..2000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let kde = fit_kde(&train, 2000, 0).unwrap();
        let held: Vec<f64> = (0..4000)
            .map(|_| kde.log_likelihood(&[StandardNormal.sample(&mut rng)]))
            .collect();
        let mean = held.iter().sum::<f64>() / held.len() as f64;
        let analytic = -0.5 * ((2.0 * std::f64::consts::PI).ln() + 1.0);
        assert!((mean - analytic).abs() < 0.1, "{mean} vs {analytic}");
    }

    #[test]
    fn subsample_is_seeded() {
        let train: Vec<Vec<f64>> = (0..500).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let a = fit_kde(&train, 50, 4).unwrap();
        let b = fit_kde(&train, 50, 4).unwrap();
        let c = fit_kde(&train, 50, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.num_reference(), 50);
    }

    #[test]
    fn degenerate_and_tiny_inputs() {
        assert!(fit_kde(&[vec![1.0, 2.0]], 10, 0).is_err());
        assert!(matches!(
            fit_kde(&[vec![1.0, 2.0], vec![1.0, 2.0]], 10, 0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn percentile_matches_linear_interpolation() {
        let v: Vec<f64> = (1..=11).map(f64::from).collect();
        assert_eq!(percentile(&v, 10.0), 2.0);
        assert!((percentile(&[4.0, 1.0, 3.0, 2.0], 10.0) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn calibration_flags_about_ten_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let train: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let clean: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)]).collect();
        let kde = fit_kde(&train, 2000, 0).unwrap();
        assert!(matches!(kde.is_flagged(&clean[0]), Err(Error::Usage(_))));
        let kde = kde.calibrate_threshold(&clean).unwrap();
        let flagged = clean.iter().filter(|x| kde.is_flagged(x).unwrap()).count();
        assert!((19..=21).contains(&flagged), "{flagged}");

        let t = kde.threshold().unwrap();
        let mut more = clean.clone();
        more.push(vec![50.0, 50.0]);
        let t2 = kde.clone().calibrate_threshold(&more).unwrap().threshold().unwrap();
        assert!(t2 <= t);
        assert!(kde.clone().calibrate_threshold(&clean[..9]).is_err());
    }

    #[test]
    fn threshold_boundary_is_not_flagged() {
        let kde = KdeModel::from_parts(&[vec![0.0]], vec![1.0], None).unwrap();
        let ll = kde.log_likelihood(&[0.3]);
        let kde = KdeModel::from_parts(&[vec![0.0]], vec![1.0], Some(ll)).unwrap();
        assert!(!kde.is_flagged(&[0.3]).unwrap());
        assert!(kde.is_flagged(&[0.31]).unwrap());
    }

    #[test]
    fn translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let train: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(0.0..3.0)]).collect();
        let shift = [3.5, -2.0];
        let shifted: Vec<Vec<f64>> = train.iter().map(|r| vec![r[0] + shift[0], r[1] + shift[1]]).collect();
        let a = fit_kde(&train, 2000, 0).unwrap();
        let b = fit_kde(&shifted, 2000, 0).unwrap();
        let x = [0.2, 1.1];
        assert!((a.log_likelihood(&x) - b.log_likelihood(&[x[0] + shift[0], x[1] + shift[1]])).abs() < 1e-9);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kde.bin");
        let train: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1, (i % 3) as f64]).collect();
        let kde = fit_kde(&train, 20, 2).unwrap();
        kde.save(&path).unwrap();
        assert_eq!(KdeModel::load(&path).unwrap(), kde);
        let kde = kde.calibrate_threshold(&train).unwrap();
        kde.save(&path).unwrap();
        assert_eq!(KdeModel::load(&path).unwrap(), kde);
        std::fs::write(&path, b"MXKD").unwrap();
        assert!(matches!(KdeModel::load(&path), Err(Error::Format { .. })));
    }
}
