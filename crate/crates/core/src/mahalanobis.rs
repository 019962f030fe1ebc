//! Generalized covariance of encoded mixed-type data and the mixed
//! Mahalanobis distance.
//!
//! The covariance is the plain centered cross-product `X̃ᵀX̃/(N−1)` over the
//! encoded matrix (standardized numerics and one-hot columns side by side).
//! One-hot blocks make it singular, so the distance uses a pseudo-inverse
//! built from the eigenpairs whose eigenvalue exceeds `1e-6·λ_max`.
//!
//! [`closed_form_entry`] evaluates the per-case count formulas for a single
//! entry. Both mixed cases, as usually printed, carry the opposite sign of the
//! centered cross-product; they are kept as an independent magnitude check
//! and are not used by the distance.

use std::path::Path;

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::{dot, sym_eigen, Matrix, SymmetricEigen};

const MAGIC: &[u8; 4] = b"MXCV";
const VERSION: u32 = 1;

pub const DEFAULT_REL_EIGEN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceOptions {
    /// Eigenvalues `<= rel_tol·λ_max` are dropped from the pseudo-inverse.
    pub rel_tol: f64,
    /// Optional cap on the retained rank `m`.
    pub max_rank: Option<usize>,
}

impl Default for CovarianceOptions {
    fn default() -> Self {
        CovarianceOptions {
            rel_tol: DEFAULT_REL_EIGEN_TOL,
            max_rank: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneralizedCovariance {
    sigma: Matrix,
    means: Vec<f64>,
    eigen: SymmetricEigen,
    rank: usize,
    pseudo_inverse: Matrix,
}

impl GeneralizedCovariance {
    /// Fits on clean encoded rows (`N >= 2`).
    pub fn fit(rows: &[Vec<f64>], opts: CovarianceOptions) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::usage(format!(
                "covariance needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::usage("covariance rows have inconsistent widths"));
        }
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for r in rows {
            for (m, x) in means.iter_mut().zip(r) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut sigma = Matrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for r in rows {
            for ((c, x), m) in centered.iter_mut().zip(r).zip(&means) {
                *c = x - m;
            }
            for i in 0..d {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                let row = sigma.row_mut(i);
                for j in i..d {
                    row[j] += ci * centered[j];
                }
            }
        }
        let denom = n - 1.0;
        for i in 0..d {
            for j in i..d {
                let v = sigma[(i, j)] / denom;
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
        Self::from_sigma(sigma, means, opts)
    }

    /// Builds the pseudo-inverse for a given covariance matrix and center.
    pub fn from_sigma(sigma: Matrix, means: Vec<f64>, opts: CovarianceOptions) -> Result<Self> {
        if sigma.rows() != sigma.cols() || sigma.rows() != means.len() {
            return Err(Error::usage("sigma must be square and match the mean vector"));
        }
        let eigen = sym_eigen(&sigma)?;
        let rank = retained_rank(&eigen.eigenvalues, opts);
        let pseudo_inverse = truncated_inverse(&eigen, rank);
        Ok(GeneralizedCovariance {
            sigma,
            means,
            eigen,
            rank,
            pseudo_inverse,
        })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn eigen(&self) -> &SymmetricEigen {
        &self.eigen
    }

    /// Number of retained eigenpairs `m`.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn pseudo_inverse(&self) -> &Matrix {
        &self.pseudo_inverse
    }

    /// Quadratic form `dᵀ·P·d` and its gradient `2·P·d`.
    fn quad_form(&self, diff: &[f64]) -> (f64, Vec<f64>) {
        let pd = self.pseudo_inverse.mul_vec(diff);
        let value = dot(diff, &pd);
        let grad = pd.into_iter().map(|v| 2.0 * v).collect();
        (value, grad)
    }

    /// Mixed Mahalanobis distance `(x′−x)ᵀ·Σ⁺·(x′−x)` and its gradient with
    /// respect to `x′`. Relaxed one-hot blocks are allowed in `x′`.
    pub fn m_distance(&self, x_prime: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
        let diff: Vec<f64> = x_prime.iter().zip(x).map(|(a, b)| a - b).collect();
        self.quad_form(&diff)
    }

    pub fn m_distance_value(&self, x_prime: &[f64], x: &[f64]) -> f64 {
        self.m_distance(x_prime, x).0
    }

    /// Distance of a sample from the column means, `(x−μ)ᵀ·Σ⁺·(x−μ)`.
    pub fn population_distance(&self, x: &[f64]) -> f64 {
        self.m_distance(x, &self.means).0
    }

    /// Binary layout: magic `MXCV`, `u32` version, `u64` dim and rank, then
    /// `f64` arrays means, sigma (row-major), eigenvalues, eigenvectors
    /// (row-major, column `j` pairs with eigenvalue `j`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u64(self.dim() as u64);
        w.u64(self.rank as u64);
        w.f64s(&self.means);
        w.f64s(self.sigma.as_slice());
        w.f64s(&self.eigen.eigenvalues);
        w.f64s(self.eigen.eigenvectors.as_slice());
        w.finish(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = Reader::open(path, MAGIC, VERSION)?;
        let d = r.usize("dimension")?;
        let rank = r.usize("rank")?;
        if rank > d {
            return Err(Error::format(path, format!("rank {rank} exceeds dimension {d}")));
        }
        let means = r.f64s(d)?;
        let sigma = Matrix::from_row_major(d, d, r.f64s(d * d)?)?;
        let eigenvalues = r.f64s(d)?;
        let eigenvectors = Matrix::from_row_major(d, d, r.f64s(d * d)?)?;
        r.finish()?;
        let eigen = SymmetricEigen {
            eigenvalues,
            eigenvectors,
        };
        let pseudo_inverse = truncated_inverse(&eigen, rank);
        Ok(GeneralizedCovariance {
            sigma,
            means,
            eigen,
            rank,
            pseudo_inverse,
        })
    }
}

fn retained_rank(eigenvalues: &[f64], opts: CovarianceOptions) -> usize {
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    let cutoff = opts.rel_tol * top;
    let m = eigenvalues.iter().take_while(|&&l| l > cutoff).count();
    opts.max_rank.map_or(m, |cap| m.min(cap))
}

fn truncated_inverse(eigen: &SymmetricEigen, rank: usize) -> Matrix {
    let d = eigen.eigenvalues.len();
    let v = &eigen.eigenvectors;
    let inv: Vec<f64> = eigen.eigenvalues[..rank].iter().map(|l| 1.0 / l).collect();
    let mut p = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let s: f64 = (0..rank).map(|k| v[(i, k)] * inv[k] * v[(j, k)]).sum();
            p[(i, j)] = s;
            p[(j, i)] = s;
        }
    }
    p
}

/// Inputs for one entry of the generalized covariance, by feature-type pair.
#[derive(Debug, Clone, Copy)]
pub enum CovarianceCase<'a> {
    /// Two numerical columns.
    NumNum { xi: &'a [f64], xj: &'a [f64] },
    /// Numerical column vs one one-hot column: group sizes and numerical
    /// means for rows whose one-hot column is 0 and 1.
    NumCat {
        n0: usize,
        n1: usize,
        mean0: f64,
        mean1: f64,
    },
    /// Two one-hot columns: `n_ab` counts rows with column i = a and
    /// column j = b.
    CatCat {
        n00: usize,
        n01: usize,
        n10: usize,
        n11: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormEntry {
    pub value: f64,
    /// Set when a category group is empty and the entry is reported as 0.
    pub degenerate: bool,
}

/// Evaluates the count-based entry formulas:
///
/// - num-num: sample covariance `cov(X[i], X[j])`;
/// - num-cat: `N₀N₁/(N(N−1))·(X̄₀ − X̄₁)`;
/// - cat-cat: `(N₁₀N₀₁ − N₀₀N₁₁)/(N(N−1))`.
///
/// The two mixed cases equal the negated centered cross-product entry.
pub fn closed_form_entry(case: CovarianceCase<'_>) -> ClosedFormEntry {
    match case {
        CovarianceCase::NumNum { xi, xj } => {
            let n = xi.len().min(xj.len());
            if n < 2 {
                return ClosedFormEntry {
                    value: 0.0,
                    degenerate: true,
                };
            }
            let mi = xi[..n].iter().sum::<f64>() / n as f64;
            let mj = xj[..n].iter().sum::<f64>() / n as f64;
            let s: f64 = xi[..n].iter().zip(&xj[..n]).map(|(a, b)| (a - mi) * (b - mj)).sum();
            ClosedFormEntry {
                value: s / (n as f64 - 1.0),
                degenerate: false,
            }
        }
        CovarianceCase::NumCat { n0, n1, mean0, mean1 } => {
            let n = (n0 + n1) as f64;
            if n0 == 0 || n1 == 0 || n < 2.0 {
                return ClosedFormEntry {
                    value: 0.0,
                    degenerate: true,
                };
            }
            ClosedFormEntry {
                value: (n0 as f64 * n1 as f64) / (n * (n - 1.0)) * (mean0 - mean1),
                degenerate: false,
            }
        }
        CovarianceCase::CatCat { n00, n01, n10, n11 } => {
            let n = (n00 + n01 + n10 + n11) as f64;
            let col_i_constant = n00 + n01 == 0 || n10 + n11 == 0;
            let col_j_constant = n00 + n10 == 0 || n01 + n11 == 0;
            if n < 2.0 || col_i_constant || col_j_constant {
                return ClosedFormEntry {
                    value: 0.0,
                    degenerate: true,
                };
            }
            let num = n10 as f64 * n01 as f64 - n00 as f64 * n11 as f64;
            ClosedFormEntry {
                value: num / (n * (n - 1.0)),
                degenerate: false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_numeric_column_variance() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let cov = GeneralizedCovariance::fit(&rows, CovarianceOptions::default()).unwrap();
        assert_eq!(cov.sigma()[(0, 0)], 1.0);
        assert_eq!(cov.rank(), 1);
        assert!(GeneralizedCovariance::fit(&rows[..1], CovarianceOptions::default()).is_err());
    }

    #[test]
    fn numeric_vs_binary_category_entry() {
        // num=[1,2,3], cat=[0,0,1] encoded as one-hot columns [c0, c1]
        let rows = vec![
            vec![1.0, 1.0, 0.0],
            vec![2.0, 1.0, 0.0],
            vec![3.0, 0.0, 1.0],
        ];
        let cov = GeneralizedCovariance::fit(&rows, CovarianceOptions::default()).unwrap();
        assert!((cov.sigma()[(0, 2)] - 0.5).abs() < 1e-15);
        let cf = closed_form_entry(CovarianceCase::NumCat {
            n0: 2,
            n1: 1,
            mean0: 1.5,
            mean1: 3.0,
        });
        assert!((cf.value + 0.5).abs() < 1e-15);
        assert!(!cf.degenerate);
        // one-hot block loses one rank degree
        assert!(cov.rank() <= 2);
    }

    #[test]
    fn closed_form_cases() {
        let x = [1.0, 2.0, 3.0];
        let v = closed_form_entry(CovarianceCase::NumNum { xi: &x, xj: &x });
        assert_eq!(v.value, 1.0);
        let v = closed_form_entry(CovarianceCase::CatCat {
            n00: 0,
            n01: 1,
            n10: 1,
            n11: 0,
        });
        assert_eq!(v.value, 0.5);
        // direct cross-product of columns [1,0] and [0,1]
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let cov = GeneralizedCovariance::fit(&rows, CovarianceOptions::default()).unwrap();
        assert_eq!(cov.sigma()[(0, 1)], -0.5);

        let d = closed_form_entry(CovarianceCase::NumCat {
            n0: 3,
            n1: 0,
            mean0: 1.0,
            mean1: f64::NAN,
        });
        assert_eq!(d, ClosedFormEntry { value: 0.0, degenerate: true });
    }

    #[test]
    fn identity_metric_is_squared_euclidean() {
        let cov = GeneralizedCovariance::from_sigma(
            Matrix::identity(3),
            vec![0.0; 3],
            CovarianceOptions::default(),
        )
        .unwrap();
        let (d, g) = cov.m_distance(&[1.0, 2.0, -1.0], &[0.0, 0.0, 1.0]);
        assert!((d - 9.0).abs() < 1e-12);
        assert_eq!(g, vec![2.0, 4.0, -4.0]);
        let (d0, g0) = cov.m_distance(&[0.3, 0.1, 0.2], &[0.3, 0.1, 0.2]);
        assert_eq!(d0, 0.0);
        assert!(g0.iter().all(|&v| v == 0.0));
        let mu = [0.0; 3];
        let dir = [0.5, -0.2, 1.0];
        let p1: Vec<f64> = dir.iter().map(|v| v * 1.0).collect();
        let p2: Vec<f64> = dir.iter().map(|v| v * 2.0).collect();
        assert_eq!(cov.population_distance(&mu), 0.0);
        assert!((cov.population_distance(&p2) - 4.0 * cov.population_distance(&p1)).abs() < 1e-12);
    }

    #[test]
    fn rank_cap_is_honored() {
        let opts = CovarianceOptions {
            max_rank: Some(1),
            ..Default::default()
        };
        let cov = GeneralizedCovariance::from_sigma(Matrix::identity(3), vec![0.0; 3], opts).unwrap();
        assert_eq!(cov.rank(), 1);
    }
}
