//! Numerical kernels shared by the attacks, the covariance model and the
//! density detector.

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix data has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::usage("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Index of the maximum entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::numeric(format!(
            "{what}: non-finite entry {} at index {i}",
            v[i]
        ))),
        None => Ok(()),
    }
}

/// Sort-based soft-threshold level for projecting `|v|` onto
/// `{w >= 0, sum w = radius}`.
fn simplex_threshold(abs_sorted_desc: &[f64], radius: f64) -> f64 {
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in abs_sorted_desc.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    theta
}

/// Euclidean projection of `offset` onto the l1 ball of the given radius.
///
/// Exact: sorts the magnitudes once and soft-thresholds at the unique level
/// that lands on the sphere. Inputs already inside the ball are returned
/// unchanged.
pub fn project_l1_ball(offset: &[f64], radius: f64) -> Result<Vec<f64>> {
    check_finite(offset, "project_l1_ball")?;
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::numeric(format!(
            "project_l1_ball: radius must be positive and finite, got {radius}"
        )));
    }
    if l1_norm(offset) <= radius {
        return Ok(offset.to_vec());
    }
    let mut mags: Vec<f64> = offset.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let theta = simplex_threshold(&mags, radius);
    let mut w: Vec<f64> = offset
        .iter()
        .map(|&x| x.signum() * (x.abs() - theta).max(0.0))
        .collect();
    // Rounding in the cumulative sum can leave the result a few ulps outside.
    let norm = l1_norm(&w);
    if norm > radius {
        let scale = radius / norm;
        w.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(w)
}

/// Euclidean projection onto the probability simplex `{p >= 0, sum p = 1}`.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    check_finite(v, "project_simplex")?;
    if v.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    Ok(v.iter().map(|&x| (x - theta).max(0.0)).collect())
}

/// Maximizer of `v·g` over `||v||_1 <= step`.
///
/// With `k = 1` this is the exact maximizer `step·sign(g_j)·e_j` for the
/// largest `|g_j|` (lowest index on ties). With `k > 1` the step is spread
/// evenly over the `k` largest-magnitude coordinates. A zero gradient yields
/// a zero update.
pub fn l1_steepest_step(gradient: &[f64], step: f64, k: usize) -> Result<Vec<f64>> {
    check_finite(gradient, "l1_steepest_step")?;
    if !(step > 0.0) {
        return Err(Error::numeric(format!(
            "l1_steepest_step: step must be positive, got {step}"
        )));
    }
    if k == 0 {
        return Err(Error::usage("l1_steepest_step: k must be at least 1"));
    }
    let mut out = vec![0.0; gradient.len()];
    if gradient.iter().all(|&g| g == 0.0) {
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..gradient.len()).collect();
    // Stable sort keeps the lowest index first among equal magnitudes.
    order.sort_by(|&a, &b| gradient[b].abs().total_cmp(&gradient[a].abs()));
    let chosen: Vec<usize> = order
        .into_iter()
        .take(k)
        .filter(|&j| gradient[j] != 0.0)
        .collect();
    let share = step / chosen.len() as f64;
    for j in chosen {
        out[j] = share * gradient[j].signum();
    }
    Ok(out)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    out
}

/// `log(sum(exp(values)))` with max subtraction. Empty input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted descending; column `j` of `eigenvectors` pairs with
/// `eigenvalues[j]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SymmetricEigen {
    /// `V·diag(λ)·Vᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..n)
                    .map(|k| v[(i, k)] * self.eigenvalues[k] * v[(j, k)])
                    .sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// Cyclic Jacobi eigensolver.
///
/// The input is symmetrized as `(A + Aᵀ)/2`. Sweeps visit pairs `(p, q)`,
/// `p < q`, in row order, so the output is fully deterministic. Converged when
/// the largest off-diagonal magnitude drops below `1e-12·max|A|`.
pub fn sym_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::usage(format!(
            "sym_eigen: matrix must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::numeric("sym_eigen: non-finite matrix entry"));
    }
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    let mut v = Matrix::identity(n);
    let tol = JACOBI_REL_TOL * w.max_abs();

    let off_max = |w: &Matrix| {
        let mut m = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                m = m.max(w[(i, j)].abs());
            }
        }
        m
    };

    let mut sweeps = 0;
    loop {
        let off = off_max(&w);
        if off <= tol {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::numeric(format!(
                "sym_eigen: no convergence after {JACOBI_MAX_SWEEPS} sweeps, \
                 max off-diagonal residual {off:e}"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq.abs() <= tol * 1e-3 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (w[(k, p)], w[(k, q)]);
                    w[(k, p)] = c * akp - s * akq;
                    w[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (w[(p, k)], w[(q, k)]);
                    w[(p, k)] = c * apk - s * aqk;
                    w[(q, k)] = s * apk + c * aqk;
                }
                w[(p, q)] = 0.0;
                w[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(j, j)].total_cmp(&w[(i, i)]));
    let eigenvalues = order.iter().map(|&i| w[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force projection: scan the soft-threshold level and keep the
    /// feasible candidate closest to `v`.
    fn theta_scan_projection(v: &[f64], radius: f64) -> Vec<f64> {
        if l1_norm(v) <= radius {
            return v.to_vec();
        }
        let shrink = |theta: f64| -> Vec<f64> {
            v.iter()
                .map(|&x| x.signum() * (x.abs() - theta).max(0.0))
                .collect()
        };
        // l1 norm of the shrunk vector is decreasing in theta: bisect.
        let (mut lo, mut hi) = (0.0, v.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if l1_norm(&shrink(mid)) > radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        shrink(hi)
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_l1_ball(&[0.3, 0.1], 1.0).unwrap(), vec![0.3, 0.1]);
        assert_eq!(project_l1_ball(&[2.0, 0.0], 1.0).unwrap(), vec![1.0, 0.0]);
        let w = project_l1_ball(&[1.0, 1.0], 1.0).unwrap();
        let oracle = theta_scan_projection(&[1.0, 1.0], 1.0);
        for (a, b) in w.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn projection_rejects_bad_input() {
        assert!(matches!(
            project_l1_ball(&[f64::NAN], 1.0),
            Err(Error::Numeric(_))
        ));
        assert!(project_l1_ball(&[1.0], 0.0).is_err());
    }

    #[test]
    fn projection_matches_theta_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
            let r = rng.random_range(0.05..5.0);
            let w = project_l1_ball(&v, r).unwrap();
            let o = theta_scan_projection(&v, r);
            for (a, b) in w.iter().zip(&o) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.5, 0.5]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_simplex(&[2.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.3, 0.3, 0.3]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // invariant to constant shifts
        let q = project_simplex(&[5.3, 5.3, 5.3]).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn steepest_step_examples() {
        let v = l1_steepest_step(&[0.1, -0.5, 0.2], 0.3, 1).unwrap();
        assert_eq!(v, vec![0.0, -0.3, 0.0]);
        assert_eq!(
            l1_steepest_step(&[0.0, 0.0, 0.0], 0.3, 1).unwrap(),
            vec![0.0; 3]
        );
        // tie goes to the lowest index
        assert_eq!(
            l1_steepest_step(&[0.5, -0.5], 1.0, 1).unwrap(),
            vec![1.0, 0.0]
        );
        let spread = l1_steepest_step(&[0.1, -0.5, 0.2], 0.4, 2).unwrap();
        assert_eq!(spread, vec![0.0, -0.2, 0.2]);
    }

    #[test]
    fn steepest_step_dominates_signed_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in 1..=32 {
            let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v = l1_steepest_step(&g, 0.7, 1).unwrap();
            let best = dot(&v, &g);
            for i in 0..dim {
                for s in [-0.7, 0.7] {
                    assert!(best >= s * g[i]);
                }
            }
        }
    }

    #[test]
    fn softmax_and_lse() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(log_sum_exp(&[3.25]), 3.25);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        let x = [0.3, -1.2, 4.0, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 7.0).collect();
        for (a, b) in softmax(&x).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
        // no overflow for huge logits
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn eigen_examples() {
        let e = sym_eigen(&Matrix::identity(3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);

        let d = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let e = sym_eigen(&d).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(e.eigenvectors[(1, 0)].abs(), 1.0);
        assert_eq!(e.eigenvectors[(0, 1)].abs(), 1.0);

        let z = sym_eigen(&Matrix::zeros(4, 4)).unwrap();
        assert_eq!(z.eigenvalues, vec![0.0; 4]);
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = rng.random_range(-1.0..1.0);
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        a
    }

    #[test]
    fn eigen_reconstruction_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_symmetric(&mut rng, 8);
        let e = sym_eigen(&a).unwrap();
        let r = e.reconstruct();
        for i in 0..8 {
            for j in 0..8 {
                assert!((r[(i, j)] - a[(i, j)]).abs() < 1e-10);
            }
        }
        let vtv = e.eigenvectors.transpose().matmul(&e.eigenvectors);
        for i in 0..8 {
            for j in 0..8 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[(i, j)] - id).abs() < 1e-10);
            }
        }
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigen_matches_characteristic_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            // 2x2: closed-form roots.
            let a = random_symmetric(&mut rng, 2);
            let (p, q, r) = (a[(0, 0)], a[(0, 1)], a[(1, 1)]);
            let mid = 0.5 * (p + r);
            let rad = (0.25 * (p - r).powi(2) + q * q).sqrt();
            let e = sym_eigen(&a).unwrap();
            assert!((e.eigenvalues[0] - (mid + rad)).abs() < 1e-8);
            assert!((e.eigenvalues[1] - (mid - rad)).abs() < 1e-8);

            // 3x3: every eigenvalue is a root of det(A - λI).
            let b = random_symmetric(&mut rng, 3);
            let e = sym_eigen(&b).unwrap();
            let det3 = |m: &Matrix, l: f64| {
                let g = |i: usize, j: usize| m[(i, j)] - if i == j { l } else { 0.0 };
                g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1))
                    - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
                    + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0))
            };
            for &l in &e.eigenvalues {
                // |det| <= |dλ|·|p'(λ)|, so compare against a bisection root.
                let (mut lo, mut hi) = (l - 1e-4, l + 1e-4);
                let (flo, fhi) = (det3(&b, lo), det3(&b, hi));
                if flo.signum() == fhi.signum() {
                    // double root: residual itself must vanish
                    assert!(det3(&b, l).abs() < 1e-10);
                    continue;
                }
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if det3(&b, mid).signum() == flo.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                assert!((0.5 * (lo + hi) - l).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_fixed_on_feasible(
            v in proptest::collection::vec(-10.0f64..10.0, 1..16),
            r in 0.01f64..20.0,
        ) {
            let w = project_l1_ball(&v, r).unwrap();
            prop_assert!(l1_norm(&w) <= r + 1e-12);
            let again = project_l1_ball(&w, r).unwrap();
            if l1_norm(&w) <= r {
                prop_assert_eq!(&again, &w);
            }
        }

        #[test]
        fn softmax_sums_to_one(v in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let p = softmax(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
