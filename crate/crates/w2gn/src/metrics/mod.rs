//! Ground-truth transport oracles and evaluation statistics.
//!
//! Wasserstein-2 quantities keep the 1/2 cost factor throughout: the squared
//! distance is the minimum of `E ||x - y||^2 / 2`, half of the convention most
//! OT references use. Correlations, the Gaussian closed forms and the
//! empirical matcher below all share it.

mod assignment;

pub use assignment::solve_min_cost;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("batches have different sizes: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("covariance is not positive definite (eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("batch too small: need at least {0} points")]
    BatchTooSmall(usize),
}

/// A multivariate Gaussian given by mean and covariance.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        let d = mean.len();
        let mut m = DMatrix::zeros(d, d);
        for (i, row) in cov.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        let spec = GaussianSpec { mean: DVector::from_vec(mean), cov: m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn standard(dim: usize) -> Self {
        GaussianSpec { mean: DVector::zeros(dim), cov: DMatrix::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let asym = (&self.cov - self.cov.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(MetricsError::NotSymmetric(asym));
        }
        let eigs = self.cov.clone().symmetric_eigenvalues();
        let min = eigs.min();
        if min <= 0.0 {
            return Err(MetricsError::NotPositiveDefinite(min));
        }
        Ok(())
    }
}

/// Optimal pairing of two equal-size batches with the re-evaluated cost.
#[derive(Debug, Clone)]
pub struct CouplingResult {
    pub assignment: Vec<usize>,
    pub cost: f64,
}

/// Exact empirical squared Wasserstein-2 between equal-size batches:
/// minimum of `(1/n) sum ||x_i - y_{pi(i)}||^2 / 2` over permutations.
pub fn empirical_w2(
    batch_x: &ArrayView2<f64>,
    batch_y: &ArrayView2<f64>,
) -> Result<CouplingResult, MetricsError> {
    let n = batch_x.nrows();
    if n != batch_y.nrows() {
        return Err(MetricsError::SizeMismatch(n, batch_y.nrows()));
    }
    let mut costs = vec![0.0; n * n];
    for i in 0..n {
        let xi = batch_x.row(i);
        for j in 0..n {
            let yj = batch_y.row(j);
            let d2: f64 = xi.iter().zip(yj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            costs[i * n + j] = 0.5 * d2;
        }
    }
    let (assignment, total) = solve_min_cost(&costs, n);
    Ok(CouplingResult { assignment, cost: total / n as f64 })
}

/// Symmetric PSD square root via eigendecomposition, with a small floor on
/// eigenvalues to absorb rounding.
fn sqrtm(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    let eig = m.clone().symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-9 {
            return Err(MetricsError::NotPositiveDefinite(*v));
        }
        *v = v.max(1e-12).sqrt();
    }
    let q = eig.eigenvectors;
    Ok(&q * DMatrix::from_diagonal(&vals) * q.transpose())
}

fn inv_sqrtm(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    let eig = m.clone().symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-9 {
            return Err(MetricsError::NotPositiveDefinite(*v));
        }
        *v = 1.0 / v.max(1e-12).sqrt();
    }
    let q = eig.eigenvectors;
    Ok(&q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Closed-form squared Wasserstein-2 between Gaussians (with the 1/2 factor):
/// `(||m1 - m2||^2 + tr(S1 + S2 - 2 (S2^{1/2} S1 S2^{1/2})^{1/2})) / 2`.
pub fn gaussian_w2(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64, MetricsError> {
    p.validate()?;
    q.validate()?;
    let dm = (&p.mean - &q.mean).norm_squared();
    let s2h = sqrtm(&q.cov)?;
    let inner = sqrtm(&(&s2h * &p.cov * &s2h))?;
    let tr = (p.cov.trace() + q.cov.trace() - 2.0 * inner.trace()).max(0.0);
    Ok(0.5 * (dm + tr))
}

/// Affine map `x -> shift + A (x - anchor)`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub a: DMatrix<f64>,
    pub anchor: DVector<f64>,
    pub shift: DVector<f64>,
}

impl AffineMap {
    pub fn apply_one(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        (&self.shift + &self.a * (xv - &self.anchor)).iter().copied().collect()
    }

    pub fn apply(&self, batch: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(batch.raw_dim());
        for (i, row) in batch.rows().into_iter().enumerate() {
            let y = self.apply_one(row.as_slice().unwrap());
            for (j, v) in y.into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        out
    }
}

/// The optimal transport map between Gaussians:
/// `T(x) = m2 + A (x - m1)`, `A = S1^{-1/2} (S1^{1/2} S2 S1^{1/2})^{1/2} S1^{-1/2}`.
/// A is symmetric PSD, so T is the gradient of a convex quadratic.
pub fn gaussian_optimal_map(p: &GaussianSpec, q: &GaussianSpec) -> Result<AffineMap, MetricsError> {
    p.validate()?;
    q.validate()?;
    let s1h = sqrtm(&p.cov)?;
    let s1ih = inv_sqrtm(&p.cov)?;
    let mid = sqrtm(&(&s1h * &q.cov * &s1h))?;
    let a = &s1ih * mid * &s1ih;
    Ok(AffineMap { a, anchor: p.mean.clone(), shift: q.mean.clone() })
}

/// Reference value of the cyclically monotone correlations between Gaussians:
/// `Const(P,Q) - W2^2(P,Q)` with `Const = (||m1||^2 + tr S1 + ||m2||^2 + tr S2) / 2`.
pub fn corr_reference(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64, MetricsError> {
    let konst = 0.5 * (p.mean.norm_squared() + p.cov.trace())
        + 0.5 * (q.mean.norm_squared() + q.cov.trace());
    Ok(konst - gaussian_w2(p, q)?)
}

fn dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Unbiased energy-distance estimate `2 E||X-Y|| - E||X-X'|| - E||Y-Y'||`.
/// Cross term averages all n*m pairs; within terms use off-diagonal pairs only.
pub fn energy_distance(
    batch_x: &ArrayView2<f64>,
    batch_y: &ArrayView2<f64>,
) -> Result<f64, MetricsError> {
    let n = batch_x.nrows();
    let m = batch_y.nrows();
    if n < 2 || m < 2 {
        return Err(MetricsError::BatchTooSmall(2));
    }
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            cross += dist(batch_x.row(i), batch_y.row(j));
        }
    }
    cross /= (n * m) as f64;
    let mut within_x = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            within_x += dist(batch_x.row(i), batch_x.row(j));
        }
    }
    within_x *= 2.0 / (n * (n - 1)) as f64;
    let mut within_y = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            within_y += dist(batch_y.row(i), batch_y.row(j));
        }
    }
    within_y *= 2.0 / (m * (m - 1)) as f64;
    Ok(2.0 * cross - within_x - within_y)
}

/// Fraction of sampled distinct pairs violating monotonicity:
/// `<g(x) - g(x'), x - x'> < -1e-9`. The map is applied to the batch once.
pub fn monotonicity_violation_rate<F>(
    map: F,
    batch: &ArrayView2<f64>,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> f64
where
    F: FnOnce(&ArrayView2<f64>) -> Array2<f64>,
{
    assert!(pairs >= 1);
    let n = batch.nrows();
    assert!(n >= 2, "need at least two points to form pairs");
    let mapped = map(batch);
    let mut violations = 0usize;
    for _ in 0..pairs {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut inner = 0.0;
        for k in 0..batch.ncols() {
            inner += (mapped[[i, k]] - mapped[[j, k]]) * (batch[[i, k]] - batch[[j, k]]);
        }
        if inner < -1e-9 {
            violations += 1;
        }
    }
    violations as f64 / pairs as f64
}

/// Monte-Carlo check of the transport inequality
/// `1/2 E||T1(x) - T2(x)||^2 >= W2^2(T1 o P, T2 o P)`.
/// Returns (lhs, rhs); the contract is `lhs >= rhs - 1e-9`.
pub fn transport_inequality_check<F, G>(
    map_a: F,
    map_b: G,
    batch: &ArrayView2<f64>,
) -> Result<(f64, f64), MetricsError>
where
    F: FnOnce(&ArrayView2<f64>) -> Array2<f64>,
    G: FnOnce(&ArrayView2<f64>) -> Array2<f64>,
{
    let ta = map_a(batch);
    let tb = map_b(batch);
    let n = batch.nrows() as f64;
    let lhs = 0.5 * ta.iter().zip(tb.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let rhs = empirical_w2(&ta.view(), &tb.view())?.cost;
    Ok((lhs, rhs))
}

/// Mean squared norm per point, `(1/n) sum ||x_i||^2`.
pub fn mean_sq_norm(batch: &ArrayView2<f64>) -> f64 {
    batch.iter().map(|v| v * v).sum::<f64>() / batch.nrows() as f64
}

/// Mean squared rowwise difference, `(1/n) sum ||a_i - b_i||^2`.
pub fn mean_sq_diff(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.nrows() as f64
}

/// Standard error of the mean of `values`.
pub fn standard_error(values: &Array1<f64>) -> f64 {
    let n = values.len() as f64;
    let mean = values.sum() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}
