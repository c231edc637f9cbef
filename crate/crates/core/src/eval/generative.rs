use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;

use crate::error::{Error, Result};

/// Mean and unbiased covariance of a feature sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::Precondition(format!(
                "Gaussian statistics need at least 2 samples, got {}",
                features.len()
            )));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::Geometry("features must share a nonzero dimension".into()));
        }
        let n = features.len();
        let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        symmetrize(&mut cov);
        Ok(Self { mean, cov, count: n })
    }

    /// Builds stats from given moments, checking shape and symmetry.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Geometry("covariance shape does not match mean".into()));
        }
        if (&cov - cov.transpose()).abs().max() > 1e-8 {
            return Err(Error::Precondition("covariance is not symmetric".into()));
        }
        if count < 2 {
            return Err(Error::Precondition("Gaussian statistics need count >= 2".into()));
        }
        Ok(Self { mean, cov, count })
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
}

fn clipped(lambda: f64, scale: f64) -> f64 {
    if lambda < -1e-8 * scale.max(1.0) {
        log::warn!("clipping eigenvalue {lambda:e} of a matrix expected to be PSD");
    }
    lambda.max(0.0)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.amax();
    let roots = eig.eigenvalues.map(|l| clipped(l, scale).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance `|mu_a-mu_b|^2 + tr(C_a + C_b - 2 (C_a C_b)^{1/2})`.
///
/// The cross term uses `tr((C_a C_b)^{1/2}) = tr((sqrt(C_a) C_b sqrt(C_a))^{1/2})`
/// so only symmetric eigendecompositions are needed.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::Geometry("FID statistics differ in dimension".into()));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let sa = psd_sqrt(&a.cov);
    let mut inner = &sa * &b.cov * &sa;
    symmetrize(&mut inner);
    let eig = SymmetricEigen::new(inner);
    let scale = eig.eigenvalues.amax();
    let cross: f64 = eig.eigenvalues.iter().map(|&l| clipped(l, scale).sqrt()).sum();
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}

/// Inception Score over `splits` contiguous chunks of the probability rows;
/// returns the mean and population standard deviation across chunks.
pub fn inception_score(probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    if probs.is_empty() || splits == 0 || splits > probs.len() {
        return Err(Error::Precondition(format!(
            "inception score needs 1 <= splits <= rows ({} rows, {splits} splits)",
            probs.len()
        )));
    }
    let k = probs[0].len();
    if probs.iter().any(|p| p.len() != k) {
        return Err(Error::Geometry("probability rows differ in length".into()));
    }
    let n = probs.len();
    let scores: Vec<f64> = (0..splits)
        .map(|s| {
            let chunk = &probs[s * n / splits..(s + 1) * n / splits];
            let m = chunk.len() as f64;
            let marginal: Vec<f64> = (0..k).map(|j| chunk.iter().map(|p| p[j]).sum::<f64>() / m).collect();
            let kl: f64 = chunk
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(&marginal)
                        .filter(|(&pj, _)| pj > 0.0)
                        .map(|(&pj, &qj)| pj * (pj / qj).ln())
                        .sum::<f64>()
                })
                .sum::<f64>()
                / m;
            kl.exp()
        })
        .collect();
    Ok(mean_std(&scores))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn to_matrix(f: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(f.len(), f[0].len(), |i, j| f[i][j])
}

/// Unbiased MMD² with kernel `(x·y/D + 1)^3`.
pub fn mmd2_unbiased(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Precondition("unbiased MMD needs at least 2 samples per side".into()));
    }
    let d = x[0].len();
    if x.iter().chain(y).any(|v| v.len() != d) {
        return Err(Error::Geometry("KID features differ in dimension".into()));
    }
    let (xm, ym) = (to_matrix(x), to_matrix(y));
    let kernel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a * b.transpose()).map(|v| (v / d as f64 + 1.0).powi(3));
    let (kxx, kyy, kxy) = (kernel(&xm, &xm), kernel(&ym, &ym), kernel(&xm, &ym));
    let (m, n) = (x.len() as f64, y.len() as f64);
    let off_diag = |k: &DMatrix<f64>| k.sum() - k.trace();
    Ok(off_diag(&kxx) / (m * (m - 1.0)) + off_diag(&kyy) / (n * (n - 1.0)) - 2.0 * kxy.sum() / (m * n))
}

/// Kernel Inception Distance: unbiased MMD² averaged over `subsets` random
/// subsets of `subset_size` drawn without replacement from each side.
/// Returns mean and population standard deviation.
pub fn kid(a: &[Vec<f64>], b: &[Vec<f64>], subset_size: usize, subsets: usize, seed: u64) -> Result<(f64, f64)> {
    if subsets == 0 {
        return Err(Error::Config("KID needs at least one subset".into()));
    }
    let m = subset_size.min(a.len()).min(b.len());
    if m < 2 {
        return Err(Error::Precondition("KID needs at least 2 samples per side".into()));
    }
    let mut rng = crate::seeded_rng(seed);
    let mut values = Vec::with_capacity(subsets);
    for _ in 0..subsets {
        let xa: Vec<Vec<f64>> = sample(&mut rng, a.len(), m).iter().map(|i| a[i].clone()).collect();
        let xb: Vec<Vec<f64>> = sample(&mut rng, b.len(), m).iter().map(|i| b[i].clone()).collect();
        values.push(mmd2_unbiased(&xa, &xb)?);
    }
    Ok(mean_std(&values))
}
