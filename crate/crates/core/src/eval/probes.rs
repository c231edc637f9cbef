use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbeConfig {
    /// L2 regularization strength; the per-sample cost is `1/(lambda*n)`.
    pub lambda: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            max_epochs: 1000,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

fn check_aligned(points: &[Vec<f64>], labels: &[usize], what: &str) -> Result<usize> {
    if points.len() != labels.len() {
        return Err(Error::Precondition(format!("{what}: points and labels differ in length")));
    }
    if points.is_empty() {
        return Err(Error::Precondition(format!("{what}: no points")));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Geometry(format!("{what}: points differ in dimension")));
    }
    Ok(dim)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear max-margin classifier: one binary hinge-loss SVM per class,
/// trained by dual coordinate descent on standardized features with a bias
/// feature appended.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    classes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl LinearSvm {
    pub fn fit(points: &[Vec<f64>], labels: &[usize], config: &LinearProbeConfig) -> Result<Self> {
        let dim = check_aligned(points, labels, "linear probe")?;
        let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if classes.len() < 2 {
            return Err(Error::Precondition("linear probe needs at least two classes in training data".into()));
        }
        if !(config.lambda > 0.0) {
            return Err(Error::Config("linear probe lambda must be > 0".into()));
        }
        let n = points.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..dim)
            .map(|j| {
                let var = points.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 }
            })
            .collect();
        let xs: Vec<Vec<f64>> = points.iter().map(|p| standardize(p, &mean, &scale)).collect();
        let c = 1.0 / (config.lambda * n);
        let weights = classes
            .iter()
            .enumerate()
            .map(|(ci, &class)| {
                let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
                let seed = crate::derive_seed(config.seed, "svm-class", ci as u64);
                dual_cd(&xs, &y, c, config, seed)
            })
            .collect();
        Ok(Self {
            classes,
            weights,
            mean,
            scale,
        })
    }

    pub fn decision(&self, point: &[f64]) -> Vec<f64> {
        let x = standardize(point, &self.mean, &self.scale);
        self.weights.iter().map(|w| dot(w, &x)).collect()
    }

    pub fn predict(&self, point: &[f64]) -> usize {
        let scores = self.decision(point);
        let best = scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc })
            .0;
        self.classes[best]
    }
}

fn standardize(p: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    let mut x: Vec<f64> = p.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) * s).collect();
    x.push(1.0);
    x
}

// L1-loss SVM dual: min 1/2 a'Qa - e'a, 0 <= a_i <= C
fn dual_cd(xs: &[Vec<f64>], y: &[f64], c: f64, config: &LinearProbeConfig, seed: u64) -> Vec<f64> {
    let n = xs.len();
    let mut w = vec![0.0; xs[0].len()];
    let mut alpha = vec![0.0; n];
    let qii: Vec<f64> = xs.iter().map(|x| dot(x, x)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::seeded_rng(seed);
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            if qii[i] <= 0.0 {
                continue;
            }
            let g = y[i] * dot(&w, &xs[i]) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * y[i];
                for (wj, xj) in w.iter_mut().zip(&xs[i]) {
                    *wj += step * xj;
                }
            }
        }
        if pg_max - pg_min <= config.tolerance {
            break;
        }
    }
    w
}

fn accuracy(pred: impl Iterator<Item = usize>, labels: &[usize]) -> f64 {
    let correct = pred.zip(labels).filter(|(p, l)| p == *l).count();
    correct as f64 / labels.len() as f64
}

/// Test accuracy of a linear SVM trained on frozen embeddings.
pub fn linear_probe_accuracy(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
    config: &LinearProbeConfig,
) -> Result<f64> {
    let svm = LinearSvm::fit(train, train_labels, config)?;
    let dim = check_aligned(test, test_labels, "linear probe test")?;
    if dim != train[0].len() {
        return Err(Error::Geometry("train and test embeddings differ in dimension".into()));
    }
    Ok(accuracy(test.iter().map(|p| svm.predict(p)), test_labels))
}

/// Majority vote over the `k` nearest training points (Euclidean). Among
/// tied labels the one held by the nearer neighbour wins.
pub fn knn_predict(train: &[Vec<f64>], train_labels: &[usize], query: &[f64], k: usize) -> usize {
    let mut dists: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    let k = k.clamp(1, dists.len());
    dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut nearest = dists[..k].to_vec();
    nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut counts: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for &(_, i) in &nearest {
        *counts.entry(train_labels[i]).or_default() += 1;
    }
    let top = *counts.values().max().expect("k >= 1");
    nearest
        .iter()
        .map(|&(_, i)| train_labels[i])
        .find(|l| counts[l] == top)
        .expect("a label reaches the top count")
}

pub fn knn_accuracy(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
    k: usize,
) -> Result<f64> {
    let dim = check_aligned(train, train_labels, "kNN train")?;
    if check_aligned(test, test_labels, "kNN test")? != dim {
        return Err(Error::Geometry("train and test embeddings differ in dimension".into()));
    }
    if k == 0 {
        return Err(Error::Config("kNN k must be positive".into()));
    }
    Ok(accuracy(test.iter().map(|q| knn_predict(train, train_labels, q, k)), test_labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn two_blobs(n: usize, gap: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = crate::seeded_rng(seed);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let l = i % 2;
            let shift = if l == 0 { -gap } else { gap };
            pts.push(vec![shift + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            labels.push(l);
        }
        (pts, labels)
    }

    #[test]
    fn separable_two_class_is_perfect() {
        let (train, tl) = two_blobs(100, 3.0, 1);
        let (test, sl) = two_blobs(60, 3.0, 2);
        let cfg = LinearProbeConfig::default();
        assert_eq!(linear_probe_accuracy(&train, &tl, &test, &sl, &cfg).unwrap(), 1.0);
        assert_eq!(linear_probe_accuracy(&train, &tl, &train, &tl, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn single_class_training_rejected() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            linear_probe_accuracy(&pts, &[1, 1], &pts, &[1, 1], &LinearProbeConfig::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn random_labels_near_chance() {
        let mut rng = crate::seeded_rng(8);
        let pts: Vec<Vec<f64>> = (0..1000).map(|_| (0..8).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let labels: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..4)).collect();
        let acc = linear_probe_accuracy(&pts[..500], &labels[..500], &pts[500..], &labels[500..], &LinearProbeConfig::default()).unwrap();
        assert!((acc - 0.25).abs() <= 0.15, "accuracy {acc}");
    }

    #[test]
    fn knn_exact_match_k1() {
        let train = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, 5.0]];
        let labels = [3, 7, 9];
        assert_eq!(knn_predict(&train, &labels, &[1.0, 1.0], 1), 7);
    }

    #[test]
    fn knn_full_k_is_majority() {
        let train = vec![vec![0.0], vec![10.0], vec![11.0], vec![12.0]];
        let labels = [0, 1, 1, 1];
        assert_eq!(knn_predict(&train, &labels, &[0.0], 4), 1);
    }

    #[test]
    fn knn_tie_goes_to_nearest() {
        let train = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let labels = [5, 6, 6, 5];
        assert_eq!(knn_predict(&train, &labels, &[0.1], 4), 5);
        assert_eq!(knn_predict(&train, &labels, &[1.1], 2), 6);
    }
}
