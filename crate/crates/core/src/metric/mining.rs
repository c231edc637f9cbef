use candle_core::{Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mining {
    SemiHard,
    AllValid,
}

impl std::str::FromStr for Mining {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semi_hard" => Ok(Self::SemiHard),
            "all_valid" => Ok(Self::AllValid),
            other => Err(Error::Config(format!("unknown mining strategy `{other}`"))),
        }
    }
}

/// Margin and mining strategy. Distances are squared Euclidean throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub margin: f64,
    pub mining: Mining,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            mining: Mining::SemiHard,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("triplet margin must be > 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// `(anchor, positive, negative)` batch indices, sorted lexicographically.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletIndexSet {
    pub triples: Vec<(usize, usize, usize)>,
}

impl TripletIndexSet {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

pub fn squared_distances(embeddings: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = embeddings.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = embeddings[i]
                .iter()
                .zip(&embeddings[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// All triples with `d(a,p) < d(a,n) < d(a,p) + margin`.
pub fn mine_semihard(embeddings: &[Vec<f64>], labels: &[usize], margin: f64) -> TripletIndexSet {
    assert_eq!(embeddings.len(), labels.len(), "embeddings and labels differ in length");
    let dist = squared_distances(embeddings);
    let n = labels.len();
    let mut triples = Vec::new();
    for a in 0..n {
        let mut negatives: Vec<(f64, usize)> = (0..n)
            .filter(|&j| labels[j] != labels[a])
            .map(|j| (dist[a][j], j))
            .collect();
        if negatives.is_empty() {
            continue;
        }
        negatives.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
            let d_ap = dist[a][p];
            let lo = negatives.partition_point(|&(d, _)| d <= d_ap);
            let hi = negatives.partition_point(|&(d, _)| d < d_ap + margin);
            if lo >= hi {
                continue;
            }
            let mut band: Vec<usize> = negatives[lo..hi].iter().map(|&(_, j)| j).collect();
            band.sort_unstable();
            triples.extend(band.into_iter().map(|neg| (a, p, neg)));
        }
    }
    TripletIndexSet { triples }
}

/// Every label-consistent triple regardless of distance.
pub fn mine_all_valid(labels: &[usize]) -> TripletIndexSet {
    let n = labels.len();
    let mut triples = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for neg in 0..n {
                if labels[neg] != labels[a] {
                    triples.push((a, p, neg));
                }
            }
        }
    }
    TripletIndexSet { triples }
}

pub fn mine(embeddings: &[Vec<f64>], labels: &[usize], config: &TripletConfig) -> TripletIndexSet {
    match config.mining {
        Mining::SemiHard => mine_semihard(embeddings, labels, config.margin),
        Mining::AllValid => mine_all_valid(labels),
    }
}

/// Mean hinge `max(0, d(a,p) - d(a,n) + margin)` over the triples, as a
/// differentiable scalar. `embeddings` is `B×D`.
pub fn triplet_loss(embeddings: &Tensor, triples: &TripletIndexSet, margin: f64) -> Result<Tensor> {
    if triples.is_empty() {
        return Err(Error::EmptyTriplets);
    }
    let column = |f: fn(&(usize, usize, usize)) -> usize| -> Result<Tensor> {
        let idx: Vec<u32> = triples.triples.iter().map(|t| f(t) as u32).collect();
        let len = idx.len();
        Ok(Tensor::from_vec(idx, len, &Device::Cpu)?)
    };
    let a = embeddings.index_select(&column(|t| t.0)?, 0)?;
    let p = embeddings.index_select(&column(|t| t.1)?, 0)?;
    let n = embeddings.index_select(&column(|t| t.2)?, 0)?;
    let d_ap = (&a - &p)?.sqr()?.sum(D::Minus1)?;
    let d_an = (&a - &n)?.sqr()?.sum(D::Minus1)?;
    let hinge = ((d_ap - d_an)? + margin)?.relu()?;
    Ok(hinge.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn brute_force(emb: &[Vec<f64>], labels: &[usize], margin: f64) -> BTreeSet<(usize, usize, usize)> {
        let d = |i: usize, j: usize| -> f64 { emb[i].iter().zip(&emb[j]).map(|(x, y)| (x - y).powi(2)).sum() };
        let n = labels.len();
        let mut out = BTreeSet::new();
        for a in 0..n {
            for p in 0..n {
                for q in 0..n {
                    if a != p && labels[a] == labels[p] && labels[q] != labels[a] {
                        let (ap, aq) = (d(a, p), d(a, q));
                        if ap < aq && aq < ap + margin {
                            out.insert((a, p, q));
                        }
                    }
                }
            }
        }
        out
    }

    fn loss_oracle(emb: &[Vec<f64>], triples: &[(usize, usize, usize)], margin: f64) -> f64 {
        let mut total = 0.0;
        for &(a, p, n) in triples {
            let mut ap = 0.0;
            let mut an = 0.0;
            for k in 0..emb[a].len() {
                ap += (emb[a][k] - emb[p][k]) * (emb[a][k] - emb[p][k]);
                an += (emb[a][k] - emb[n][k]) * (emb[a][k] - emb[n][k]);
            }
            total += (ap - an + margin).max(0.0);
        }
        total / triples.len() as f64
    }

    fn tensor(emb: &[Vec<f64>]) -> Tensor {
        let d = emb[0].len();
        let flat: Vec<f64> = emb.iter().flatten().copied().collect();
        Tensor::from_vec(flat, (emb.len(), d), &Device::Cpu).unwrap()
    }

    #[test]
    fn one_dimensional_band_example() {
        let emb = vec![vec![0.0], vec![0.1], vec![0.3], vec![2.0]];
        let set = mine_semihard(&emb, &[0, 0, 1, 1], 0.5);
        assert!(set.triples.contains(&(0, 1, 2)));
        assert!(!set.triples.contains(&(0, 1, 3)));
        assert_eq!(set.triples.iter().copied().collect::<BTreeSet<_>>(), brute_force(&emb, &[0, 0, 1, 1], 0.5));
    }

    #[test]
    fn collapsed_embeddings_give_no_triples() {
        let emb = vec![vec![0.3, -0.1]; 6];
        assert!(mine_semihard(&emb, &[0, 0, 1, 1, 2, 2], 0.5).is_empty());
    }

    #[test]
    fn vanishing_margin_gives_no_triples() {
        let mut rng = crate::seeded_rng(4);
        use rand::Rng;
        let emb: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        assert!(mine_semihard(&emb, &labels, 1e-300).is_empty());
    }

    #[test]
    fn all_valid_respects_labels() {
        let labels = [0, 0, 1, 2];
        let set = mine_all_valid(&labels);
        assert_eq!(set.triples, vec![(0, 1, 2), (0, 1, 3), (1, 0, 2), (1, 0, 3)]);
    }

    #[test]
    fn hinge_examples() {
        let emb = vec![vec![0.0], vec![0.0]];
        let t = TripletIndexSet { triples: vec![(0, 0, 1)] };
        let loss = triplet_loss(&tensor(&emb), &t, 0.5).unwrap().to_scalar::<f64>().unwrap();
        assert!((loss - 0.5).abs() < 1e-12);

        let emb = vec![vec![0.0], vec![0.0], vec![1.0]];
        let t = TripletIndexSet { triples: vec![(0, 1, 2)] };
        let loss = triplet_loss(&tensor(&emb), &t, 0.5).unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn empty_triples_signal_skip() {
        let emb = tensor(&[vec![0.0], vec![1.0]]);
        assert!(matches!(
            triplet_loss(&emb, &TripletIndexSet::default(), 0.2),
            Err(Error::EmptyTriplets)
        ));
    }

    #[test]
    fn loss_matches_double_loop_on_random_batch() {
        let mut rng = crate::seeded_rng(16);
        use rand::Rng;
        let emb: Vec<Vec<f64>> = (0..16).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..16).map(|i| i % 4).collect();
        let set = mine_all_valid(&labels);
        let got = triplet_loss(&tensor(&emb), &set, 0.7).unwrap().to_scalar::<f64>().unwrap();
        assert!((got - loss_oracle(&emb, &set.triples, 0.7)).abs() <= 1e-6);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = crate::seeded_rng(21);
        use rand::Rng;
        for trial in 0..5 {
            let emb: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let labels: Vec<usize> = (0..10).map(|i| (i + trial) % 3).collect();
            let set = mine_all_valid(&labels);
            let margin = 0.4;
            let var = candle_core::Var::from_tensor(&tensor(&emb)).unwrap();
            let loss = triplet_loss(var.as_tensor(), &set, margin).unwrap();
            let grads = loss.backward().unwrap();
            let g: Vec<Vec<f64>> = grads.get(var.as_tensor()).unwrap().to_vec2().unwrap();
            let h = 1e-6;
            for i in 0..emb.len() {
                for k in 0..4 {
                    let mut plus = emb.clone();
                    plus[i][k] += h;
                    let mut minus = emb.clone();
                    minus[i][k] -= h;
                    let fd = (loss_oracle(&plus, &set.triples, margin) - loss_oracle(&minus, &set.triples, margin)) / (2.0 * h);
                    let denom = fd.abs().max(g[i][k].abs()).max(1e-8);
                    assert!(
                        (fd - g[i][k]).abs() / denom <= 1e-4 || (fd - g[i][k]).abs() <= 1e-9,
                        "coord ({i},{k}): fd {fd} vs autograd {}",
                        g[i][k]
                    );
                }
            }
        }
    }

    #[test]
    fn loss_is_zero_when_every_negative_clears_margin() {
        let emb = vec![vec![0.0], vec![0.1], vec![5.0], vec![5.1]];
        let t = mine_all_valid(&[0, 0, 1, 1]);
        let loss = triplet_loss(&tensor(&emb), &t, 0.5).unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn f32_embeddings_supported() {
        let emb = Tensor::from_vec(vec![0.0f32, 1.0, 0.5], (3, 1), &Device::Cpu).unwrap();
        let t = TripletIndexSet { triples: vec![(0, 2, 1)] };
        let loss = triplet_loss(&emb, &t, 0.2).unwrap();
        assert_eq!(loss.dtype(), DType::F32);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn mining_equals_brute_force(
            b in 3usize..=64,
            dim in 1usize..5,
            classes in 1usize..6,
            margin in 0.01f64..2.0,
            seed in any::<u64>(),
        ) {
            let mut rng = crate::seeded_rng(seed);
            use rand::Rng;
            // coarse grid values make ties and boundary cases common
            let emb: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..dim).map(|_| rng.gen_range(0..8) as f64 * 0.125).collect())
                .collect();
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..classes)).collect();
            let got = mine_semihard(&emb, &labels, margin);
            let mut sorted = got.triples.clone();
            sorted.sort_unstable();
            prop_assert_eq!(&sorted, &got.triples);
            let set: BTreeSet<_> = got.triples.iter().copied().collect();
            prop_assert_eq!(set.len(), got.triples.len());
            prop_assert_eq!(set, brute_force(&emb, &labels, margin));
        }

        #[test]
        fn loss_never_negative(
            vals in prop::collection::vec(-3.0f64..3.0, 12),
            margin in 0.01f64..2.0,
        ) {
            let emb: Vec<Vec<f64>> = vals.chunks(2).map(<[f64]>::to_vec).collect();
            let set = mine_all_valid(&[0, 0, 1, 1, 2, 2]);
            let loss = triplet_loss(&tensor(&emb), &set, margin).unwrap().to_scalar::<f64>().unwrap();
            prop_assert!(loss >= 0.0);
        }
    }
}
