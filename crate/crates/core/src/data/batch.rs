use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::container::SplitData;
use crate::error::{Error, Result};

/// One mini-batch: `B×C×N` signals (row-major) with aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub signals: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Partitions `0..labels.len()` into batches.
///
/// Without balancing, records are shuffled (when a seed is given) and chunked.
/// With balancing, each class is shuffled and cut into groups of two (the last
/// group of an odd-sized class takes three); groups are shuffled and packed
/// whole into batches, so every class present in a batch has at least two
/// records there.
pub fn batch_plan(
    labels: &[usize],
    batch_size: usize,
    shuffle_seed: Option<u64>,
    balanced: bool,
) -> Result<Vec<Vec<usize>>> {
    if labels.is_empty() {
        return Err(Error::Data("cannot batch an empty split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = shuffle_seed.map(crate::seeded_rng);
    if !balanced {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        return Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect());
    }

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::Precondition(format!(
            "balanced batching needs >= 2 records per class; class {class} has {}",
            members.len()
        )));
    }
    if batch_size < 3 && by_class.values().any(|m| m.len() % 2 == 1) {
        return Err(Error::Precondition(
            "balanced batching with odd class sizes needs batch_size >= 3".into(),
        ));
    }
    if batch_size < 2 {
        return Err(Error::Precondition("balanced batching needs batch_size >= 2".into()));
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    for members in by_class.values_mut() {
        if let Some(rng) = rng.as_mut() {
            members.shuffle(rng);
        }
        let mut chunks: Vec<Vec<usize>> = members.chunks(2).map(<[usize]>::to_vec).collect();
        if chunks.last().is_some_and(|c| c.len() == 1) {
            let tail = chunks.pop().unwrap();
            chunks.last_mut().unwrap().extend(tail);
        }
        groups.extend(chunks);
    }
    if let Some(rng) = rng.as_mut() {
        groups.shuffle(rng);
    }

    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for g in groups {
        if !current.is_empty() && current.len() + g.len() > batch_size {
            batches.push(std::mem::take(&mut current));
        }
        current.extend(g);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Single-consumer stream of batches over one split.
pub struct BatchIter<'a> {
    split: &'a SplitData,
    plan: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> BatchIter<'a> {
    pub fn new(
        split: &'a SplitData,
        batch_size: usize,
        shuffle_seed: Option<u64>,
        balanced_classes: bool,
    ) -> Result<Self> {
        let plan = batch_plan(&split.labels, batch_size, shuffle_seed, balanced_classes)?;
        Ok(Self {
            split,
            plan: plan.into_iter(),
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let indices = self.plan.next()?;
        Some(Batch {
            signals: self.split.gather_signals(&indices),
            labels: indices.iter().map(|&i| self.split.labels[i]).collect(),
            indices,
        })
    }
}
