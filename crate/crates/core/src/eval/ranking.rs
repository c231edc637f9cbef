use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Candidates for one query in ranked order with per-candidate relevance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub ranked: Vec<String>,
    pub relevant: Vec<bool>,
}

impl RankedResult {
    pub fn new(query_id: impl Into<String>, ranked: Vec<String>, relevant: Vec<bool>) -> Result<Self> {
        if ranked.len() != relevant.len() {
            return Err(Error::Precondition("ranking and relevance lengths differ".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ranked.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Precondition(format!("candidate `{dup}` ranked twice")));
        }
        Ok(Self {
            query_id: query_id.into(),
            ranked,
            relevant,
        })
    }

    fn first_hit(&self) -> Option<usize> {
        self.relevant.iter().position(|&r| r)
    }

    /// Mean precision at each relevant position; 0 without relevant items.
    pub fn average_precision(&self) -> f64 {
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (i, &r) in self.relevant.iter().enumerate() {
            if r {
                hits += 1;
                sum += hits as f64 / (i + 1) as f64;
            }
        }
        if hits == 0 {
            0.0
        } else {
            sum / hits as f64
        }
    }
}

fn nonempty(results: &[RankedResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Precondition("no ranked results".into()));
    }
    Ok(())
}

/// Fraction of queries with a relevant candidate in the first `k`.
pub fn topk_accuracy(results: &[RankedResult], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    nonempty(results)?;
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = results
                .iter()
                .filter(|r| r.first_hit().is_some_and(|h| h < k))
                .count();
            (k, hits as f64 / results.len() as f64)
        })
        .collect())
}

pub fn mean_reciprocal_rank(results: &[RankedResult]) -> Result<f64> {
    nonempty(results)?;
    let total: f64 = results
        .iter()
        .map(|r| r.first_hit().map_or(0.0, |h| 1.0 / (h + 1) as f64))
        .sum();
    Ok(total / results.len() as f64)
}

pub fn mean_average_precision(results: &[RankedResult]) -> Result<f64> {
    nonempty(results)?;
    Ok(results.iter().map(RankedResult::average_precision).sum::<f64>() / results.len() as f64)
}
