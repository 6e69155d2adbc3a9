use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::IndexingTrial;

/// Accuracy summary for one array length. Per-list accuracy is averaged
/// over the list's queries; mean and population std are taken across lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthScore {
    pub length: usize,
    pub lists: usize,
    pub trials: usize,
    pub token_estimate_mean: Option<f64>,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
}

/// Scores for every length that has at least one trial, ascending.
pub fn score(trials: &[IndexingTrial]) -> Vec<LengthScore> {
    let mut lengths: Vec<usize> = trials.iter().map(|t| t.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    score_lengths(&lengths, trials)
}

/// Scores for `lengths` in the given order; lengths without trials get
/// absent statistics rather than zeros.
pub fn score_lengths(lengths: &[usize], trials: &[IndexingTrial]) -> Vec<LengthScore> {
    lengths
        .iter()
        .map(|&length| {
            let mut lists: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            let mut tokens = 0usize;
            let mut n = 0usize;
            for t in trials.iter().filter(|t| t.length == length) {
                let e = lists.entry(t.list_id).or_default();
                e.0 += usize::from(t.correct);
                e.1 += 1;
                tokens += t.token_estimate;
                n += 1;
            }
            let acc: Vec<f64> = lists.values().map(|&(c, k)| c as f64 / k as f64).collect();
            let (mean, std) = if acc.is_empty() {
                (None, None)
            } else {
                let k = acc.len() as f64;
                let mean = acc.iter().sum::<f64>() / k;
                let var = acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / k;
                (Some(mean), Some(var.sqrt()))
            };
            LengthScore {
                length,
                lists: lists.len(),
                trials: n,
                token_estimate_mean: (n > 0).then(|| tokens as f64 / n as f64),
                accuracy_mean: mean,
                accuracy_std: std,
            }
        })
        .collect()
}
