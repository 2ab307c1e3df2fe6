use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::SimilarityRecord;
use crate::domain::{Session, SessionId};

/// Minimum second difference accepted as an elbow.
pub const DEFAULT_ELBOW_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationCurvePoint {
    pub iteration_index: u32,
    pub mean_similarity: f64,
    /// `1 - mean_similarity`.
    pub mean_diff_from_unity: f64,
    pub n: usize,
}

impl IterationCurvePoint {
    pub fn new(iteration_index: u32, mean_similarity: f64, n: usize) -> Self {
        Self {
            iteration_index,
            mean_similarity,
            mean_diff_from_unity: 1.0 - mean_similarity,
            n,
        }
    }
}

/// Pools records by iteration index and averages each pool.
pub fn curve_from_records(records: &[SimilarityRecord]) -> Vec<IterationCurvePoint> {
    let mut pools: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
    for r in records {
        let e = pools.entry(r.iteration_index).or_default();
        e.0 += 1;
        e.1 += r.value;
    }
    pools
        .into_iter()
        .map(|(k, (n, sum))| IterationCurvePoint::new(k, sum / n as f64, n))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CasesHistogram {
    /// Iteration at which consensus was reached, to occasion count.
    pub counts: BTreeMap<u32, usize>,
    pub consensus_occasions: usize,
    pub no_consensus_sessions: usize,
}

/// Counts occasion records by the iteration at which their session reached
/// consensus. Records of sessions that did not reach consensus, or that are
/// not in `sessions`, are not counted.
pub fn cases_per_iteration(sessions: &[Session], records: &[SimilarityRecord]) -> CasesHistogram {
    let resolved: HashMap<&SessionId, u32> = sessions
        .iter()
        .filter_map(|s| s.consensus_iteration().map(|k| (&s.id, k)))
        .collect();
    let mut hist = CasesHistogram {
        no_consensus_sessions: sessions.len() - resolved.len(),
        ..CasesHistogram::default()
    };
    for r in records.iter().filter(|r| r.accepted) {
        if let Some(&k) = resolved.get(&r.session_id) {
            *hist.counts.entry(k).or_default() += 1;
            hist.consensus_occasions += 1;
        }
    }
    hist
}

/// `(iteration_index, y[i-1] - 2 y[i] + y[i+1])` over `mean_diff_from_unity`
/// for each interior point.
pub fn second_differences(curve: &[IterationCurvePoint]) -> Vec<(u32, f64)> {
    curve
        .windows(3)
        .map(|w| {
            let y = |i: usize| w[i].mean_diff_from_unity;
            (w[1].iteration_index, y(0) - 2.0 * y(1) + y(2))
        })
        .collect()
}

/// Iteration with the largest second difference of `mean_diff_from_unity`,
/// provided the curve does not rise anywhere up to it and the difference
/// reaches `threshold`. Ties go to the earliest iteration.
pub fn detect_elbow(curve: &[IterationCurvePoint], threshold: f64) -> Option<u32> {
    let mut sorted = curve.to_vec();
    sorted.sort_by_key(|p| p.iteration_index);
    let diffs = second_differences(&sorted);
    let (best_pos, &(iteration, best)) = diffs
        .iter()
        .enumerate()
        .fold(None::<(usize, &(u32, f64))>, |acc, (i, d)| match acc {
            Some((_, b)) if b.1 >= d.1 => acc,
            _ => Some((i, d)),
        })?;
    if best < threshold {
        return None;
    }
    // interior point best_pos + 1 in `sorted`
    let prefix = &sorted[..=best_pos + 1];
    let non_increasing = prefix
        .windows(2)
        .all(|w| w[1].mean_diff_from_unity <= w[0].mean_diff_from_unity + 1e-12);
    non_increasing.then_some(iteration)
}
