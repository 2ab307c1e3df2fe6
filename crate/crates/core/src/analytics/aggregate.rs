use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SimilarityRecord;

pub const TOTAL_LABEL: &str = "Total";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReportRow {
    pub group: String,
    pub n_occasions: usize,
    pub mean_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// One row per group, ordered by group key.
    pub rows: Vec<AggregateReportRow>,
    /// Mean over all records. `mean_similarity` is 0 when there are none.
    pub total: AggregateReportRow,
}

fn mean(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let (n, sum) = values.fold((0usize, 0.0f64), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        (0, 0.0)
    } else {
        (n, sum / n as f64)
    }
}

fn total_row(records: &[&SimilarityRecord]) -> AggregateReportRow {
    let (n, m) = mean(records.iter().map(|r| r.value));
    AggregateReportRow {
        group: TOTAL_LABEL.to_owned(),
        n_occasions: n,
        mean_similarity: m,
    }
}

fn group_refs<'a, K: Ord>(
    records: impl IntoIterator<Item = &'a SimilarityRecord>,
    key: impl Fn(&SimilarityRecord) -> K,
) -> BTreeMap<K, Vec<&'a SimilarityRecord>> {
    let mut groups: BTreeMap<K, Vec<&SimilarityRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(key(r)).or_default().push(r);
    }
    groups
}

fn report_from<K: Ord + ToString>(all: &[&SimilarityRecord], groups: BTreeMap<K, Vec<&SimilarityRecord>>) -> AggregateReport {
    let rows = groups
        .into_iter()
        .map(|(k, members)| {
            let (n, m) = mean(members.iter().map(|r| r.value));
            AggregateReportRow {
                group: k.to_string(),
                n_occasions: n,
                mean_similarity: m,
            }
        })
        .collect();
    AggregateReport {
        rows,
        total: total_row(all),
    }
}

/// Partitions records by `key` and reports the unweighted mean per group.
pub fn aggregate<K: Ord + ToString>(records: &[SimilarityRecord], key: impl Fn(&SimilarityRecord) -> K) -> AggregateReport {
    let all: Vec<&SimilarityRecord> = records.iter().collect();
    report_from(&all, group_refs(records, key))
}

/// Two-level grouping, e.g. topic then model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedReport {
    /// Outer group label with the inner report for its members.
    pub sections: Vec<(String, AggregateReport)>,
    pub total: AggregateReportRow,
}

pub fn aggregate_nested<K1: Ord + ToString, K2: Ord + ToString>(
    records: &[SimilarityRecord],
    outer: impl Fn(&SimilarityRecord) -> K1,
    inner: impl Fn(&SimilarityRecord) -> K2,
) -> NestedReport {
    let all: Vec<&SimilarityRecord> = records.iter().collect();
    let sections = group_refs(records, outer)
        .into_iter()
        .map(|(k, members)| {
            let inner_groups = group_refs(members.iter().copied(), &inner);
            (k.to_string(), report_from(&members, inner_groups))
        })
        .collect();
    NestedReport {
        sections,
        total: total_row(&all),
    }
}
