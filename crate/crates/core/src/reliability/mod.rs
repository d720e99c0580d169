//! Per-cluster error rates, swap selection, prediction adjustment and
//! before/after reporting.

mod io;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{average_class_accuracy, confusion_matrix, overall_accuracy, ConfusionMatrix};
use crate::types::{PredictionRecord, SaliencyMap};

pub use io::{write_prototypes, write_records_csv, write_report, write_sweep_csv};

/// Full-scale reference accuracies `(before, after)` for the validation and
/// test sets, as fractions.
pub const REFERENCE_VAL_OVERALL: (f64, f64) = (0.7632, 0.9031);
pub const REFERENCE_TEST_OVERALL: (f64, f64) = (0.7241, 0.8814);
pub const DEFAULT_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReliability {
    pub cluster_id: usize,
    pub total: u64,
    /// FP + FN.
    pub false_count: u64,
    /// `false_count / total`; higher means less reliable.
    pub r: f64,
    pub outcomes: ConfusionMatrix,
}

impl ClusterReliability {
    pub fn unreliability(&self) -> f64 {
        self.r
    }

    pub fn reliability(&self) -> f64 {
        1.0 - self.r
    }
}

/// Scores of all non-empty clusters plus the ids of empty ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub q: usize,
    pub clusters: Vec<ClusterReliability>,
    pub empty_clusters: Vec<usize>,
}

impl ReliabilityTable {
    pub fn get(&self, cluster_id: usize) -> Option<&ClusterReliability> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }
}

fn check_parallel(records: &[PredictionRecord], assignments: &[usize]) -> Result<()> {
    if records.len() != assignments.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} assignments", records.len()),
            got: assignments.len().to_string(),
        });
    }
    Ok(())
}

fn check_cluster(id: usize, q: usize) -> Result<()> {
    if id == 0 || id > q {
        return Err(Error::UnknownCluster(id));
    }
    Ok(())
}

/// `r_q = (FP + FN) / total` per cluster over records with ground truth.
pub fn cluster_reliability(records: &[PredictionRecord], assignments: &[usize], q: usize) -> Result<ReliabilityTable> {
    check_parallel(records, assignments)?;
    let mut per: BTreeMap<usize, ConfusionMatrix> = BTreeMap::new();
    for (rec, &c) in records.iter().zip(assignments) {
        check_cluster(c, q)?;
        let outcome = rec
            .outcome
            .ok_or_else(|| Error::invalid(format!("record {} has no outcome", rec.image_id)))?;
        per.entry(c).or_default().record(outcome);
    }
    let clusters = per
        .into_iter()
        .map(|(cluster_id, outcomes)| ClusterReliability {
            cluster_id,
            total: outcomes.total(),
            false_count: outcomes.false_count(),
            r: outcomes.false_count() as f64 / outcomes.total() as f64,
            outcomes,
        })
        .collect::<Vec<_>>();
    let empty_clusters = (1..=q).filter(|id| !clusters.iter().any(|c| c.cluster_id == *id)).collect();
    Ok(ReliabilityTable {
        q,
        clusters,
        empty_clusters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapDecision {
    pub threshold: f64,
    pub swap_set: BTreeSet<usize>,
}

/// Clusters whose `r` strictly exceeds `t`.
pub fn select_swap_clusters(table: &ReliabilityTable, t: f64) -> Result<SwapDecision> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("threshold {t} outside [0, 1]")));
    }
    Ok(SwapDecision {
        threshold: t,
        swap_set: table.clusters.iter().filter(|c| c.r > t).map(|c| c.cluster_id).collect(),
    })
}

/// Flip the predicted class of every record in a swap cluster. Applying the
/// same decision twice restores the input.
pub fn adjust(records: &[PredictionRecord], assignments: &[usize], decision: &SwapDecision) -> Result<Vec<PredictionRecord>> {
    check_parallel(records, assignments)?;
    Ok(records
        .iter()
        .zip(assignments)
        .map(|(rec, c)| {
            let mut out = rec.clone();
            if decision.swap_set.contains(c) {
                out.set_predicted(rec.predicted.flip());
                out.swapped = !rec.swapped;
            }
            out
        })
        .collect())
}

/// Attach cluster id and `r` of that cluster to every record.
pub fn annotate(records: &[PredictionRecord], assignments: &[usize], table: &ReliabilityTable) -> Result<Vec<PredictionRecord>> {
    check_parallel(records, assignments)?;
    records
        .iter()
        .zip(assignments)
        .map(|(rec, &c)| {
            let rel = table.get(c).ok_or(Error::UnknownCluster(c))?;
            let mut out = rec.clone();
            out.set_cluster(c, rel.r);
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub cluster_id: usize,
    pub members: usize,
    /// Element-wise mean of the member maps.
    pub map: SaliencyMap,
}

/// Element-wise mean map per non-empty cluster; the second value lists the
/// omitted empty clusters.
pub fn prototypes(maps: &[SaliencyMap], assignments: &[usize], q: usize) -> Result<(Vec<Prototype>, Vec<usize>)> {
    if maps.len() != assignments.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} assignments", maps.len()),
            got: assignments.len().to_string(),
        });
    }
    let mut sums: BTreeMap<usize, (Vec<f64>, usize, &SaliencyMap)> = BTreeMap::new();
    for (m, &c) in maps.iter().zip(assignments) {
        check_cluster(c, q)?;
        let first = sums.values().next().map(|e| e.2).unwrap_or(m);
        if (m.height, m.width) != (first.height, first.width) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} map", first.height, first.width),
                got: format!("{}x{} map {}", m.height, m.width, m.image_id),
            });
        }
        let entry = sums.entry(c).or_insert_with(|| (vec![0.0; m.values.len()], 0, m));
        for (s, &v) in entry.0.iter_mut().zip(&m.values) {
            *s += v as f64;
        }
        entry.1 += 1;
    }
    let omitted = (1..=q).filter(|c| !sums.contains_key(c)).collect();
    let protos = sums
        .into_iter()
        .map(|(cluster_id, (sum, members, first))| {
            let values = sum.iter().map(|s| (s / members as f64) as f32).collect();
            let map = SaliencyMap::new(
                first.height,
                first.width,
                values,
                first.method,
                format!("prototype-{cluster_id}"),
                first.explained_class,
            )?;
            Ok(Prototype {
                cluster_id,
                members,
                map,
            })
        })
        .collect::<Result<_>>()?;
    Ok((protos, omitted))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub matrix: ConfusionMatrix,
    pub overall_accuracy: f64,
    /// `None` when one class is missing from the ground truth.
    pub average_class_accuracy: Option<f64>,
}

impl SetSummary {
    pub fn of(records: &[PredictionRecord]) -> Result<Self> {
        let matrix = confusion_matrix(records)?;
        Ok(Self {
            overall_accuracy: overall_accuracy(&matrix)?,
            average_class_accuracy: average_class_accuracy(&matrix).ok(),
            matrix,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub threshold: f64,
    pub swap_set: BTreeSet<usize>,
    pub before: SetSummary,
    pub after: SetSummary,
    /// After minus before, in percentage points.
    pub delta_overall_pp: f64,
    pub delta_average_class_pp: Option<f64>,
    pub clusters: Vec<ClusterReliability>,
    pub empty_clusters: Vec<usize>,
    pub records: Vec<PredictionRecord>,
}

pub fn report(
    before: &[PredictionRecord],
    after: &[PredictionRecord],
    table: &ReliabilityTable,
    decision: &SwapDecision,
) -> Result<ReliabilityReport> {
    if before.len() != after.len() || before.iter().zip(after).any(|(a, b)| a.image_id != b.image_id) {
        return Err(Error::invalid("before and after records do not describe the same images"));
    }
    let b = SetSummary::of(before)?;
    let a = SetSummary::of(after)?;
    Ok(ReliabilityReport {
        threshold: decision.threshold,
        swap_set: decision.swap_set.clone(),
        delta_overall_pp: 100.0 * (a.overall_accuracy - b.overall_accuracy),
        delta_average_class_pp: a
            .average_class_accuracy
            .zip(b.average_class_accuracy)
            .map(|(x, y)| 100.0 * (x - y)),
        before: b,
        after: a,
        clusters: table.clusters.clone(),
        empty_clusters: table.empty_clusters.clone(),
        records: after.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub swap_set: BTreeSet<usize>,
    pub overall_accuracy: f64,
    pub average_class_accuracy: Option<f64>,
}

/// Thresholds `0.50, 0.55, ..., 0.95`.
pub fn default_sweep_thresholds() -> Vec<f64> {
    (10..=19).map(|i| i as f64 / 20.0).collect()
}

/// Post-adjustment accuracy for each threshold.
pub fn threshold_sweep(
    records: &[PredictionRecord],
    assignments: &[usize],
    table: &ReliabilityTable,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    thresholds
        .iter()
        .map(|&t| {
            let d = select_swap_clusters(table, t)?;
            let s = SetSummary::of(&adjust(records, assignments, &d)?)?;
            Ok(SweepRow {
                threshold: t,
                swap_set: d.swap_set,
                overall_accuracy: s.overall_accuracy,
                average_class_accuracy: s.average_class_accuracy,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
