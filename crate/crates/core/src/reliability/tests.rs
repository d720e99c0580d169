use proptest::prelude::*;

use super::*;
use crate::metrics::ConfusionOutcome;
use crate::types::{ClassLabel, ClassScores, SaliencyMethod};

use ClassLabel::{NotReady, Ready};

fn record(id: usize, predicted: ClassLabel, truth: ClassLabel) -> PredictionRecord {
    let p = if predicted == Ready { [0.2, 0.8] } else { [0.8, 0.2] };
    PredictionRecord::new(format!("r{id}"), ClassScores::new(p).unwrap(), Some(truth))
}

/// `correct` right answers followed by `wrong` errors, alternating classes.
fn cluster_records(start: usize, correct: usize, wrong: usize) -> Vec<PredictionRecord> {
    (0..correct + wrong)
        .map(|i| {
            let truth = if i % 2 == 0 { Ready } else { NotReady };
            let predicted = if i < correct { truth } else { truth.flip() };
            record(start + i, predicted, truth)
        })
        .collect()
}

fn table_with(rs: &[f64]) -> ReliabilityTable {
    ReliabilityTable {
        q: rs.len(),
        clusters: rs
            .iter()
            .enumerate()
            .map(|(i, &r)| ClusterReliability {
                cluster_id: i + 1,
                total: 20,
                false_count: (r * 20.0).round() as u64,
                r,
                outcomes: ConfusionMatrix::default(),
            })
            .collect(),
        empty_clusters: Vec::new(),
    }
}

#[test]
fn reliability_rates() {
    let mut recs = cluster_records(0, 1, 19);
    recs.extend(cluster_records(100, 14, 6));
    recs.extend(cluster_records(200, 20, 0));
    let assign: Vec<usize> = (0..60).map(|i| i / 20 + 1).collect();
    let table = cluster_reliability(&recs, &assign, 4).unwrap();
    assert_eq!(table.get(1).unwrap().r, 0.95);
    assert_eq!(table.get(2).unwrap().r, 0.30);
    assert_eq!(table.get(3).unwrap().r, 0.0);
    assert_eq!(table.empty_clusters, vec![4]);
    assert!(table.get(4).is_none());
    for c in &table.clusters {
        assert_eq!(c.total, c.outcomes.total());
        assert_eq!(c.r, c.false_count as f64 / c.total as f64);
    }
}

#[test]
fn reliability_needs_outcomes_and_known_clusters() {
    let mut recs = cluster_records(0, 2, 0);
    recs[0].truth = None;
    recs[0].outcome = None;
    assert!(cluster_reliability(&recs, &[1, 1], 2).is_err());
    let recs = cluster_records(0, 2, 0);
    assert!(matches!(cluster_reliability(&recs, &[1, 3], 2), Err(Error::UnknownCluster(3))));
}

#[test]
fn swap_selection() {
    let table = table_with(&[0.10, 0.05, 0.18, 0.12, 0.95, 0.30, 0.08, 0.15]);
    let d = select_swap_clusters(&table, 0.75).unwrap();
    assert_eq!(d.swap_set, BTreeSet::from([5]));
    assert!(select_swap_clusters(&table, 1.0).unwrap().swap_set.is_empty());
    assert!(select_swap_clusters(&table_with(&[0.0; 8]), 0.75).unwrap().swap_set.is_empty());
    // strict inequality at the boundary
    assert!(select_swap_clusters(&table_with(&[0.75, 0.2]), 0.75).unwrap().swap_set.is_empty());
    assert!(select_swap_clusters(&table, 1.5).is_err());
}

#[test]
fn adjust_flips_only_swap_clusters() {
    let recs = vec![record(0, NotReady, Ready), record(1, NotReady, Ready)];
    let d = SwapDecision {
        threshold: 0.75,
        swap_set: BTreeSet::from([2]),
    };
    let out = adjust(&recs, &[2, 1], &d).unwrap();
    assert_eq!(out[0].outcome, Some(ConfusionOutcome::TP));
    assert!(out[0].swapped);
    assert_eq!(out[1], recs[1]);
    assert_eq!(adjust(&out, &[2, 1], &d).unwrap(), recs);
}

#[test]
fn concentrated_errors_fixture() {
    // cluster 1: 64 records, 60 wrong; clusters 2..4: 136 records, 20 wrong
    let mut recs = cluster_records(0, 4, 60);
    recs.extend(cluster_records(100, 40, 6));
    recs.extend(cluster_records(200, 38, 7));
    recs.extend(cluster_records(300, 38, 7));
    let mut assign = vec![1; 64];
    assign.extend([2; 46]);
    assign.extend([3; 45]);
    assign.extend([4; 45]);
    let n = recs.len() as f64;
    assert_eq!(n, 200.0);
    let table = cluster_reliability(&recs, &assign, 4).unwrap();
    let d = select_swap_clusters(&table, 0.75).unwrap();
    assert_eq!(d.swap_set, BTreeSet::from([1]));
    let after = adjust(&recs, &assign, &d).unwrap();
    let rep = report(&recs, &after, &table, &d).unwrap();
    let oracle = (60.0 - 4.0) / n;
    assert!((rep.after.overall_accuracy - rep.before.overall_accuracy - oracle).abs() < 1e-12);
    assert!((rep.delta_overall_pp - 100.0 * oracle).abs() < 1e-9);
    // the after matrix follows from the before matrix plus the flipped cluster
    let c1 = table.get(1).unwrap().outcomes;
    let b = rep.before.matrix;
    let expected = ConfusionMatrix::new(
        b.tp - c1.tp + c1.fn_,
        b.tn - c1.tn + c1.fp,
        b.fp - c1.fp + c1.tn,
        b.fn_ - c1.fn_ + c1.tp,
    );
    assert_eq!(rep.after.matrix, expected);
}

#[test]
fn report_identity_and_mismatch() {
    let recs = cluster_records(0, 8, 2);
    let assign = vec![1; 10];
    let table = cluster_reliability(&recs, &assign, 1).unwrap();
    let d = select_swap_clusters(&table, 0.75).unwrap();
    let rep = report(&recs, &recs, &table, &d).unwrap();
    assert_eq!(rep.delta_overall_pp, 0.0);
    assert_eq!(rep.delta_average_class_pp, Some(0.0));
    assert!(report(&recs, &recs[1..], &table, &d).is_err());
}

#[test]
fn annotation() {
    let mut recs = cluster_records(0, 1, 19);
    recs.extend(cluster_records(100, 20, 0));
    let assign: Vec<usize> = (0..40).map(|i| i / 20 + 1).collect();
    let table = cluster_reliability(&recs, &assign, 3).unwrap();
    let out = annotate(&recs, &assign, &table).unwrap();
    assert_eq!(out.len(), recs.len());
    assert!(out.iter().zip(&recs).all(|(a, b)| a.image_id == b.image_id));
    assert_eq!(out[0].unreliability, Some(0.95));
    assert!((out[0].reliability().unwrap() - 0.05).abs() < 1e-12);
    assert_eq!(out[39].reliability(), Some(1.0));
    assert!(matches!(annotate(&recs[..1], &[3], &table), Err(Error::UnknownCluster(3))));
}

fn map(v: f32, id: &str) -> SaliencyMap {
    SaliencyMap::new(2, 3, vec![v; 6], SaliencyMethod::GradCam, id, Ready).unwrap()
}

#[test]
fn prototype_means() {
    let shape = SaliencyMap::new(2, 3, vec![0.1, 0.5, 0.2, 0.9, 0.0, 0.3], SaliencyMethod::Osm, "a", Ready).unwrap();
    let maps = vec![shape.clone(), shape.clone(), map(0.0, "b"), map(1.0, "c")];
    let (protos, omitted) = prototypes(&maps, &[1, 1, 3, 3], 3).unwrap();
    assert_eq!(omitted, vec![2]);
    assert_eq!(protos.len(), 2);
    assert_eq!(protos[0].map.values, shape.values);
    assert_eq!(protos[1].map.values, vec![0.5; 6]);
    assert_eq!(protos[1].members, 2);
}

#[test]
fn one_prototype_file_set_per_cluster() {
    let maps: Vec<SaliencyMap> = (0..16).map(|i| map(i as f32, &format!("m{i}"))).collect();
    let assign: Vec<usize> = (0..16).map(|i| i % 8 + 1).collect();
    let (protos, _) = prototypes(&maps, &assign, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_prototypes(dir.path(), &protos).unwrap();
    let pgm = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgm, 8);
    let bytes = std::fs::read(dir.path().join("prototype-1.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5"));
}

#[test]
fn sweep_and_report_files() {
    let mut recs = cluster_records(0, 0, 20);
    recs.extend(cluster_records(100, 15, 5));
    let assign: Vec<usize> = (0..40).map(|i| i / 20 + 1).collect();
    let table = cluster_reliability(&recs, &assign, 2).unwrap();
    let rows = threshold_sweep(&recs, &assign, &table, &default_sweep_thresholds()).unwrap();
    assert_eq!(rows.len(), 10);
    assert!((rows[0].threshold - 0.5).abs() < 1e-12 && (rows[9].threshold - 0.95).abs() < 1e-12);
    assert!(rows.iter().all(|r| r.swap_set == BTreeSet::from([1])));
    let d = select_swap_clusters(&table, 0.75).unwrap();
    let after = annotate(&adjust(&recs, &assign, &d).unwrap(), &assign, &table).unwrap();
    let rep = report(&recs, &after, &table, &d).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_report(dir.path(), "val", &rep).unwrap();
    let parsed: ReliabilityReport = serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(parsed, rep);
    let csv = std::fs::read_to_string(&files[2]).unwrap();
    assert_eq!(csv.lines().count(), 41);
    write_sweep_csv(&dir.path().join("sweep.csv"), &rows).unwrap();
}

fn arb_case() -> impl Strategy<Value = (Vec<PredictionRecord>, Vec<usize>)> {
    prop::collection::vec((0usize..4, any::<bool>(), any::<bool>(), 1usize..5), 1..60).prop_map(|v| {
        let recs = v
            .iter()
            .enumerate()
            .map(|(i, &(_, p, t, _))| {
                record(i, if p { Ready } else { NotReady }, if t { Ready } else { NotReady })
            })
            .collect();
        (recs, v.iter().map(|x| x.3).collect())
    })
}

proptest! {
    #[test]
    fn swapped_cluster_correct_equals_former_false((recs, assign) in arb_case(), t in 0.0f64..1.0) {
        let table = cluster_reliability(&recs, &assign, 4).unwrap();
        let d = select_swap_clusters(&table, t).unwrap();
        let after = adjust(&recs, &assign, &d).unwrap();
        prop_assert_eq!(&adjust(&after, &assign, &d).unwrap(), &recs);
        let after_table = cluster_reliability(&after, &assign, 4).unwrap();
        for c in &table.clusters {
            let new = after_table.get(c.cluster_id).unwrap();
            if d.swap_set.contains(&c.cluster_id) {
                prop_assert_eq!(new.outcomes.correct(), c.false_count);
            } else {
                prop_assert_eq!(new, c);
            }
        }
        // empty clusters are never swapped
        prop_assert!(table.empty_clusters.iter().all(|e| !d.swap_set.contains(e)));
    }

    #[test]
    fn accuracy_rises_iff_swapped_clusters_are_mostly_wrong((recs, assign) in arb_case(), t in 0.0f64..1.0) {
        let table = cluster_reliability(&recs, &assign, 4).unwrap();
        let d = select_swap_clusters(&table, t).unwrap();
        prop_assume!(!d.swap_set.is_empty());
        let before = SetSummary::of(&recs).unwrap().overall_accuracy;
        let after = SetSummary::of(&adjust(&recs, &assign, &d).unwrap()).unwrap().overall_accuracy;
        let all_majority_wrong = d.swap_set.iter().all(|c| table.get(*c).unwrap().r > 0.5);
        if all_majority_wrong {
            prop_assert!(after > before);
        }
        if t >= 0.5 {
            prop_assert!(after > before);
        }
    }

    #[test]
    fn annotate_preserves_order((recs, assign) in arb_case()) {
        let table = cluster_reliability(&recs, &assign, 4).unwrap();
        let out = annotate(&recs, &assign, &table).unwrap();
        prop_assert_eq!(out.len(), recs.len());
        for ((a, b), c) in out.iter().zip(&recs).zip(&assign) {
            prop_assert_eq!(&a.image_id, &b.image_id);
            prop_assert_eq!(a.cluster_id, Some(*c));
        }
    }

    #[test]
    fn prototypes_ignore_member_order(vals in prop::collection::vec(0.0f32..1.0, 2..12)) {
        let maps: Vec<SaliencyMap> = vals.iter().enumerate().map(|(i, &v)| map(v, &format!("m{i}"))).collect();
        let assign = vec![1; maps.len()];
        let mut rev = maps.clone();
        rev.reverse();
        let (a, _) = prototypes(&maps, &assign, 1).unwrap();
        let (b, _) = prototypes(&rev, &assign, 1).unwrap();
        for (x, y) in a[0].map.values.iter().zip(&b[0].map.values) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}
