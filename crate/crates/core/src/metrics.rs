//! Confusion-matrix bookkeeping with `Ready` as the positive class.
//!
//! Accuracies are fractions in `[0, 1]`; conversion to percentages happens
//! only when reports are rendered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassLabel, PredictionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfusionOutcome {
    TP,
    TN,
    FP,
    FN,
}

impl ConfusionOutcome {
    pub fn is_false(self) -> bool {
        matches!(self, ConfusionOutcome::FP | ConfusionOutcome::FN)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConfusionOutcome::TP => "TP",
            ConfusionOutcome::TN => "TN",
            ConfusionOutcome::FP => "FP",
            ConfusionOutcome::FN => "FN",
        }
    }
}

pub fn outcome_of(predicted: ClassLabel, truth: ClassLabel) -> ConfusionOutcome {
    match (predicted, truth) {
        (ClassLabel::Ready, ClassLabel::Ready) => ConfusionOutcome::TP,
        (ClassLabel::NotReady, ClassLabel::NotReady) => ConfusionOutcome::TN,
        (ClassLabel::Ready, ClassLabel::NotReady) => ConfusionOutcome::FP,
        (ClassLabel::NotReady, ClassLabel::Ready) => ConfusionOutcome::FN,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, outcome: ConfusionOutcome) {
        match outcome {
            ConfusionOutcome::TP => self.tp += 1,
            ConfusionOutcome::TN => self.tn += 1,
            ConfusionOutcome::FP => self.fp += 1,
            ConfusionOutcome::FN => self.fn_ += 1,
        }
    }

    pub fn from_outcomes(outcomes: impl IntoIterator<Item = ConfusionOutcome>) -> Self {
        let mut cm = Self::default();
        for o in outcomes {
            cm.record(o);
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }

    pub fn false_count(&self) -> u64 {
        self.fp + self.fn_
    }

    pub fn overall_accuracy(&self) -> Result<f64> {
        overall_accuracy(self)
    }

    pub fn average_class_accuracy(&self) -> Result<f64> {
        average_class_accuracy(self)
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, rhs: Self) -> Self {
        ConfusionMatrix::new(
            self.tp + rhs.tp,
            self.tn + rhs.tn,
            self.fp + rhs.fp,
            self.fn_ + rhs.fn_,
        )
    }
}

/// Count outcomes over records that all carry ground truth.
pub fn confusion_matrix(records: &[PredictionRecord]) -> Result<ConfusionMatrix> {
    if records.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    let mut cm = ConfusionMatrix::default();
    for r in records {
        let truth = r
            .truth
            .ok_or_else(|| Error::invalid(format!("record {} has no ground truth", r.image_id)))?;
        cm.record(outcome_of(r.predicted, truth));
    }
    Ok(cm)
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    Ok(cm.correct() as f64 / total as f64)
}

/// Mean of the per-class recalls.
pub fn average_class_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let positives = cm.tp + cm.fn_;
    let negatives = cm.tn + cm.fp;
    if positives == 0 {
        return Err(Error::ClassAbsent(ClassLabel::Ready.as_str()));
    }
    if negatives == 0 {
        return Err(Error::ClassAbsent(ClassLabel::NotReady.as_str()));
    }
    Ok(0.5 * (cm.tp as f64 / positives as f64 + cm.tn as f64 / negatives as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClassScores;
    use proptest::prelude::*;

    fn record(id: usize, predicted: ClassLabel, truth: ClassLabel) -> PredictionRecord {
        let p = if predicted == ClassLabel::Ready { [0.1, 0.9] } else { [0.9, 0.1] };
        PredictionRecord::new(format!("img{id}"), ClassScores::new(p).unwrap(), Some(truth))
    }

    #[test]
    fn outcome_definitions() {
        use ClassLabel::*;
        assert_eq!(outcome_of(Ready, Ready), ConfusionOutcome::TP);
        assert_eq!(outcome_of(NotReady, Ready), ConfusionOutcome::FN);
        assert_eq!(outcome_of(Ready, NotReady), ConfusionOutcome::FP);
        assert_eq!(outcome_of(NotReady, NotReady), ConfusionOutcome::TN);
    }

    #[test]
    fn counts_small_set() {
        use ClassLabel::*;
        let recs = vec![
            record(0, Ready, Ready),
            record(1, Ready, Ready),
            record(2, NotReady, Ready),
            record(3, NotReady, NotReady),
        ];
        assert_eq!(confusion_matrix(&recs).unwrap(), ConfusionMatrix::new(2, 1, 0, 1));
        assert!(matches!(confusion_matrix(&[]), Err(Error::EmptyEvaluationSet)));
    }

    #[test]
    fn counts_planted_194() {
        // planted pattern: outcome index cycles with a stride that is coprime to 4
        let pairs = [
            (ClassLabel::Ready, ClassLabel::Ready),
            (ClassLabel::NotReady, ClassLabel::NotReady),
            (ClassLabel::Ready, ClassLabel::NotReady),
            (ClassLabel::NotReady, ClassLabel::Ready),
        ];
        let mut expected = [0u64; 4];
        let recs: Vec<_> = (0..194)
            .map(|i| {
                let k = (i * 7 + i / 3) % 4;
                expected[k] += 1;
                record(i, pairs[k].0, pairs[k].1)
            })
            .collect();
        let cm = confusion_matrix(&recs).unwrap();
        assert_eq!([cm.tp, cm.tn, cm.fp, cm.fn_], expected);
        assert_eq!(cm.total(), 194);
    }

    #[test]
    fn accuracies() {
        let perfect = ConfusionMatrix::new(2, 2, 0, 0);
        assert_eq!(overall_accuracy(&perfect).unwrap(), 1.0);
        let cm = ConfusionMatrix::new(50, 30, 10, 10);
        assert!((overall_accuracy(&cm).unwrap() - 0.80).abs() < 1e-12);
        // 0.5 * (50/60 + 30/40)
        assert!((average_class_accuracy(&cm).unwrap() - 0.791_666_666_666_666_7).abs() < 1e-12);
        assert_eq!(overall_accuracy(&ConfusionMatrix::new(0, 0, 1, 1)).unwrap(), 0.0);
        assert_eq!(average_class_accuracy(&ConfusionMatrix::new(5, 5, 0, 0)).unwrap(), 1.0);
        assert!(matches!(
            average_class_accuracy(&ConfusionMatrix::new(1, 0, 0, 2)),
            Err(Error::ClassAbsent(_))
        ));
        assert!(overall_accuracy(&ConfusionMatrix::default()).is_err());
    }

    fn arb_cm() -> impl Strategy<Value = ConfusionMatrix> {
        (1u64..200, 0u64..200, 1u64..200, 0u64..200)
            .prop_map(|(tp, tn, fp, fn_)| ConfusionMatrix::new(tp, tn, fp, fn_))
    }

    proptest! {
        #[test]
        fn scale_invariance(cm in arb_cm(), k in 1u64..50) {
            let scaled = ConfusionMatrix::new(cm.tp * k, cm.tn * k, cm.fp * k, cm.fn_ * k);
            prop_assert!((overall_accuracy(&cm).unwrap() - overall_accuracy(&scaled).unwrap()).abs() < 1e-12);
            prop_assert!((average_class_accuracy(&cm).unwrap() - average_class_accuracy(&scaled).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn flipping_swaps_outcomes(cm in arb_cm()) {
            // flipping every prediction maps TP<->FN and TN<->FP
            let flipped = ConfusionMatrix::new(cm.fn_, cm.fp, cm.tn, cm.tp);
            let mut recs = Vec::new();
            let mut push = |n: u64, p: ClassLabel, t: ClassLabel| {
                for _ in 0..n { recs.push(record(recs.len(), p, t)); }
            };
            push(cm.tp, ClassLabel::Ready, ClassLabel::Ready);
            push(cm.tn, ClassLabel::NotReady, ClassLabel::NotReady);
            push(cm.fp, ClassLabel::Ready, ClassLabel::NotReady);
            push(cm.fn_, ClassLabel::NotReady, ClassLabel::Ready);
            for r in &mut recs { let p = r.predicted.flip(); r.set_predicted(p); }
            prop_assert_eq!(confusion_matrix(&recs).unwrap(), flipped);
        }

        #[test]
        fn balanced_truth_accuracies_agree(pos in 1u64..100, tp_frac in 0.0f64..=1.0, tn_frac in 0.0f64..=1.0) {
            let tp = (pos as f64 * tp_frac).round() as u64;
            let tn = (pos as f64 * tn_frac).round() as u64;
            let cm = ConfusionMatrix::new(tp, tn, pos - tn, pos - tp);
            prop_assert!((overall_accuracy(&cm).unwrap() - average_class_accuracy(&cm).unwrap()).abs() < 1e-12);
        }
    }
}
