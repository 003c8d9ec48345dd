use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mts::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(y_true: &[Label], y_pred: &[Label]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(invalid(format!(
                "{} true labels, {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let mut c = Confusion::default();
        for (t, p) in y_true.iter().zip(y_pred) {
            match (t, p) {
                (Label::Positive, Label::Positive) => c.tp += 1,
                (Label::Negative, Label::Positive) => c.fp += 1,
                (Label::Negative, Label::Negative) => c.tn += 1,
                (Label::Positive, Label::Negative) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> MetricTriple {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        MetricTriple {
            acc: ratio(self.tp + self.tn, self.total()),
            rec: ratio(self.tp, self.tp + self.fn_),
            f1: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
        }
    }
}

/// Accuracy, and recall and F1 of the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTriple {
    pub acc: f64,
    pub rec: f64,
    pub f1: f64,
}

pub fn confusion_metrics(y_true: &[Label], y_pred: &[Label]) -> Result<MetricTriple> {
    Ok(Confusion::from_labels(y_true, y_pred)?.metrics())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Negative as N, Positive as P};

    fn from_counts(tp: usize, fn_: usize, fp: usize, tn: usize) -> (Vec<Label>, Vec<Label>) {
        let mut t = Vec::new();
        let mut p = Vec::new();
        for (n, a, b) in [(tp, P, P), (fn_, P, N), (fp, N, P), (tn, N, N)] {
            t.extend(std::iter::repeat(a).take(n));
            p.extend(std::iter::repeat(b).take(n));
        }
        (t, p)
    }

    #[test]
    fn all_correct() {
        let (t, p) = from_counts(3, 0, 0, 4);
        let m = confusion_metrics(&t, &p).unwrap();
        assert_eq!((m.acc, m.rec, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn reconstructed_confusion_matrix() {
        let (t, p) = from_counts(26, 2, 14, 14);
        let m = confusion_metrics(&t, &p).unwrap();
        assert_eq!(m.acc, 40.0 / 56.0);
        assert_eq!(m.rec, 26.0 / 28.0);
        assert_eq!(m.f1, 52.0 / 68.0);
    }

    #[test]
    fn no_positive_predictions() {
        let (t, p) = from_counts(0, 5, 0, 5);
        let m = confusion_metrics(&t, &p).unwrap();
        assert_eq!((m.acc, m.rec, m.f1), (0.5, 0.0, 0.0));
        let (t, p) = from_counts(0, 0, 0, 5);
        let m = confusion_metrics(&t, &p).unwrap();
        assert_eq!((m.rec, m.f1), (0.0, 0.0));
    }

    #[test]
    fn length_mismatch() {
        assert!(confusion_metrics(&[P], &[P, N]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..40), rot in 0usize..40) {
            let lab = |b: bool| if b { P } else { N };
            let t: Vec<Label> = pairs.iter().map(|p| lab(p.0)).collect();
            let p: Vec<Label> = pairs.iter().map(|p| lab(p.1)).collect();
            let m = confusion_metrics(&t, &p).unwrap();
            let r = rot % t.len();
            let (mut t2, mut p2) = (t.clone(), p.clone());
            t2.rotate_left(r);
            p2.rotate_left(r);
            t2.reverse();
            p2.reverse();
            prop_assert_eq!(m, confusion_metrics(&t2, &p2).unwrap());
            for x in [m.acc, m.rec, m.f1] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }
}
