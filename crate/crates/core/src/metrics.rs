//! Confusion counts with attack as the positive class.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::domain;
use crate::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (self.true_pos + self.true_neg) as f64 / total as f64
    }

    pub fn record(&mut self, pred: Label, truth: Label) {
        match (pred, truth) {
            (Label::Attack, Label::Attack) => self.true_pos += 1,
            (Label::NoAttack, Label::NoAttack) => self.true_neg += 1,
            (Label::Attack, Label::NoAttack) => self.false_pos += 1,
            (Label::NoAttack, Label::Attack) => self.false_neg += 1,
        }
    }
}

/// Confusion counts and accuracy of `preds` against `labels`.
pub fn confusion(preds: &[Label], labels: &[Label]) -> Result<(ConfusionCounts, f64)> {
    if preds.len() != labels.len() {
        return Err(domain!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        ));
    }
    if preds.is_empty() {
        return Err(domain!("no predictions to score"));
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in preds.iter().zip(labels) {
        c.record(*p, *t);
    }
    Ok((c, c.accuracy()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use Label::{Attack as A, NoAttack as N};

    #[test]
    fn all_correct() {
        let (c, acc) = confusion(&[A, N, A], &[A, N, A]).unwrap();
        assert_eq!((c.false_pos, c.false_neg), (0, 0));
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn all_wrong() {
        let (_, acc) = confusion(&[N, A, A], &[A, N, N]).unwrap();
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn arithmetic() {
        let c = ConfusionCounts {
            true_pos: 3,
            true_neg: 5,
            false_pos: 1,
            false_neg: 1,
        };
        assert!((c.accuracy() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(confusion(&[A], &[A, N]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn accuracy_is_mean_correctness(pairs in proptest::collection::vec((proptest::bool::ANY, proptest::bool::ANY), 1..200)) {
            let preds: Vec<Label> = pairs.iter().map(|p| Label::from_attack(p.0)).collect();
            let labels: Vec<Label> = pairs.iter().map(|p| Label::from_attack(p.1)).collect();
            let (c, acc) = confusion(&preds, &labels).unwrap();
            let direct = pairs.iter().filter(|p| p.0 == p.1).count() as f64 / pairs.len() as f64;
            proptest::prop_assert_eq!(acc, direct);
            proptest::prop_assert_eq!(c.total(), pairs.len());
        }
    }
}
