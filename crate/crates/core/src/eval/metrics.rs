use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detection outcomes with adversarial as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Counts from per-sample "flagged" decisions on each class.
    pub fn from_flags(benign_flagged: &[bool], adversarial_flagged: &[bool]) -> Self {
        let fp = benign_flagged.iter().filter(|&&f| f).count();
        let tp = adversarial_flagged.iter().filter(|&&f| f).count();
        Self {
            tp,
            tn: benign_flagged.len() - fp,
            fp,
            fn_: adversarial_flagged.len() - tp,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_anom: f64,
    pub balanced_accuracy: f64,
    pub far: f64,
    pub dr: f64,
    /// Names of quantities whose denominator was zero.
    pub degenerate: Vec<&'static str>,
}

fn ratio(num: usize, den: usize, name: &'static str, flags: &mut Vec<&'static str>) -> f64 {
    if den == 0 {
        flags.push(name);
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let mut flags = Vec::new();
    let accuracy = ratio(c.tp + c.tn, c.total(), "accuracy", &mut flags);
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut flags);
    let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut flags);
    let far = ratio(c.fp, c.fp + c.tn, "far", &mut flags);
    let dr = recall;
    let f1_anom = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        flags.push("f1_anom");
        0.0
    };
    if c.tp + c.fn_ == 0 || c.fp + c.tn == 0 {
        flags.push("balanced_acc");
    }
    Metrics {
        accuracy,
        precision,
        recall,
        f1_anom,
        balanced_accuracy: (dr + (1.0 - far)) / 2.0,
        far,
        dr,
        degenerate: flags,
    }
}

/// Probability that an adversarial score exceeds a benign one, ties
/// counting one half.
pub fn auroc(benign: &[f64], adversarial: &[f64]) -> Result<f64> {
    if benign.is_empty() || adversarial.is_empty() {
        return Err(Error::Usage("auroc needs at least one score per class".into()));
    }
    if benign.iter().chain(adversarial).any(|s| s.is_nan()) {
        return Err(Error::Usage("auroc scores must not be NaN".into()));
    }
    let mut sorted = benign.to_vec();
    sorted.sort_by(f64::total_cmp);
    // twice the Mann-Whitney count, kept integral
    let mut twice: u128 = 0;
    for &a in adversarial {
        let below = sorted.partition_point(|&b| b < a);
        let not_above = sorted.partition_point(|&b| b <= a);
        twice += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice as f64 / (2.0 * benign.len() as f64 * adversarial.len() as f64))
}

/// Mean confidence of correct predictions minus that of wrong ones. The
/// flag is set (and the value is 0) unless both groups are non-empty.
pub fn rwcg(predictions: &[(bool, f64)]) -> (f64, bool) {
    let (mut right, mut nr, mut wrong, mut nw) = (0.0, 0usize, 0.0, 0usize);
    for &(ok, conf) in predictions {
        if ok {
            right += conf;
            nr += 1;
        } else {
            wrong += conf;
            nw += 1;
        }
    }
    if nr == 0 || nw == 0 {
        return (0.0, true);
    }
    (right / nr as f64 - wrong / nw as f64, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_auroc(b: &[f64], a: &[f64]) -> f64 {
        let mut s = 0.0;
        for x in a {
            for y in b {
                s += if x > y {
                    1.0
                } else if x == y {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (a.len() * b.len()) as f64
    }

    #[test]
    fn hand_computed_counts() {
        let m = metrics(&ConfusionCounts { tp: 9, fn_: 1, tn: 9, fp: 1 });
        for v in [m.accuracy, m.precision, m.recall, m.f1_anom, m.balanced_accuracy, m.dr] {
            assert!((v - 0.9).abs() < 1e-15);
        }
        assert!((m.far - 0.1).abs() < 1e-15);
        assert!(m.degenerate.is_empty());
    }

    #[test]
    fn degenerate_conventions() {
        let m = metrics(&ConfusionCounts { tp: 0, fn_: 5, tn: 5, fp: 0 });
        assert_eq!(m.precision, 0.0);
        assert!(m.degenerate.contains(&"precision"));
        let perfect = metrics(&ConfusionCounts { tp: 4, fn_: 0, tn: 6, fp: 0 });
        assert_eq!((perfect.accuracy, perfect.f1_anom, perfect.balanced_accuracy, perfect.far), (1.0, 1.0, 1.0, 0.0));
        let one_sided = metrics(&ConfusionCounts { tp: 0, fn_: 0, tn: 3, fp: 1 });
        assert!(one_sided.degenerate.contains(&"balanced_acc"));
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 3], &[0.5; 4]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
        let mut r = rng::seeded(3);
        let b: Vec<f64> = (0..20).map(|_| (r.random_range(0..10) as f64) / 10.0).collect();
        let a: Vec<f64> = (0..20).map(|_| (r.random_range(0..10) as f64) / 8.0).collect();
        assert_eq!(auroc(&b, &a).unwrap(), brute_auroc(&b, &a));
    }

    #[test]
    fn rwcg_examples() {
        let (v, degen) = rwcg(&[(true, 0.9), (true, 0.7), (false, 0.6)]);
        assert!((v - 0.2).abs() < 1e-12 && !degen);
        assert_eq!(rwcg(&[(true, 0.8), (true, 0.8)]), (0.0, true));
        assert_eq!(rwcg(&[(true, 0.4), (false, 0.4)]), (0.0, false));
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise(
            b in proptest::collection::vec(-3i32..3, 1..30),
            a in proptest::collection::vec(-3i32..3, 1..30),
        ) {
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            prop_assert!((auroc(&b, &a).unwrap() - brute_auroc(&b, &a)).abs() <= 1e-12);
        }

        #[test]
        fn balanced_identity(tp in 0usize..50, tn in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let m = metrics(&ConfusionCounts { tp, tn, fp, fn_ });
            prop_assert!((m.balanced_accuracy - (m.dr + 1.0 - m.far) / 2.0).abs() <= 1e-15);
            if m.precision + m.recall > 0.0 {
                prop_assert!((m.f1_anom - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() <= 1e-15);
            }
            for v in [m.accuracy, m.precision, m.recall, m.f1_anom, m.balanced_accuracy, m.far, m.dr] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
