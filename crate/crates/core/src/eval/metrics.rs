use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Positive class is 1 (poor).
pub fn confusion(truth: &[u8], pred: &[u8]) -> Result<ConfusionCounts> {
    if truth.len() != pred.len() {
        return Err(Error::invalid(format!(
            "{} truth labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("confusion of empty vectors"));
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in truth.iter().zip(pred) {
        match (t != 0, p != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Share of the truly poor that the rule misses: `fn / (tp + fn)`.
pub fn exclusion_error(c: &ConfusionCounts) -> Result<f64> {
    if c.tp + c.fn_ == 0 {
        return Err(Error::UndefinedMetric("no poor in truth"));
    }
    Ok(c.fn_ as f64 / (c.tp + c.fn_) as f64)
}

/// Share of those targeted who are not poor: `fp / (tp + fp)`.
pub fn inclusion_error(c: &ConfusionCounts) -> Result<f64> {
    if c.tp + c.fp == 0 {
        return Err(Error::UndefinedMetric("no predicted poor"));
    }
    Ok(c.fp as f64 / (c.tp + c.fp) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondaryMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub r2: Option<f64>,
}

/// `1 - SS_res / SS_tot`.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::invalid("R² needs aligned, non-empty score vectors"));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance("R² of a constant target".into()));
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Sensitivity (`1 - EE`) and specificity are `None` when their denominator
/// is zero; R² only when `scores` is given.
pub fn secondary_metrics(
    c: &ConfusionCounts,
    scores: Option<(&[f64], &[f64])>,
) -> Result<SecondaryMetrics> {
    let sensitivity = exclusion_error(c).ok().map(|ee| 1.0 - ee);
    let specificity = (c.tn + c.fp > 0).then(|| c.tn as f64 / (c.tn + c.fp) as f64);
    let r2 = scores.map(|(t, p)| r_squared(t, p)).transpose()?;
    Ok(SecondaryMetrics {
        sensitivity,
        specificity,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let c = confusion(&[1, 1, 1, 0, 0], &[1, 0, 1, 0, 1]).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 2,
                tn: 1,
                fp: 1,
                fn_: 1
            }
        );
        assert!((exclusion_error(&c).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((inclusion_error(&c).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn arithmetic_examples() {
        let c = ConfusionCounts {
            tp: 3,
            fn_: 1,
            ..Default::default()
        };
        assert_eq!(exclusion_error(&c).unwrap(), 0.25);
        let c = ConfusionCounts {
            tp: 8,
            fp: 2,
            ..Default::default()
        };
        assert_eq!(inclusion_error(&c).unwrap(), 0.2);
        let c = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(exclusion_error(&c).unwrap(), 0.0);
        assert_eq!(inclusion_error(&c).unwrap(), 0.0);
    }

    #[test]
    fn undefined_cases_error() {
        let c = confusion(&[0, 0], &[0, 1]).unwrap();
        assert!(matches!(
            exclusion_error(&c),
            Err(Error::UndefinedMetric("no poor in truth"))
        ));
        let c = confusion(&[1, 0], &[0, 0]).unwrap();
        assert!(matches!(
            inclusion_error(&c),
            Err(Error::UndefinedMetric("no predicted poor"))
        ));
        assert!(confusion(&[1], &[1, 0]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn r_squared_examples() {
        let t = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        assert!(r_squared(&t, &[3.5; 4]).unwrap().abs() < 1e-15);
        assert!(r_squared(&[2.0; 3], &[1.0, 2.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn identities(truth in proptest::collection::vec(0u8..2, 1..60), seed in any::<u64>()) {
            use rand::Rng;
            let mut r = crate::rng::rng(seed);
            let pred: Vec<u8> = truth.iter().map(|_| r.random_range(0..2)).collect();
            let c = confusion(&truth, &pred).unwrap();
            prop_assert_eq!(c.total() as usize, truth.len());
            let s = secondary_metrics(&c, None).unwrap();
            if let (Ok(ee), Some(sens)) = (exclusion_error(&c), s.sensitivity) {
                prop_assert_eq!(ee + sens, 1.0);
                prop_assert!((0.0..=1.0).contains(&ee));
            }
            if let Ok(ie) = inclusion_error(&c) {
                let precision = c.tp as f64 / (c.tp + c.fp) as f64;
                prop_assert!((ie - (1.0 - precision)).abs() < 1e-15);
            }
        }
    }
}
