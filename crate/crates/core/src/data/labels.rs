use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Binary poverty status per household: 1 = poor, 0 = non-poor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovertyLabels {
    pub household_id: Vec<String>,
    pub labels: Vec<u8>,
    pub threshold_value: f64,
    pub threshold_quantile: f64,
}

impl PovertyLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn fraction_poor(&self) -> f64 {
        self.labels.iter().map(|&l| l as f64).sum::<f64>() / self.labels.len() as f64
    }

    pub fn select(&self, idx: &[usize]) -> PovertyLabels {
        PovertyLabels {
            household_id: idx.iter().map(|&i| self.household_id[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            threshold_value: self.threshold_value,
            threshold_quantile: self.threshold_quantile,
        }
    }

    /// Labels for `ds` rows under an already-fixed threshold.
    pub fn apply(ds: &Dataset, threshold_value: f64, threshold_quantile: f64) -> PovertyLabels {
        PovertyLabels {
            household_id: ds.household_id.clone(),
            labels: ds
                .pce
                .iter()
                .map(|&p| u8::from(p <= threshold_value))
                .collect(),
            threshold_value,
            threshold_quantile,
        }
    }
}

/// Nearest-rank quantile: the `ceil(q * n)`-th smallest value (1-based).
pub fn nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("quantile {q} outside (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // guard q*n landing a hair above an integer, e.g. 0.7 * 10
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok(sorted[rank - 1])
}

/// Poor iff pce is at or below the nearest-rank `quantile` of `reference`.
pub fn binarize_target(ds: &Dataset, quantile: f64, reference: &Dataset) -> Result<PovertyLabels> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot label an empty dataset"));
    }
    let threshold = nearest_rank(&reference.pce, quantile)?;
    Ok(PovertyLabels::apply(ds, threshold, quantile))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(pce: Vec<f64>) -> Dataset {
        let n = pce.len();
        Dataset::new(
            (0..n).map(|i| format!("h{i}")).collect(),
            vec!["A".into(); n],
            vec![2020; n],
            pce,
            vec![],
            "t",
        )
        .unwrap()
    }

    #[test]
    fn forty_percent_of_one_to_ten() {
        let d = ds((1..=10).map(f64::from).collect());
        let l = binarize_target(&d, 0.4, &d).unwrap();
        assert_eq!(l.threshold_value, 4.0);
        assert_eq!(l.labels, vec![1, 1, 1, 1, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn constant_expenditure_is_all_poor() {
        let d = ds(vec![5.0; 7]);
        let l = binarize_target(&d, 0.4, &d).unwrap();
        assert!(l.labels.iter().all(|&x| x == 1));
    }

    #[test]
    fn test_split_uses_reference_threshold() {
        let train = ds(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let test = ds(vec![2.5, 2.0, 9.0]);
        let l = binarize_target(&test, 0.4, &train).unwrap();
        assert_eq!(
            l.threshold_value,
            binarize_target(&train, 0.4, &train)
                .unwrap()
                .threshold_value
        );
        assert_eq!(l.labels, vec![0, 1, 0]);
    }

    #[test]
    fn empty_target_is_an_error() {
        let train = ds(vec![1.0]);
        assert!(binarize_target(&ds(vec![]), 0.4, &train).is_err());
    }

    proptest! {
        #[test]
        fn fraction_poor_is_exact_without_ties(n in 1usize..300, q in 0.01f64..0.99) {
            let d = ds((1..=n).map(|i| i as f64 * 1.5).collect());
            let l = binarize_target(&d, q, &d).unwrap();
            let k = ((q * n as f64) - 1e-9).ceil().max(1.0);
            prop_assert_eq!(l.labels.iter().filter(|&&x| x == 1).count() as f64, k);
        }
    }
}
