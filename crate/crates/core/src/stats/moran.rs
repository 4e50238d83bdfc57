use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::weights::{row_standardize, ContiguityMatrix, RowStandardizedWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Positive autocorrelation: count permutations with I at least the observed value.
    #[default]
    Greater,
    /// Count permutations at least as far from E[I] as the observed value.
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub n_permutations: usize,
    pub seed: u64,
    #[serde(default)]
    pub alternative: Alternative,
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

fn default_parallel() -> bool {
    true
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            n_permutations: 999,
            seed: 0,
            alternative: Alternative::Greater,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub statistic: f64,
    pub expected_under_null: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: u64,
    pub alternative: Alternative,
}

impl MoranResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "statistic",
            "expected_under_null",
            "p_value",
            "n_permutations",
            "seed",
        ])?;
        w.write_record([
            self.statistic.to_string(),
            self.expected_under_null.to_string(),
            self.p_value.to_string(),
            self.n_permutations.to_string(),
            self.seed.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io("<moran csv>", e))?;
        Ok(())
    }
}

fn deviations(values: &[f64], n_regions: usize) -> Result<(Vec<f64>, f64)> {
    if values.len() != n_regions {
        return Err(Error::invalid(format!(
            "{} values for {n_regions} regions",
            values.len()
        )));
    }
    if n_regions < 3 {
        return Err(Error::invalid(format!(
            "Moran's I needs at least 3 regions, got {n_regions}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in Moran input"));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::ZeroVariance("Moran's I of a constant vector".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let zz = z.iter().map(|v| v * v).sum::<f64>();
    if zz == 0.0 {
        return Err(Error::ZeroVariance("Moran's I of a constant vector".into()));
    }
    Ok((z, zz))
}

fn cross_product(z: &[f64], w: &RowStandardizedWeights) -> f64 {
    (0..w.len())
        .map(|i| z[i] * w.row(i).iter().map(|&(j, wij)| wij * z[j]).sum::<f64>())
        .sum()
}

/// Global Moran's I, `(n / S0) * z'Wz / z'z` with `z` the deviations from the mean.
pub fn moran_i(values: &[f64], w: &RowStandardizedWeights) -> Result<f64> {
    let (z, zz) = deviations(values, w.len())?;
    let n = w.len() as f64;
    Ok(n / w.s0() * cross_product(&z, w) / zz)
}

/// Moran's I with a conditional-randomisation p-value. Permutation `k` draws
/// from ChaCha8 stream `k` under `seed`, so the parallel and serial paths agree.
pub fn moran_permutation_test(
    values: &[f64],
    w: &RowStandardizedWeights,
    cfg: &PermutationConfig,
) -> Result<MoranResult> {
    if cfg.n_permutations < 99 {
        return Err(Error::invalid(format!(
            "at least 99 permutations required, got {}",
            cfg.n_permutations
        )));
    }
    let (z, zz) = deviations(values, w.len())?;
    let n = w.len() as f64;
    let scale = n / w.s0() / zz;
    let observed = scale * cross_product(&z, w);
    let expected = -1.0 / (n - 1.0);

    let permuted = |k: usize| -> f64 {
        let mut zp = z.clone();
        zp.shuffle(&mut rng::stream(cfg.seed, k as u64));
        scale * cross_product(&zp, w)
    };
    let extreme = |i_perm: f64| -> bool {
        match cfg.alternative {
            Alternative::Greater => i_perm >= observed,
            Alternative::TwoSided => (i_perm - expected).abs() >= (observed - expected).abs(),
        }
    };
    let count = if cfg.parallel {
        (0..cfg.n_permutations)
            .into_par_iter()
            .filter(|&k| extreme(permuted(k)))
            .count()
    } else {
        (0..cfg.n_permutations)
            .filter(|&k| extreme(permuted(k)))
            .count()
    };

    Ok(MoranResult {
        statistic: observed,
        expected_under_null: expected,
        p_value: (1 + count) as f64 / (1 + cfg.n_permutations) as f64,
        n_permutations: cfg.n_permutations,
        seed: cfg.seed,
        alternative: cfg.alternative,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMoran {
    pub statistic: f64,
    /// Regions used, in the weights' order.
    pub regions: Vec<String>,
    /// Regions dropped because no other subset member neighbours them.
    pub dropped: Vec<String>,
}

/// Moran's I over a subset of regions using the induced contiguity, re-row-standardised.
pub fn moran_subset(
    values: &[f64],
    w: &RowStandardizedWeights,
    subset: &[String],
) -> Result<SubsetMoran> {
    if values.len() != w.len() {
        return Err(Error::invalid(format!(
            "{} values for {} regions",
            values.len(),
            w.len()
        )));
    }
    let ids = w.region_ids();
    let mut members: Vec<usize> = subset
        .iter()
        .map(|r| {
            ids.iter()
                .position(|x| x == r)
                .ok_or_else(|| Error::invalid(format!("subset region '{r}' not in weights")))
        })
        .collect::<Result<_>>()?;
    members.sort_unstable();
    members.dedup();
    if members.len() < 3 {
        return Err(Error::invalid(format!(
            "subset has {} regions; at least 3 required",
            members.len()
        )));
    }
    let pos: std::collections::HashMap<usize, usize> =
        members.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut edges = Vec::new();
    for (k, &i) in members.iter().enumerate() {
        for &(j, _) in w.row(i) {
            if let Some(&l) = pos.get(&j) {
                edges.push((k, l));
            }
        }
    }
    let mut degree = vec![0usize; members.len()];
    for &(a, _) in &edges {
        degree[a] += 1;
    }
    let keep: Vec<usize> = (0..members.len()).filter(|&k| degree[k] > 0).collect();
    let dropped: Vec<String> = (0..members.len())
        .filter(|&k| degree[k] == 0)
        .map(|k| ids[members[k]].clone())
        .collect();
    if !dropped.is_empty() {
        warn!(
            "subset Moran: dropping {} isolated regions: {:?}",
            dropped.len(),
            dropped
        );
    }
    if keep.len() < 3 {
        return Err(Error::invalid(format!(
            "subset has {} connected regions; at least 3 required",
            keep.len()
        )));
    }
    let remap: std::collections::HashMap<usize, usize> =
        keep.iter().enumerate().map(|(n, &k)| (k, n)).collect();
    let sub_ids: Vec<String> = keep.iter().map(|&k| ids[members[k]].clone()).collect();
    let sub_edges = edges
        .iter()
        .filter_map(|&(a, b)| Some((*remap.get(&a)?, *remap.get(&b)?)));
    let sub_w = row_standardize(&ContiguityMatrix::from_edges(sub_ids.clone(), sub_edges)?)?;
    let sub_values: Vec<f64> = keep.iter().map(|&k| values[members[k]]).collect();
    Ok(SubsetMoran {
        statistic: moran_i(&sub_values, &sub_w)?,
        regions: sub_ids,
        dropped,
    })
}
