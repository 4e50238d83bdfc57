use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Region-stratified random split. Returns `(train, test)` with rows in their
/// original order. Every region with at least two rows lands in both parts;
/// single-row regions go to test.
pub fn split_train_test(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(ds, train_fraction, seed)?;
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}

pub fn split_indices(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.region_id.iter().enumerate() {
        groups.entry(r.as_str()).or_default().push(i);
    }
    let n = ds.len();
    let target = (n as f64 * train_fraction).floor() as usize;

    // per-region quota, clamped so multi-row regions appear on both sides
    let mut alloc: Vec<(usize, usize, f64)> = Vec::with_capacity(groups.len());
    for (g, rows) in groups.values().enumerate() {
        let m = rows.len();
        if m == 1 {
            alloc.push((g, 0, 0.0));
            continue;
        }
        let quota = m as f64 * train_fraction;
        let base = (quota.floor() as usize).clamp(1, m - 1);
        alloc.push((g, base, quota - quota.floor()));
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let mut total: usize = alloc.iter().map(|a| a.1).sum();
    let mut order: Vec<usize> = (0..alloc.len()).collect();
    if total < target {
        // largest remainders first
        order.sort_by(|&a, &b| alloc[b].2.total_cmp(&alloc[a].2).then(a.cmp(&b)));
    } else {
        order.sort_by(|&a, &b| alloc[a].2.total_cmp(&alloc[b].2).then(a.cmp(&b)));
    }
    while total != target {
        let mut moved = false;
        for &g in &order {
            if total == target {
                break;
            }
            if total < target && sizes[g] >= 2 && alloc[g].1 < sizes[g] - 1 {
                alloc[g].1 += 1;
                total += 1;
                moved = true;
            } else if total > target && alloc[g].1 > 1 {
                alloc[g].1 -= 1;
                total -= 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    if total != target {
        warn!("stratified split holds {total} training rows instead of {target}");
    }

    let mut train = Vec::with_capacity(total);
    let mut test = Vec::with_capacity(n - total);
    for (g, (region, rows)) in groups.iter().enumerate() {
        if rows.len() == 1 {
            warn!("region '{region}' has a single row; it goes to the test split");
        }
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng::stream(seed, g as u64));
        let k = alloc[g].1;
        train.extend_from_slice(&shuffled[..k]);
        test.extend_from_slice(&shuffled[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
