//! Synthetic regions and households with known ground truth.
//!
//! All draws come from ChaCha8 streams keyed by `SyntheticSpec::seed`, so a seed
//! reproduces the same tables on every platform.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnData, Dataset, Region, RegionTable, VariableSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::weights::{ContiguityMatrix, RowStandardizedWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Centroids at integer coordinates `(col, row)`.
    Lattice { rows: usize, cols: usize },
    /// Uniform points in `[0, extent]²` with a minimum pairwise distance.
    Random {
        n: usize,
        extent: f64,
        min_separation: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub intercept: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegimeMap {
    /// Every region uses regime 0.
    Single,
    /// Regime 0 west of the median centroid x, regime 1 from the median on.
    WestEast,
    /// Regime index per region, in region order.
    Explicit { regimes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub layout: Layout,
    /// Provinces per side of the map.
    pub province_grid: usize,
    /// Share of regions, nearest the map centre, flagged urban.
    pub urban_fraction: f64,
    pub rho: f64,
    pub households_per_region: usize,
    pub n_features: usize,
    /// Features sharing a latent factor have this correlation.
    pub feature_correlation: f64,
    pub n_factors: usize,
    pub regimes: Vec<Regime>,
    pub regime_map: RegimeMap,
    /// Scale of the SAR region effect added to log expenditure.
    pub region_effect_sd: f64,
    pub noise_sd: f64,
    pub base_log_pce: f64,
    pub year: i32,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two regimes split west/east: shared slopes on the first half of the
    /// features, opposite slopes and intercepts on the rest.
    pub fn heterogeneous(
        layout: Layout,
        households_per_region: usize,
        rho: f64,
        seed: u64,
    ) -> Self {
        let n_features = 6;
        let common = [0.30, -0.20, 0.15];
        let regime_specific = [0.45, -0.35, 0.25];
        let make = |sign: f64| Regime {
            intercept: sign * 0.35,
            beta: common
                .iter()
                .copied()
                .chain(regime_specific.iter().map(|b| sign * b))
                .collect(),
        };
        Self {
            layout,
            province_grid: 2,
            urban_fraction: 0.3,
            rho,
            households_per_region,
            n_features,
            feature_correlation: 0.6,
            n_factors: 3,
            regimes: vec![make(1.0), make(-1.0)],
            regime_map: RegimeMap::WestEast,
            region_effect_sd: 0.25,
            noise_sd: 0.35,
            base_log_pce: 13.0,
            year: 2020,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rho.is_nan() || self.rho.abs() >= 1.0 {
            return Err(Error::invalid(format!(
                "rho = {} must satisfy |rho| < 1",
                self.rho
            )));
        }
        if self.regimes.is_empty() || self.regimes.iter().any(|r| r.beta.len() != self.n_features) {
            return Err(Error::invalid(
                "every regime needs one coefficient per feature",
            ));
        }
        if self.noise_sd < 0.0 || self.region_effect_sd < 0.0 {
            return Err(Error::invalid("noise scales must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.feature_correlation)
            || !(0.0..=1.0).contains(&self.urban_fraction)
        {
            return Err(Error::invalid(
                "feature_correlation and urban_fraction must lie in [0, 1]",
            ));
        }
        if self.province_grid == 0 {
            return Err(Error::invalid("province_grid must be positive"));
        }
        Ok(())
    }
}

pub fn region_id(i: usize) -> String {
    format!("R{i:04}")
}

/// Rook (edge-sharing) contiguity on a lattice laid out row-major.
pub fn rook_lattice(rows: usize, cols: usize) -> Result<ContiguityMatrix> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    ContiguityMatrix::from_edges((0..rows * cols).map(region_id).collect(), edges)
}

fn points(layout: &Layout, seed: u64) -> Result<(Vec<[f64; 2]>, [f64; 2])> {
    match *layout {
        Layout::Lattice { rows, cols } => {
            if rows < 2 || cols < 2 {
                return Err(Error::invalid(format!(
                    "lattice {rows}x{cols} is smaller than 2x2"
                )));
            }
            let pts = (0..rows * cols)
                .map(|i| [(i % cols) as f64, (i / cols) as f64])
                .collect();
            Ok((pts, [cols as f64 - 1.0, rows as f64 - 1.0]))
        }
        Layout::Random {
            n,
            extent,
            min_separation,
        } => {
            if n < 4 {
                return Err(Error::invalid(format!(
                    "{n} random regions; need at least 4"
                )));
            }
            if extent.is_nan() || extent <= 0.0 || min_separation < 0.0 {
                return Err(Error::invalid(
                    "extent must be positive and min_separation non-negative",
                ));
            }
            let mut r = rng::stream(seed, 0);
            let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
            let budget = 1000 * n;
            let mut tries = 0;
            while pts.len() < n {
                tries += 1;
                if tries > budget {
                    return Err(Error::Geometry(format!(
                        "could not place {n} points {min_separation} apart in a square of side {extent}"
                    )));
                }
                let p = [r.random::<f64>() * extent, r.random::<f64>() * extent];
                let ok = pts.iter().all(|q| {
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= min_separation
                });
                if ok {
                    pts.push(p);
                }
            }
            Ok((pts, [extent, extent]))
        }
    }
}

pub fn gen_regions(spec: &SyntheticSpec) -> Result<RegionTable> {
    spec.validate()?;
    let (pts, ext) = points(&spec.layout, rng::derive_seed(spec.seed, "regions"))?;
    let n = pts.len();
    let g = spec.province_grid;
    let cell = |v: f64, e: f64| {
        if e <= 0.0 {
            0
        } else {
            ((v / e * g as f64).floor() as usize).min(g - 1)
        }
    };
    let centre = [ext[0] / 2.0, ext[1] / 2.0];
    let mut by_dist: Vec<usize> = (0..n).collect();
    let d = |i: usize| (pts[i][0] - centre[0]).powi(2) + (pts[i][1] - centre[1]).powi(2);
    by_dist.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
    let n_urban = (spec.urban_fraction * n as f64).round() as usize;
    let mut urban = vec![false; n];
    for &i in &by_dist[..n_urban] {
        urban[i] = true;
    }
    let entries = (0..n)
        .map(|i| {
            let (px, py) = (cell(pts[i][0], ext[0]), cell(pts[i][1], ext[1]));
            Region {
                region_id: region_id(i),
                name: format!("Region {i}"),
                province_id: format!("P{:02}", py * g + px),
                urban_flag: urban[i],
                centroid_x: pts[i][0],
                centroid_y: pts[i][1],
            }
        })
        .collect();
    RegionTable::new(entries)
}

/// Solves `(I - rho·W) y = eps` with standard-normal `eps` drawn from `seed`.
pub fn gen_sar_field(w: &RowStandardizedWeights, rho: f64, seed: u64) -> Result<Vec<f64>> {
    if rho.is_nan() || rho.abs() >= 1.0 {
        return Err(Error::invalid(format!(
            "rho = {rho} must satisfy |rho| < 1"
        )));
    }
    let n = w.len();
    let mut r = rng::rng(seed);
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    if rho == 0.0 {
        return Ok(eps);
    }
    let a = DMatrix::identity(n, n) - w.to_dense() * rho;
    let y = a
        .lu()
        .solve(&DVector::from_vec(eps))
        .ok_or_else(|| Error::Numeric("singular SAR system".into()))?;
    Ok(y.iter().copied().collect())
}

/// Generating parameters, for recovery checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCoefficients {
    pub regimes: Vec<Regime>,
    /// Regime index per region.
    pub region_regime: Vec<usize>,
    /// SAR effect per region before scaling.
    pub region_effect: Vec<f64>,
}

fn regime_of(spec: &SyntheticSpec, regions: &RegionTable) -> Result<Vec<usize>> {
    let n = regions.len();
    let out = match &spec.regime_map {
        RegimeMap::Single => vec![0; n],
        RegimeMap::WestEast => {
            let mut xs: Vec<f64> = regions.entries().iter().map(|r| r.centroid_x).collect();
            xs.sort_by(f64::total_cmp);
            let median = xs[n / 2];
            regions
                .entries()
                .iter()
                .map(|r| usize::from(r.centroid_x >= median))
                .collect()
        }
        RegimeMap::Explicit { regimes } => {
            if regimes.len() != n {
                return Err(Error::invalid(format!(
                    "regime map has {} entries for {n} regions",
                    regimes.len()
                )));
            }
            regimes.clone()
        }
    };
    if let Some(&g) = out.iter().find(|&&g| g >= spec.regimes.len()) {
        return Err(Error::invalid(format!("regime {g} is not defined")));
    }
    Ok(out)
}

pub fn feature_names(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("x{j}")).collect()
}

/// Households with `log pce = base + intercept_g + x·β_g + s·SAR_r + noise`.
pub fn gen_households(
    regions: &RegionTable,
    w: &RowStandardizedWeights,
    spec: &SyntheticSpec,
) -> Result<(Dataset, TrueCoefficients)> {
    spec.validate()?;
    if w.region_ids() != regions.ids().as_slice() {
        return Err(Error::invalid(
            "weights and region table list different regions",
        ));
    }
    let region_regime = regime_of(spec, regions)?;
    let effect = gen_sar_field(w, spec.rho, rng::derive_seed(spec.seed, "sar"))?;
    let mut r = rng::rng(rng::derive_seed(spec.seed, "households"));
    let p = spec.n_features;
    let m = spec.n_factors.max(1);
    let (cs, ns) = (
        spec.feature_correlation.sqrt(),
        (1.0 - spec.feature_correlation).sqrt(),
    );
    let n = regions.len() * spec.households_per_region;
    let mut hh = Vec::with_capacity(n);
    let mut reg = Vec::with_capacity(n);
    let mut pce = Vec::with_capacity(n);
    let mut cols = vec![Vec::with_capacity(n); p];
    let mut factors = vec![0.0; m];
    for (g, region) in regions.entries().iter().enumerate() {
        let regime = &spec.regimes[region_regime[g]];
        for k in 0..spec.households_per_region {
            for f in &mut factors {
                *f = StandardNormal.sample(&mut r);
            }
            let mut log_pce =
                spec.base_log_pce + regime.intercept + spec.region_effect_sd * effect[g];
            for j in 0..p {
                let e: f64 = StandardNormal.sample(&mut r);
                let x = if spec.n_factors == 0 {
                    e
                } else {
                    cs * factors[j % m] + ns * e
                };
                log_pce += regime.beta[j] * x;
                cols[j].push(Some(x));
            }
            let e: f64 = StandardNormal.sample(&mut r);
            log_pce += spec.noise_sd * e;
            hh.push(format!("H{}-{k:03}", region.region_id));
            reg.push(region.region_id.clone());
            pce.push(log_pce.exp());
        }
    }
    let columns = feature_names(p)
        .into_iter()
        .zip(cols)
        .map(|(name, data)| Column {
            spec: VariableSpec::continuous(name),
            data: ColumnData::Numeric(data),
        })
        .collect();
    let ds = Dataset::new(
        hh,
        reg,
        vec![spec.year; n],
        pce,
        columns,
        format!("synthetic seed {}", spec.seed),
    )?;
    Ok((
        ds,
        TrueCoefficients {
            regimes: spec.regimes.clone(),
            region_regime,
            region_effect: effect,
        },
    ))
}
