use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::weights::ContiguityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HotspotClass {
    Hot,
    Cold,
    None,
}

impl HotspotClass {
    pub fn as_str(self) -> &'static str {
        match self {
            HotspotClass::Hot => "hot",
            HotspotClass::Cold => "cold",
            HotspotClass::None => "none",
        }
    }

    fn classify(z: f64, p: f64, alpha: f64) -> Self {
        if p < alpha && z > 0.0 {
            HotspotClass::Hot
        } else if p < alpha && z < 0.0 {
            HotspotClass::Cold
        } else {
            HotspotClass::None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalStat {
    pub region_id: String,
    pub g_star_z: f64,
    pub p_value: f64,
    pub hotspot_class: HotspotClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalStatResult {
    pub regions: Vec<LocalStat>,
}

impl LocalStatResult {
    pub fn z_scores(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.g_star_z).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["region_id", "g_star_z", "p_value", "hotspot_class"])?;
        for r in &self.regions {
            w.write_record([
                r.region_id.clone(),
                r.g_star_z.to_string(),
                r.p_value.to_string(),
                r.hotspot_class.as_str().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<getis-ord csv>", e))?;
        Ok(())
    }
}

/// Two-sided standard-normal tail probability.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

pub const HOTSPOT_ALPHA: f64 = 0.05;

/// Getis-Ord Gi* z-scores with binary weights and each region counted as its
/// own neighbour. A constant field yields z = 0 everywhere.
pub fn getis_ord(values: &[f64], w: &ContiguityMatrix) -> Result<LocalStatResult> {
    let n = w.len();
    if values.len() != n {
        return Err(Error::invalid(format!(
            "{} values for {n} regions",
            values.len()
        )));
    }
    if n < 3 {
        return Err(Error::invalid(format!(
            "Gi* needs at least 3 regions, got {n}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in Gi* input"));
    }
    let nf = n as f64;
    let constant = values.iter().all(|&v| v == values[0]);
    let mean = values.iter().sum::<f64>() / nf;
    let s = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).sqrt();

    let regions = (0..n)
        .map(|i| {
            let z = if constant || s == 0.0 {
                0.0
            } else {
                let wsum = (w.degree(i) + 1) as f64;
                let local: f64 = values[i] + w.neighbors(i).iter().map(|&j| values[j]).sum::<f64>();
                let num = local - mean * wsum;
                // binary weights: sum of squares equals the sum
                let den = s * ((nf * wsum - wsum * wsum) / (nf - 1.0)).sqrt();
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            };
            let p = two_sided_p(z);
            LocalStat {
                region_id: w.region_ids()[i].clone(),
                g_star_z: z,
                p_value: p,
                hotspot_class: HotspotClass::classify(z, p, HOTSPOT_ALPHA),
            }
        })
        .collect();
    Ok(LocalStatResult { regions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rook(rows: usize, cols: usize) -> ContiguityMatrix {
        let mut e = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    e.push((i, i + 1));
                }
                if r + 1 < rows {
                    e.push((i, i + cols));
                }
            }
        }
        ContiguityMatrix::from_edges((0..rows * cols).map(|i| format!("r{i}")).collect(), e)
            .unwrap()
    }

    #[test]
    fn constant_field_is_all_none() {
        let res = getis_ord(&[3.3; 16], &rook(4, 4)).unwrap();
        assert!(res
            .regions
            .iter()
            .all(|r| r.g_star_z == 0.0 && r.hotspot_class == HotspotClass::None));
    }

    #[test]
    fn central_blob_is_hot() {
        let w = rook(9, 9);
        let mut rng = crate::rng::rng(3);
        let v: Vec<f64> = (0..81)
            .map(|i| {
                let (r, c) = (i / 9, i % 9);
                let blob = (3..6).contains(&r) && (3..6).contains(&c);
                rng.random::<f64>() + if blob { 10.0 } else { 0.0 }
            })
            .collect();
        let res = getis_ord(&v, &w).unwrap();
        assert_eq!(res.regions[40].hotspot_class, HotspotClass::Hot);
        assert!(res.regions[40].p_value < 0.05);
    }

    #[test]
    fn negation_flips_sign_and_class() {
        let w = rook(9, 9);
        let v: Vec<f64> = (0..81)
            .map(|i| {
                if (30..50).contains(&i) {
                    5.0 + i as f64 * 0.01
                } else {
                    (i % 7) as f64 * 0.1
                }
            })
            .collect();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let a = getis_ord(&v, &w).unwrap();
        let b = getis_ord(&neg, &w).unwrap();
        for (x, y) in a.regions.iter().zip(&b.regions) {
            assert_eq!(x.g_star_z, -y.g_star_z);
            let swapped = match x.hotspot_class {
                HotspotClass::Hot => HotspotClass::Cold,
                HotspotClass::Cold => HotspotClass::Hot,
                HotspotClass::None => HotspotClass::None,
            };
            assert_eq!(y.hotspot_class, swapped);
        }
        assert!(a
            .regions
            .iter()
            .any(|r| r.hotspot_class == HotspotClass::Hot));
    }

    #[test]
    fn mean_z_is_small_on_random_fields() {
        let w = rook(12, 12);
        for seed in 0..10 {
            let mut rng = crate::rng::rng(seed);
            let v: Vec<f64> = (0..144).map(|_| rng.random::<f64>()).collect();
            let z = getis_ord(&v, &w).unwrap().z_scores();
            let m = z.iter().sum::<f64>() / z.len() as f64;
            assert!(m.abs() < 0.1, "seed {seed}: mean z {m}");
        }
    }
}
