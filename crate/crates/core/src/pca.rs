//! Principal component analysis and component-count selection.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Whether the model was fitted on the correlation matrix.
    pub standardized: bool,
    /// Number of columns expected by `transform`.
    pub n_input: usize,
    /// Input columns that entered the decomposition.
    pub kept: Vec<usize>,
    /// Per input column.
    pub means: Vec<f64>,
    /// Per kept column; all ones for covariance PCA.
    pub scales: Vec<f64>,
    /// Orthonormal loadings, one column per component.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub n_samples: usize,
}

/// How many components to keep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PcaRule {
    Fixed {
        m: usize,
    },
    Kaiser,
    #[default]
    Minka,
    Cumulative {
        threshold: f64,
    },
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    fn prepare(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.n_input {
            return Err(Error::invalid(format!(
                "expected {} columns, got {}",
                self.n_input,
                x.ncols()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), self.kept.len(), |i, c| {
            let j = self.kept[c];
            (x[(i, j)] - self.means[j]) / self.scales[c]
        }))
    }

    /// Projection onto the first `m` components.
    pub fn transform(&self, x: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
        if m == 0 || m > self.n_components() {
            return Err(Error::invalid(format!(
                "m = {m} outside 1..={}",
                self.n_components()
            )));
        }
        let z = self.prepare(x)?;
        Ok(z * self.components.columns(0, m))
    }

    /// Maps scores back to input space. Dropped columns come back as their mean.
    pub fn inverse_transform(&self, scores: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = scores.ncols();
        if m == 0 || m > self.n_components() {
            return Err(Error::invalid(format!("score matrix has {m} columns")));
        }
        let z = scores * self.components.columns(0, m).transpose();
        let mut out = DMatrix::from_fn(scores.nrows(), self.n_input, |_, j| self.means[j]);
        for (c, &j) in self.kept.iter().enumerate() {
            for i in 0..scores.nrows() {
                out[(i, j)] += z[(i, c)] * self.scales[c];
            }
        }
        Ok(out)
    }

    /// Number of components chosen by `rule`, never below one.
    pub fn select(&self, rule: PcaRule) -> Result<usize> {
        let m = match rule {
            PcaRule::Fixed { m } => {
                if m == 0 || m > self.n_components() {
                    return Err(Error::invalid(format!(
                        "fixed m = {m} outside 1..={}",
                        self.n_components()
                    )));
                }
                m
            }
            PcaRule::Kaiser => kaiser_count(self)?,
            PcaRule::Minka => minka_from_spectrum(&self.eigenvalues, self.n_samples)?,
            PcaRule::Cumulative { threshold } => {
                if !(threshold > 0.0 && threshold <= 1.0) {
                    return Err(Error::invalid(format!(
                        "cumulative threshold {threshold} outside (0, 1]"
                    )));
                }
                let total: f64 = self.eigenvalues.iter().sum();
                let mut acc = 0.0;
                let mut m = self.n_components();
                for (i, l) in self.eigenvalues.iter().enumerate() {
                    acc += l;
                    if acc / total >= threshold - 1e-12 {
                        m = i + 1;
                        break;
                    }
                }
                m
            }
        };
        Ok(m.max(1))
    }

    /// Scree table: component, eigenvalue, cumulative_fraction.
    pub fn write_scree_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["component", "eigenvalue", "cumulative_fraction"])?;
        let total: f64 = self.eigenvalues.iter().sum();
        let mut acc = 0.0;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            acc += l;
            w.write_record([
                (i + 1).to_string(),
                l.to_string(),
                (acc / total).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<scree csv>", e))?;
        Ok(())
    }
}

fn column_moments(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let means: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).sum() / n).collect();
    let vars = (0..x.ncols())
        .map(|j| {
            x.column(j)
                .iter()
                .map(|v| (v - means[j]).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        })
        .collect();
    (means, vars)
}

/// Eigendecomposition of the correlation (`standardize`) or covariance matrix.
pub fn pca_fit(x: &DMatrix<f64>, standardize: bool) -> Result<PcaModel> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two rows"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in PCA input"));
    }
    let (means, vars) = column_moments(x);
    let kept: Vec<usize> = if standardize {
        let kept: Vec<usize> = (0..x.ncols()).filter(|&j| vars[j] > 0.0).collect();
        if kept.len() < x.ncols() {
            warn!(
                "dropping {} zero-variance column(s) before PCA",
                x.ncols() - kept.len()
            );
        }
        kept
    } else {
        (0..x.ncols()).collect()
    };
    if kept.len() < 2 {
        return Err(Error::invalid(format!(
            "PCA needs at least two usable columns, found {}",
            kept.len()
        )));
    }
    let scales: Vec<f64> = kept
        .iter()
        .map(|&j| if standardize { vars[j].sqrt() } else { 1.0 })
        .collect();
    let z = DMatrix::from_fn(n, kept.len(), |i, c| {
        (x[(i, kept[c])] - means[kept[c]]) / scales[c]
    });
    let cov = (z.transpose() * &z) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let p = kept.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut components = DMatrix::zeros(p, p);
    let mut eigenvalues = Vec::with_capacity(p);
    for (c, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let mut lead = 0;
        for r in 1..p {
            if v[r].abs() > v[lead].abs() + 1e-12 {
                lead = r;
            }
        }
        if v[lead] < 0.0 {
            v = -v;
        }
        components.set_column(c, &v);
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(PcaModel {
        standardized: standardize,
        n_input: x.ncols(),
        kept,
        means,
        scales,
        components,
        eigenvalues,
        n_samples: n,
    })
}

/// Count of eigenvalues strictly above one.
pub fn kaiser_count(model: &PcaModel) -> Result<usize> {
    if !model.standardized {
        return Err(Error::invalid("Kaiser rule needs a correlation-matrix PCA"));
    }
    Ok(model.eigenvalues.iter().filter(|&&l| l > 1.0).count())
}

pub fn cumulative_variance(model: &PcaModel, m: usize) -> Result<f64> {
    if m == 0 || m > model.n_components() {
        return Err(Error::invalid(format!(
            "m = {m} outside 1..={}",
            model.n_components()
        )));
    }
    let total: f64 = model.eigenvalues.iter().sum();
    Ok(model.eigenvalues[..m].iter().sum::<f64>() / total)
}

const EVIDENCE_EPS: f64 = 1e-15;

/// Laplace-approximated log evidence of a rank-`rank` probabilistic PCA model
/// for a descending covariance spectrum estimated from `n` samples.
pub fn minka_log_evidence(spectrum: &[f64], rank: usize, n: usize) -> f64 {
    let p = spectrum.len();
    assert!(rank >= 1 && rank < p);
    if spectrum[rank - 1] < EVIDENCE_EPS {
        return f64::NEG_INFINITY;
    }
    let (pf, nf, rf) = (p as f64, n as f64, rank as f64);
    let ln_pi = std::f64::consts::PI.ln();
    let mut pu = -rf * std::f64::consts::LN_2;
    for i in 1..=rank {
        let a = (pf - i as f64 + 1.0) / 2.0;
        pu += ln_gamma(a) - ln_pi * a;
    }
    let pl = -spectrum[..rank].iter().map(|l| l.ln()).sum::<f64>() * nf / 2.0;
    let v = (spectrum[rank..].iter().sum::<f64>() / (pf - rf)).max(EVIDENCE_EPS);
    let pv = -v.ln() * nf * (pf - rf) / 2.0;
    let m = pf * rf - rf * (rf + 1.0) / 2.0;
    let pp = (2.0 * std::f64::consts::PI).ln() * (m + rf) / 2.0;
    let tilde = |j: usize| if j < rank { spectrum[j] } else { v };
    let mut pa = 0.0;
    for i in 0..rank {
        for j in i + 1..p {
            pa += ((spectrum[i] - spectrum[j]) * (1.0 / tilde(j) - 1.0 / tilde(i))).ln() + nf.ln();
        }
    }
    pu + pl + pv + pp - pa / 2.0 - rf * nf.ln() / 2.0
}

/// Evidence-maximising dimension over 1..p-1; ties go to the smaller rank.
pub fn minka_from_spectrum(spectrum: &[f64], n: usize) -> Result<usize> {
    let p = spectrum.len();
    if n <= 3 {
        return Err(Error::invalid(format!("Minka rule needs n > 3, got {n}")));
    }
    let top = spectrum.first().copied().unwrap_or(0.0);
    let rank = spectrum
        .iter()
        .filter(|&&l| l > top * 1e-12 && l > 0.0)
        .count();
    if p < 2 || rank < 2 {
        return Err(Error::Numeric(format!(
            "degenerate spectrum (numerical rank {rank})"
        )));
    }
    let mut best = (1, f64::NEG_INFINITY);
    for r in 1..p {
        let ll = minka_log_evidence(spectrum, r, n);
        if ll > best.1 {
            best = (r, ll);
        }
    }
    Ok(best.0)
}

/// Minka's dimension for the covariance spectrum of `x`.
pub fn minka_dimension(x: &DMatrix<f64>) -> Result<usize> {
    let model = pca_fit(x, false)?;
    minka_from_spectrum(&model.eigenvalues, x.nrows())
}

pub fn pca_transform(model: &PcaModel, x: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    model.transform(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::rng(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    fn model_with(eigs: &[f64]) -> PcaModel {
        let p = eigs.len();
        PcaModel {
            standardized: true,
            n_input: p,
            kept: (0..p).collect(),
            means: vec![0.0; p],
            scales: vec![1.0; p],
            components: DMatrix::identity(p, p),
            eigenvalues: eigs.to_vec(),
            n_samples: 100,
        }
    }

    #[test]
    fn identical_columns_give_two_and_zero() {
        let x = DMatrix::from_fn(50, 2, |i, _| (i as f64).sin());
        let m = pca_fit(&x, true).unwrap();
        assert!((m.eigenvalues[0] - 2.0).abs() < 1e-10);
        assert!(m.eigenvalues[1].abs() < 1e-10);
    }

    #[test]
    fn independent_columns_have_unit_eigenvalues() {
        let x = normal_matrix(10_000, 5, 3);
        let m = pca_fit(&x, true).unwrap();
        for l in &m.eigenvalues {
            assert!((l - 1.0).abs() < 0.1, "{l}");
        }
    }

    #[test]
    fn kaiser_examples() {
        assert_eq!(kaiser_count(&model_with(&[3.0, 1.5, 0.9, 0.6])).unwrap(), 2);
        assert_eq!(kaiser_count(&model_with(&[1.0, 1.0, 0.5])).unwrap(), 0);
        let mut cov = model_with(&[3.0, 1.0]);
        cov.standardized = false;
        assert!(kaiser_count(&cov).is_err());
    }

    #[test]
    fn cumulative_examples() {
        let m = model_with(&[8.0, 1.0, 1.0]);
        assert!((cumulative_variance(&m, 1).unwrap() - 0.8).abs() < 1e-15);
        assert!((cumulative_variance(&m, 3).unwrap() - 1.0).abs() < 1e-15);
        assert!(cumulative_variance(&m, 0).is_err());
        assert!(cumulative_variance(&m, 4).is_err());
        assert_eq!(
            m.select(PcaRule::Cumulative { threshold: 0.85 }).unwrap(),
            2
        );
    }

    #[test]
    fn planted_ten_factors_give_kaiser_ten() {
        // 10 factors, each loading 0.9 on a block of three columns
        let n = 4000;
        let f = normal_matrix(n, 10, 11);
        let e = normal_matrix(n, 30, 12);
        let x = DMatrix::from_fn(n, 30, |i, j| 0.9 * f[(i, j / 3)] + 0.45 * e[(i, j)]);
        assert_eq!(kaiser_count(&pca_fit(&x, true).unwrap()).unwrap(), 10);
    }

    #[test]
    fn transform_variances_match_eigenvalues_and_round_trip() {
        let mut x = normal_matrix(300, 4, 5);
        for i in 0..300 {
            x[(i, 1)] += 0.7 * x[(i, 0)];
            x[(i, 3)] = 5.0 + 2.0 * x[(i, 3)] - x[(i, 2)];
        }
        let m = pca_fit(&x, true).unwrap();
        let t = pca_transform(&m, &x, 4).unwrap();
        for c in 0..4 {
            let col = t.column(c);
            let mean = col.sum() / 300.0;
            assert!(mean.abs() < 1e-10);
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 299.0;
            assert!((var - m.eigenvalues[c]).abs() < 1e-8);
        }
        let back = m.inverse_transform(&t).unwrap();
        assert!((back - &x).abs().max() < 1e-8);
        assert!(pca_transform(&m, &x, 0).is_err());
        assert!(pca_transform(&m, &DMatrix::zeros(3, 5), 1).is_err());
    }

    #[test]
    fn zero_variance_columns_are_dropped() {
        let mut x = normal_matrix(100, 4, 9);
        x.column_mut(2).fill(3.0);
        let m = pca_fit(&x, true).unwrap();
        assert_eq!(m.kept, vec![0, 1, 3]);
        let back = m.inverse_transform(&m.transform(&x, 3).unwrap()).unwrap();
        assert!((back - &x).abs().max() < 1e-8);
        let mut one = DMatrix::zeros(10, 2);
        one.column_mut(0)
            .copy_from(&DMatrix::from_fn(10, 1, |i, _| i as f64).column(0));
        assert!(pca_fit(&one, true).is_err());
    }

    #[test]
    fn sign_convention_makes_largest_loading_positive() {
        let x = normal_matrix(200, 5, 21);
        let m = pca_fit(&x, true).unwrap();
        for c in 0..5 {
            let col = m.components.column(c);
            let lead = col
                .iter()
                .copied()
                .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(lead > 0.0);
        }
    }

    // Independent restatement of the Laplace evidence written directly from the
    // probabilistic PCA formulas, for cross-checking the production routine.
    fn evidence_oracle(l: &[f64], k: usize, n: usize) -> f64 {
        let d = l.len() as f64;
        let kf = k as f64;
        let n = n as f64;
        let pi = std::f64::consts::PI;
        // log p(U): uniform prior on the Stiefel manifold
        let log_pu: f64 = (1..=k)
            .map(|i| {
                let q = (d - i as f64 + 1.0) / 2.0;
                ln_gamma(q) - q * pi.ln()
            })
            .sum::<f64>()
            - kf * 2f64.ln();
        let v: f64 = l[k..].iter().sum::<f64>() / (d - kf);
        let log_lik =
            -(n / 2.0) * l[..k].iter().map(|x| x.ln()).sum::<f64>() - (n * (d - kf) / 2.0) * v.ln();
        let m = d * kf - kf * (kf + 1.0) / 2.0;
        let mut log_az = 0.0;
        for i in 0..k {
            for j in (i + 1)..l.len() {
                let lj = if j < k { l[j] } else { v };
                log_az += (1.0 / lj - 1.0 / l[i]).ln() + (l[i] - l[j]).ln() + n.ln();
            }
        }
        log_pu + log_lik + (m + kf) / 2.0 * (2.0 * pi).ln() - log_az / 2.0 - kf / 2.0 * n.ln()
    }

    fn rank_two_plus_noise(seed: u64) -> DMatrix<f64> {
        let (n, p) = (2000, 8);
        let mut rng = crate::rng::rng(seed);
        let f = normal_matrix(n, 2, seed ^ 0xabc);
        let a = DMatrix::from_fn(2, p, |_, _| {
            rng.random_range(-1.0..1.0) + if rng.random::<bool>() { 1.0 } else { -1.0 }
        });
        let noise = normal_matrix(n, p, seed ^ 0xdef);
        f * a + noise * 0.01
    }

    #[test]
    fn minka_recovers_planted_rank_two() {
        let x = rank_two_plus_noise(7);
        let m = pca_fit(&x, false).unwrap();
        let ev: Vec<f64> = (1..8)
            .map(|k| evidence_oracle(&m.eigenvalues, k, 2000))
            .collect();
        for k in 1..8 {
            let got = minka_log_evidence(&m.eigenvalues, k, 2000);
            assert!(
                (got - ev[k - 1]).abs() <= 1e-9 * got.abs().max(1.0),
                "rank {k}"
            );
        }
        let argmax = 1 + (0..7).max_by(|&a, &b| ev[a].total_cmp(&ev[b])).unwrap();
        assert_eq!(argmax, 2);
        assert_eq!(minka_dimension(&x).unwrap(), 2);
        assert_eq!(minka_dimension(&x).unwrap(), minka_dimension(&x).unwrap());
    }

    #[test]
    fn minka_on_isotropic_noise_picks_one() {
        let x = normal_matrix(2000, 8, 31);
        assert_eq!(minka_dimension(&x).unwrap(), 1);
    }

    #[test]
    fn minka_rejects_degenerate_input() {
        let x = DMatrix::from_fn(50, 3, |i, j| (i as f64) * (j as f64 + 1.0));
        assert!(minka_dimension(&x).is_err());
        assert!(minka_from_spectrum(&[2.0, 1.0], 3).is_err());
    }

    #[test]
    fn scree_csv_shape() {
        let m = model_with(&[2.0, 1.0, 1.0]);
        let mut buf = Vec::new();
        m.write_scree_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "component,eigenvalue,cumulative_fraction"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "1,2,0.5");
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn json_round_trip() {
        let m = pca_fit(&normal_matrix(40, 3, 2), true).unwrap();
        let back: PcaModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn structural_invariants(n in 10usize..60, p in 2usize..7, seed in any::<u64>(), mix in 0.0f64..2.0) {
            let mut x = normal_matrix(n, p, seed);
            for i in 0..n {
                x[(i, p - 1)] += mix * x[(i, 0)];
            }
            let m = pca_fit(&x, true).unwrap();
            let gram = m.components.transpose() * &m.components;
            prop_assert!((gram - DMatrix::identity(p, p)).abs().max() < 1e-10);
            for w in m.eigenvalues.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            prop_assert!((m.eigenvalues.iter().sum::<f64>() - p as f64).abs() < 1e-8);
            let mut prev = 0.0;
            for k in 1..=p {
                let c = cumulative_variance(&m, k).unwrap();
                prop_assert!(c >= prev - 1e-15);
                prev = c;
            }
            let t = m.transform(&x, p).unwrap();
            let (_, vars) = column_moments(&t);
            for a in 0..p {
                for b in (a + 1)..p {
                    if vars[a] > 1e-8 && vars[b] > 1e-8 {
                        let cov = t.column(a).dot(&t.column(b)) / (n as f64 - 1.0);
                        prop_assert!((cov / (vars[a] * vars[b]).sqrt()).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
