//! TOML pipeline configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use geotarget_core::data::VariableSpec;
use geotarget_core::models::Family;
use geotarget_core::pca::PcaRule;
use geotarget_core::rng::derive_seed;
use geotarget_core::stats::Alternative;
use geotarget_core::synthetic::{feature_names, Layout, SyntheticSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stage seed is derived from it by label.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub input: InputConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub models: ModelGridConfig,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub households: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    /// Read the tables written by the `synth` stage instead of the paths above.
    #[serde(default)]
    pub synthetic: bool,
    /// Non-key household columns. Defaults to the synthetic feature set when `synthetic`.
    #[serde(default)]
    pub variables: Vec<VariableSpec>,
    /// Model features after preprocessing; defaults to every numeric column.
    #[serde(default)]
    pub features: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeRule {
    pub variable: String,
    pub target_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub apply_recodes: bool,
    pub impute: Vec<ImputeRule>,
    pub one_hot: Vec<String>,
    pub collapse_binary: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            apply_recodes: true,
            impute: Vec::new(),
            one_hot: Vec::new(),
            collapse_binary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub poverty_quantile: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            poverty_quantile: 0.4,
        }
    }
}

/// Region subset for subset Moran: explicit ids, or regions whose mean log
/// expenditure lies in the quantile interval `(lo, hi]` (`lo = 0` includes the minimum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetConfig {
    pub name: String,
    #[serde(default)]
    pub regions: Option<Vec<String>>,
    #[serde(default)]
    pub quantile_range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub n_permutations: usize,
    pub alternative: Alternative,
    pub parallel: bool,
    pub subsets: Vec<SubsetConfig>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            n_permutations: 999,
            alternative: Alternative::Greater,
            parallel: true,
            subsets: vec![
                SubsetConfig {
                    name: "high".into(),
                    regions: None,
                    quantile_range: Some([0.5, 1.0]),
                },
                SubsetConfig {
                    name: "low".into(),
                    regions: None,
                    quantile_range: Some([0.0, 0.5]),
                },
            ],
        }
    }
}

/// `log_pce` names the regional mean of training log expenditure; any other
/// entry is a household feature averaged over training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub features: Vec<String>,
    pub k: Vec<usize>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            features: vec!["log_pce".into()],
            k: vec![4, 6, 12],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelGridConfig {
    pub families: Vec<Family>,
    /// PCA arms to run for the clustered models.
    pub pca: Vec<bool>,
    /// Lagged-feature arms to run for the clustered models.
    pub lagged: Vec<bool>,
    pub pca_rule: PcaRule,
    pub hyperparameters: BTreeMap<Family, BTreeMap<String, f64>>,
    pub save_models: bool,
}

impl Default for ModelGridConfig {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            pca: vec![false, true],
            lagged: vec![false],
            pca_rule: PcaRule::Minka,
            hyperparameters: BTreeMap::new(),
            save_models: true,
        }
    }
}

/// The heterogeneous two-regime generator with a few overridable knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub layout: Layout,
    pub households_per_region: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise_sd: Option<f64>,
    #[serde(default)]
    pub region_effect_sd: Option<f64>,
}

fn default_rho() -> f64 {
    0.5
}

impl SynthConfig {
    pub fn spec(&self, master_seed: u64) -> SyntheticSpec {
        let seed = self
            .seed
            .unwrap_or_else(|| derive_seed(master_seed, "synth"));
        let mut spec = SyntheticSpec::heterogeneous(
            self.layout.clone(),
            self.households_per_region,
            self.rho,
            seed,
        );
        if let Some(v) = self.noise_sd {
            spec.noise_sd = v;
        }
        if let Some(v) = self.region_effect_sd {
            spec.region_effect_sd = v;
        }
        spec
    }
}

/// Parsed configuration plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub path: PathBuf,
    pub sha256: String,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let q = self.target.poverty_quantile;
        if !(q > 0.0 && q < 1.0) {
            return bad(format!("target.poverty_quantile = {q} must lie in (0, 1)"));
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return bad(format!("split.train_fraction = {f} must lie in (0, 1)"));
        }
        if self.cluster.k.is_empty() || self.cluster.k.contains(&0) {
            return bad("cluster.k must be a non-empty list of positive integers".into());
        }
        if self.cluster.features.is_empty() {
            return bad("cluster.features must not be empty".into());
        }
        if self.models.families.is_empty()
            || self.models.pca.is_empty()
            || self.models.lagged.is_empty()
        {
            return bad("models.families, models.pca and models.lagged must not be empty".into());
        }
        if self.input.synthetic {
            if self.synth.is_none() {
                return bad("input.synthetic = true needs a [synth] section".into());
            }
        } else if self.input.households.is_none() || self.input.regions.is_none() {
            return bad(
                "input.households and input.regions are required unless input.synthetic = true"
                    .into(),
            );
        }
        for s in &self.stats.subsets {
            match (&s.regions, &s.quantile_range) {
                (Some(_), None) => {}
                (None, Some([lo, hi])) if 0.0 <= *lo && lo < hi && *hi <= 1.0 => {}
                _ => {
                    return bad(format!(
                        "subset '{}' needs either regions or a quantile_range 0 <= lo < hi <= 1",
                        s.name
                    ))
                }
            }
        }
        for (fam, hp) in &self.models.hyperparameters {
            let mut spec = geotarget_core::ModelSpec::new(*fam, 0);
            spec.hyperparameters = hp.clone();
            spec.resolved_hyperparameters()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Variables of the household table, including the synthetic defaults.
    pub fn variables(&self) -> Vec<VariableSpec> {
        if self.input.synthetic && self.input.variables.is_empty() {
            let n = self
                .synth
                .as_ref()
                .map_or(0, |s| s.spec(self.seed).n_features);
            feature_names(n)
                .into_iter()
                .map(VariableSpec::continuous)
                .collect()
        } else {
            self.input.variables.clone()
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, "split"))
    }

    pub fn moran_seed(&self) -> u64 {
        derive_seed(self.seed, "moran")
    }

    pub fn model_seed(&self, family: Family) -> u64 {
        derive_seed(self.seed, &format!("model:{family}"))
    }

    pub fn hyperparameters(&self, family: Family) -> BTreeMap<String, f64> {
        self.models
            .hyperparameters
            .get(&family)
            .cloned()
            .unwrap_or_default()
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::Config(format!("{} is not UTF-8", path.display())))?;
        let config = PipelineConfig::parse(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            config,
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
            base_dir,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        match override_dir {
            Some(d) => d.to_path_buf(),
            None => self.resolve(&self.config.output_dir),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[input]
households = "h.csv"
regions = "r.csv"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = PipelineConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.cluster.k, vec![4, 6, 12]);
        assert_eq!(c.models.families.len(), 8);
        assert_eq!(c.models.pca, vec![false, true]);
        assert_eq!(c.target.poverty_quantile, 0.4);
        assert_eq!(c.stats.n_permutations, 999);
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn rejects_bad_values() {
        let with = |extra: &str| PipelineConfig::parse(&format!("{MINIMAL}{extra}"));
        assert!(with("[target]\npoverty_quantile = 1.2\n").is_err());
        assert!(with("[cluster]\nk = []\n").is_err());
        assert!(with("[models]\nfamilies = [\"svm\"]\n").is_err());
        assert!(with("[models.hyperparameters.logistic]\nbogus = 1.0\n").is_err());
        assert!(with("[extra]\nx = 1\n").is_err());
        assert!(PipelineConfig::parse("seed = 1\n[input]\nsynthetic = true\n").is_err());
    }

    #[test]
    fn full_sections_parse() {
        let text = format!(
            "{MINIMAL}{}",
            r#"
[[input.variables]]
name = "roof"
kind = "categorical"
categories = ["tile", "zinc", "thatch"]
[[input.variables]]
name = "floor_area"
kind = "continuous"
recode_rules = [{ when = { gt = 500.0 }, replace_with = 500.0 }]
[preprocess]
one_hot = ["roof"]
[models]
families = ["logistic", "random_forest"]
pca_rule = { rule = "cumulative", threshold = 0.9 }
[models.hyperparameters.random_forest]
n_trees = 20
[synth]
layout = { kind = "lattice", rows = 5, cols = 5 }
households_per_region = 40
"#
        );
        let c = PipelineConfig::parse(&text).unwrap();
        assert_eq!(c.input.variables.len(), 2);
        assert_eq!(c.models.pca_rule, PcaRule::Cumulative { threshold: 0.9 });
        assert_eq!(c.hyperparameters(Family::RandomForest)["n_trees"], 20.0);
        assert_eq!(c.synth.unwrap().spec(7).households_per_region, 40);
    }
}
