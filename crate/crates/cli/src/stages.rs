//! File-backed stages. Each reads its upstream artifacts from the output
//! directory, so chaining subcommands reproduces `run` exactly.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use geotarget_core::data::{load_households, read_households};
use geotarget_core::eval::{
    confusion, exclusion_error, inclusion_error, secondary_metrics, ComparisonGrid, Scope,
};
use geotarget_core::models::{write_predictions, Prediction};
use geotarget_core::synthetic::{gen_households, gen_regions, rook_lattice, Layout};
use geotarget_core::weights::{delaunay_neighbors, row_standardize};
use geotarget_core::{
    ClusterAssignment, ContiguityMatrix, Dataset, Error, GridColumn, RegionTable, VariableSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::artifacts::Artifacts;
use crate::config::LoadedConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{self, GridData, GridPlan, Ingested, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Synth,
    Ingest,
    Weights,
    Stats,
    Cluster,
    Pca,
    Train,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Weights,
        Stage::Stats,
        Stage::Cluster,
        Stage::Pca,
        Stage::Train,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Weights => "weights",
            Stage::Stats => "stats",
            Stage::Cluster => "cluster",
            Stage::Pca => "pca",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Loaded config and the output directory it writes to.
pub struct Context {
    pub cfg: LoadedConfig,
    pub art: Artifacts,
}

impl Context {
    pub fn new(cfg: LoadedConfig, out: Option<&Path>) -> Self {
        let root = cfg.output_dir(out);
        let art = Artifacts::new(root, cfg.sha256.clone());
        Self { cfg, art }
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        log::info!("stage {}", stage.name());
        let r = match stage {
            Stage::Synth => synth(self),
            Stage::Ingest => ingest(self),
            Stage::Weights => weights(self),
            Stage::Stats => stats(self),
            Stage::Cluster => cluster(self),
            Stage::Pca => pca(self),
            Stage::Train => train(self),
            Stage::Evaluate => evaluate(self),
        };
        r.map_err(|e| CliError::Stage {
            stage: stage.name(),
            source: Box::new(e),
        })
    }

    /// Stages `run` executes, in order.
    pub fn plan(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::Synth || self.cfg.config.input.synthetic)
            .collect()
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> geotarget_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn read_regions(art: &Artifacts, stage: &str, rel: &str) -> Result<RegionTable> {
    let bytes = art.read(stage, rel)?;
    Ok(RegionTable::from_csv_reader(
        Cursor::new(bytes),
        &art.path(rel).display().to_string(),
    )?)
}

fn read_dataset(
    art: &Artifacts,
    stage: &str,
    rel: &str,
    schema: &[VariableSpec],
) -> Result<Dataset> {
    let bytes = art.read(stage, rel)?;
    Ok(read_households(
        Cursor::new(bytes),
        schema,
        &art.path(rel).display().to_string(),
    )?)
}

fn read_json<T: for<'de> Deserialize<'de>>(art: &Artifacts, stage: &str, rel: &str) -> Result<T> {
    Ok(serde_json::from_slice(&art.read(stage, rel)?)?)
}

fn synth(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg.config;
    let sc = cfg
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("the synth stage needs a [synth] section".into()))?;
    let spec = sc.spec(cfg.seed);
    let regions = gen_regions(&spec)?;
    let w = match spec.layout {
        Layout::Lattice { rows, cols } => rook_lattice(rows, cols)?,
        Layout::Random { .. } => delaunay_neighbors(&regions)?,
    };
    let (ds, truth) = gen_households(&regions, &row_standardize(&w)?, &spec)?;
    let mut out = ctx.art.writer("synth");
    out.write("synth/households.csv", &csv_bytes(|b| ds.write_csv(b))?)?;
    out.write("synth/regions.csv", &csv_bytes(|b| regions.write_csv(b))?)?;
    out.write_json("synth/truth.json", &json!({ "spec": spec, "truth": truth }))?;
    out.finish()?;
    Ok(())
}

fn input_path(ctx: &Context, p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let p = p
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("input.{key} is not set")))?;
    let path = ctx.cfg.resolve(p);
    if !path.is_file() {
        return Err(CliError::Missing {
            path,
            hint: format!("referenced by input.{key} in the config"),
        });
    }
    Ok(path)
}

/// Checks that every input file the config names exists.
pub fn check_inputs(ctx: &Context) -> Result<()> {
    let input = &ctx.cfg.config.input;
    if !input.synthetic {
        input_path(ctx, &input.regions, "regions")?;
        input_path(ctx, &input.households, "households")?;
    }
    Ok(())
}

fn raw_input(ctx: &Context) -> Result<(Dataset, RegionTable)> {
    let cfg = &ctx.cfg.config;
    let vars = cfg.variables();
    if cfg.input.synthetic {
        let regions = read_regions(&ctx.art, "synth", "synth/regions.csv")?;
        let ds = read_dataset(&ctx.art, "synth", "synth/households.csv", &vars)?;
        Ok((ds, regions))
    } else {
        let rp = input_path(ctx, &cfg.input.regions, "regions")?;
        let hp = input_path(ctx, &cfg.input.households, "households")?;
        let regions = RegionTable::load(rp)?;
        Ok((load_households(hp, &vars)?, regions))
    }
}

fn ingest(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg.config;
    let (raw, regions) = raw_input(ctx)?;
    let ds = pipeline::preprocess(&raw, &regions, &cfg.preprocess)?;
    let ing = pipeline::split_and_label(
        &ds,
        &regions,
        cfg.input.features.as_deref(),
        cfg.split.train_fraction,
        cfg.split_seed(),
        cfg.target.poverty_quantile,
    )?;
    let mut out = ctx.art.writer("ingest");
    out.write("ingest/train.csv", &csv_bytes(|b| ing.train.write_csv(b))?)?;
    out.write("ingest/test.csv", &csv_bytes(|b| ing.test.write_csv(b))?)?;
    out.write("ingest/regions.csv", &csv_bytes(|b| regions.write_csv(b))?)?;
    out.write_json("ingest/schema.json", &ds.schema())?;
    out.write_json("ingest/features.json", &ing.features)?;
    out.write_json("ingest/threshold.json", &ing.threshold)?;
    out.finish()?;
    Ok(())
}

fn load_ingested(art: &Artifacts) -> Result<(Ingested, RegionTable)> {
    let schema: Vec<VariableSpec> = read_json(art, "ingest", "ingest/schema.json")?;
    let ing = Ingested {
        train: read_dataset(art, "ingest", "ingest/train.csv", &schema)?,
        test: read_dataset(art, "ingest", "ingest/test.csv", &schema)?,
        features: read_json(art, "ingest", "ingest/features.json")?,
        threshold: read_json::<Threshold>(art, "ingest", "ingest/threshold.json")?,
    };
    let regions = read_regions(art, "ingest", "ingest/regions.csv")?;
    Ok((ing, regions))
}

fn weights(ctx: &Context) -> Result<()> {
    let regions = read_regions(&ctx.art, "ingest", "ingest/regions.csv")?;
    let w = delaunay_neighbors(&regions)?;
    let mut out = ctx.art.writer("weights");
    out.write("weights/edges.csv", &csv_bytes(|b| w.write_edge_list(b))?)?;
    out.write("weights/adjacency.json", w.to_json()?.as_bytes())?;
    out.finish()?;
    Ok(())
}

fn load_weights(art: &Artifacts, regions: &RegionTable) -> Result<ContiguityMatrix> {
    let w = ContiguityMatrix::from_json(&art.read_string("weights", "weights/adjacency.json")?)?;
    if w.region_ids() != regions.ids().as_slice() {
        return Err(CliError::Stale {
            path: art.path("weights/adjacency.json"),
            reason: "region order differs from ingest/regions.csv".into(),
        });
    }
    Ok(w)
}

fn stats(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg.config;
    let (ing, regions) = load_ingested(&ctx.art)?;
    let w = load_weights(&ctx.art, &regions)?;
    let wrs = row_standardize(&w)?;
    let s = pipeline::spatial_stats(&ing.all()?, &w, &wrs, &cfg.stats, cfg.moran_seed())?;

    let mut out = ctx.art.writer("stats");
    out.write("stats/moran.csv", &csv_bytes(|b| s.moran.write_csv(b))?)?;
    out.write(
        "stats/getis_ord.csv",
        &csv_bytes(|b| s.getis_ord.write_csv(b))?,
    )?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["subset", "statistic", "n_regions", "n_dropped", "status"])?;
    for sub in &s.subsets {
        match &sub.result {
            Ok(m) => wtr.write_record([
                sub.name.clone(),
                m.statistic.to_string(),
                m.regions.len().to_string(),
                m.dropped.len().to_string(),
                "ok".into(),
            ])?,
            Err(msg) => wtr.write_record([sub.name.as_str(), "NA", "NA", "NA", msg.as_str()])?,
        }
    }
    out.write("stats/moran_subsets.csv", &finish_csv(wtr)?)?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["region_id", "mean_log_pce"])?;
    for (id, v) in w.region_ids().iter().zip(&s.region_values) {
        wtr.write_record([id.clone(), v.to_string()])?;
    }
    out.write("stats/region_values.csv", &finish_csv(wtr)?)?;
    out.finish()?;
    Ok(())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| CliError::io("<csv buffer>", e.into_error()))
}

fn assignment_rel(k: usize) -> String {
    format!("cluster/assignment_k{k}.csv")
}

fn cluster(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg.config;
    let (ing, regions) = load_ingested(&ctx.art)?;
    let w = load_weights(&ctx.art, &regions)?;
    let ids = regions.ids();
    let feats = pipeline::cluster_features(&ing.train, &ids, &cfg.cluster.features)?;
    let (dendrogram, cuts) = pipeline::cluster_regions(&feats, &w, &cfg.cluster.k)?;

    let mut out = ctx.art.writer("cluster");
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["region_id".to_string()];
    header.extend(cfg.cluster.features.iter().map(|f| format!("z_{f}")));
    wtr.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..feats.ncols()).map(|j| feats[(i, j)].to_string()));
        wtr.write_record(&rec)?;
    }
    out.write("cluster/region_features.csv", &finish_csv(wtr)?)?;
    out.write("cluster/dendrogram.json", dendrogram.to_json()?.as_bytes())?;
    for (k, a) in &cuts {
        out.write(&assignment_rel(*k), &csv_bytes(|b| a.write_csv(b))?)?;
    }
    out.finish()?;
    Ok(())
}

fn load_assignments(art: &Artifacts, ks: &[usize]) -> Result<BTreeMap<usize, ClusterAssignment>> {
    ks.iter()
        .map(|&k| {
            let a =
                ClusterAssignment::read_csv(Cursor::new(art.read("cluster", &assignment_rel(k))?))?;
            Ok((k, a))
        })
        .collect()
}

fn pca(ctx: &Context) -> Result<()> {
    let (ing, _) = load_ingested(&ctx.art)?;
    let (model, sel) =
        pipeline::pca_summary(&ing.train, &ing.features, ctx.cfg.config.models.pca_rule)?;
    let mut out = ctx.art.writer("pca");
    out.write("pca/scree.csv", &csv_bytes(|b| model.write_scree_csv(b))?)?;
    out.write_json("pca/selection.json", &sel)?;
    out.finish()?;
    Ok(())
}

fn grid_plan(ctx: &Context) -> GridPlan {
    let cfg = &ctx.cfg.config;
    GridPlan {
        families: cfg.models.families.clone(),
        columns: pipeline::grid_columns(&cfg.cluster.k, &cfg.models.pca, &cfg.models.lagged),
        pca_rule: cfg.models.pca_rule,
        hyperparameters: cfg.models.hyperparameters.clone(),
        master_seed: cfg.seed,
    }
}

fn cell_stem(family: geotarget_core::Family, column: GridColumn) -> String {
    format!("{family}__{column}")
}

fn train(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg.config;
    let (mut ing, regions) = load_ingested(&ctx.art)?;
    let assignments = load_assignments(&ctx.art, &cfg.cluster.k)?;
    let plan = grid_plan(ctx);
    if plan.columns.iter().any(GridColumn::lagged) {
        let wrs = row_standardize(&load_weights(&ctx.art, &regions)?)?;
        let (train, test) = pipeline::add_lag_columns(&ing.train, &ing.test, &ing.features, &wrs)?;
        ing.train = train;
        ing.test = test;
    }
    let train_labels = ing.train_labels();
    let truth = ing.test_labels().labels;
    let data = GridData {
        train: &ing.train,
        test: &ing.test,
        train_labels: &train_labels,
        features: &ing.features,
        assignments: &assignments,
    };
    let save = cfg.models.save_models;
    let cells = pipeline::train_grid(&plan, &data, save)?;

    let mut out = ctx.art.writer("train");
    for c in &cells {
        let stem = cell_stem(c.family, c.column);
        if let Some(m) = &c.model {
            out.write(&format!("models/{stem}.json"), m.to_json()?.as_bytes())?;
        }
        out.write(
            &format!("predictions/{stem}.csv"),
            &csv_bytes(|b| {
                write_predictions(b, &ing.test, &truth, &c.prediction, c.clusters.as_deref())
            })?,
        )?;
    }
    out.finish()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    household_id: String,
    truth: u8,
    label: u8,
    #[serde(default)]
    score: Option<f64>,
}

fn read_prediction_rows(bytes: &[u8], source: &Path) -> Result<Vec<PredictionRow>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize::<PredictionRow>().enumerate() {
        let row = r.map_err(|e| {
            CliError::Core(Error::Parse {
                path: source.display().to_string(),
                line: i + 2,
                message: e.to_string(),
            })
        })?;
        if row.truth > 1 || row.label > 1 {
            return Err(CliError::Core(Error::Parse {
                path: source.display().to_string(),
                line: i + 2,
                message: "truth and label must be 0 or 1".into(),
            }));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
struct BestCell {
    family: String,
    column: String,
    ee: f64,
}

fn best(cell: Option<geotarget_core::eval::Cell>) -> Option<BestCell> {
    cell.map(|(f, c, ee)| BestCell {
        family: f.to_string(),
        column: c.to_string(),
        ee,
    })
}

fn evaluate(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg.config;
    let (ing, regions) = load_ingested(&ctx.art)?;
    let assignments = load_assignments(&ctx.art, &cfg.cluster.k)?;
    let plan = grid_plan(ctx);
    let truth = ing.test_labels().labels;
    let mut cells = Vec::with_capacity(plan.families.len() * plan.columns.len());
    for &family in &plan.families {
        for &column in &plan.columns {
            let rel = format!("predictions/{}.csv", cell_stem(family, column));
            let rows = read_prediction_rows(&ctx.art.read("train", &rel)?, &ctx.art.path(&rel))?;
            let aligned = rows.len() == ing.test.len()
                && rows
                    .iter()
                    .zip(&ing.test.household_id)
                    .all(|(r, h)| &r.household_id == h)
                && rows.iter().zip(&truth).all(|(r, t)| r.truth == *t);
            if !aligned {
                return Err(CliError::Stale {
                    path: ctx.art.path(&rel),
                    reason: "rows do not match ingest/test.csv".into(),
                });
            }
            let prediction = Prediction {
                labels: rows.iter().map(|r| r.label).collect(),
                scores: rows.iter().map(|r| r.score.unwrap_or(f64::NAN)).collect(),
            };
            cells.push(pipeline::CellResult {
                family,
                column,
                prediction,
                clusters: None,
                model: None,
            });
        }
    }
    let grid = pipeline::evaluate_grid(&plan, &cells, &ing.test, &regions, &truth, &assignments)?;

    let mut out = ctx.art.writer("evaluate");
    out.write(
        "evaluation/grid_ee.csv",
        &csv_bytes(|b| grid.write_table_csv(b))?,
    )?;
    out.write(
        "evaluation/grid_long.csv",
        &csv_bytes(|b| grid.write_long_csv(b))?,
    )?;
    out.write(
        "evaluation/grid_macro.csv",
        &csv_bytes(|b| grid.write_macro_csv(b))?,
    )?;
    let geo = province_geojson(&grid, &regions, &assignments);
    let mut text = serde_json::to_string_pretty(&geo)?;
    text.push('\n');
    out.write("evaluation/provinces.geojson", text.as_bytes())?;
    let (bb, bs) = (best(grid.best_benchmark()), best(grid.best_sml()));
    let reduction = bb.as_ref().zip(bs.as_ref()).map(|(b, s)| b.ee - s.ee);
    out.write_json(
        "evaluation/summary.json",
        &json!({
            "best_benchmark": bb,
            "best_sml": bs,
            "ee_reduction": reduction,
            "n_test": ing.test.len(),
            "threshold": ing.threshold,
        }),
    )?;
    out.finish()?;
    Ok(())
}

/// Region points carrying the province EE/IE of the best benchmark and best SML cells.
fn province_geojson(
    grid: &ComparisonGrid,
    regions: &RegionTable,
    assignments: &BTreeMap<usize, ClusterAssignment>,
) -> Value {
    let mut extra: Vec<Map<String, Value>> = vec![Map::new(); regions.len()];
    for (prefix, cell) in [
        ("benchmark", grid.best_benchmark()),
        ("sml", grid.best_sml()),
    ] {
        let Some((family, column, _)) = cell else {
            continue;
        };
        let entry = grid.entry(family, column);
        let by_province: BTreeMap<&str, (Option<f64>, Option<f64>)> = entry
            .reports
            .iter()
            .filter_map(|r| match &r.scope {
                Scope::Province(p) => Some((p.as_str(), (r.ee, r.ie))),
                _ => None,
            })
            .collect();
        let lookup = column
            .is_sml()
            .then(|| assignments.get(&column.k()))
            .flatten()
            .map(|a| a.lookup());
        for (i, region) in regions.entries().iter().enumerate() {
            let (ee, ie) = by_province
                .get(region.province_id.as_str())
                .copied()
                .unwrap_or((None, None));
            let e = &mut extra[i];
            e.insert(
                format!("{prefix}_model"),
                json!(format!("{family}/{column}")),
            );
            e.insert(format!("{prefix}_ee"), json!(ee));
            e.insert(format!("{prefix}_ie"), json!(ie));
            if let Some(c) = lookup
                .as_ref()
                .and_then(|l| l.get(region.region_id.as_str()))
            {
                e.insert("cluster".into(), json!(c));
            }
        }
    }
    regions.to_geojson(&extra)
}

/// Targeting metrics of a standalone prediction file with household_id, truth and label columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandaloneMetrics {
    pub n: usize,
    pub counts: geotarget_core::ConfusionCounts,
    pub ee: Option<f64>,
    pub ie: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn evaluate_predictions_file(path: &Path) -> Result<StandaloneMetrics> {
    let bytes = std::fs::read(path).map_err(|_| CliError::Missing {
        path: path.to_path_buf(),
        hint: "prediction file not found".into(),
    })?;
    let rows = read_prediction_rows(&bytes, path)?;
    let truth: Vec<u8> = rows.iter().map(|r| r.truth).collect();
    let pred: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let counts = confusion(&truth, &pred)?;
    let sec = secondary_metrics(&counts, None)?;
    Ok(StandaloneMetrics {
        n: rows.len(),
        counts,
        ee: exclusion_error(&counts).ok(),
        ie: inclusion_error(&counts).ok(),
        sensitivity: sec.sensitivity,
        specificity: sec.specificity,
    })
}

impl StandaloneMetrics {
    pub fn render(&self) -> String {
        let pct =
            |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{:.2}%", 100.0 * x));
        format!(
            "n = {}\ntp = {} fn = {} fp = {} tn = {}\nEE = {}\nIE = {}\nsensitivity = {}\nspecificity = {}\n",
            self.n,
            self.counts.tp,
            self.counts.fn_,
            self.counts.fp,
            self.counts.tn,
            pct(self.ee),
            pct(self.ie),
            pct(self.sensitivity),
            pct(self.specificity),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
    NotRun,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_path: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub stages: BTreeMap<String, StageStatus>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    /// Seconds since the Unix epoch when the manifest was written.
    pub timestamp: u64,
}

fn manifest(ctx: &Context, plan: &[Stage], done: usize, failure: Option<&CliError>) -> Manifest {
    let cfg = &ctx.cfg.config;
    let mut seeds = BTreeMap::from([
        ("master".to_string(), cfg.seed),
        ("split".to_string(), cfg.split_seed()),
        ("moran".to_string(), cfg.moran_seed()),
    ]);
    for &f in &cfg.models.families {
        seeds.insert(format!("model:{f}"), cfg.model_seed(f));
    }
    if let Some(s) = &cfg.synth {
        seeds.insert("synth".into(), s.spec(cfg.seed).seed);
    }
    let stages = plan
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let status = match (i.cmp(&done), failure) {
                (std::cmp::Ordering::Less, _) => StageStatus::Ok,
                (std::cmp::Ordering::Equal, Some(_)) => StageStatus::Failed,
                _ => StageStatus::NotRun,
            };
            (s.name().to_string(), status)
        })
        .collect();
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    Manifest {
        tool: "geotarget",
        version: env!("CARGO_PKG_VERSION"),
        config_path: ctx.cfg.path.display().to_string(),
        config_sha256: ctx.cfg.sha256.clone(),
        seeds,
        threads: rayon::current_num_threads(),
        stages,
        failed_stage: failure.map(|_| plan[done].name().to_string()),
        error: failure.map(ToString::to_string),
        timestamp,
    }
}

/// Runs every stage in order and writes `manifest.json`, also on failure.
pub fn run_pipeline(ctx: &Context) -> Result<()> {
    let plan = ctx.plan();
    let mut failure = None;
    let mut done = 0;
    match check_inputs(ctx) {
        Ok(()) => {
            for &stage in &plan {
                if let Err(e) = ctx.run_stage(stage) {
                    failure = Some(e);
                    break;
                }
                done += 1;
            }
        }
        Err(e) => {
            failure = Some(CliError::Stage {
                stage: plan[0].name(),
                source: Box::new(e),
            })
        }
    }
    let m = manifest(ctx, &plan, done, failure.as_ref());
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    crate::artifacts::write_atomic(&ctx.art.path("manifest.json"), text.as_bytes())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
