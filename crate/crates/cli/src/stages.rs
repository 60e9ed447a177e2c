//! Pipeline stages. Each reads the artifacts of earlier stages from the
//! output tree, checks they were produced under the same configuration and
//! writes its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cdainv_core::eval::{
    ablation_report, bucket_report, comparison_table, diagnostics_tables, fit_split, loto_records, make_splits_by_id,
    predict_split, run_split, AblationReport, BucketCell, ComparisonRow, PredictionRecord, SplitPlan, Variant,
    DIAGNOSTICS_SPLIT,
};
use cdainv_core::features::{snapshot_stream, FeatureRow};
use cdainv_core::models::{fit, CemhGrouping, FitOptions, ModelParams};
use cdainv_core::num::lower_median;
use cdainv_core::sim::simulate_corpus;
use cdainv_core::{FittedModel, ModelKind, TargetKind, Treatment};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::error::{AppError, Result};
use crate::io::{export, ingest_paths, Corpus, CorpusPaths, IngestReport, Provenance};
use crate::tables::{self, fmt_opt, CsvIn, CsvOut, Preamble};

pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    pub strict: bool,
}

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf, jobs: Option<usize>, strict: bool) -> Result<Self> {
        cfg.validate()?;
        if jobs == Some(0) {
            return Err(AppError::Config("--jobs must be positive".into()));
        }
        let hash = cfg.hash();
        Ok(Context { cfg, hash, out, jobs, strict })
    }

    pub fn preamble(&self) -> Preamble {
        Preamble::new(&self.hash, self.cfg.seed)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn corpus_dir(&self) -> PathBuf {
        self.path("corpus")
    }

    fn write(&self, rel: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| AppError::io(&path, e))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(rel, &text)
    }

    /// Fail unless `path` exists and carries this run's config hash.
    fn check_artifact(&self, path: &Path, producer: &str) -> Result<()> {
        if !path.exists() {
            return Err(AppError::MissingArtifact(format!(
                "{} not found; run `cdainv {producer}` first (with the same --out)",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let found = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str::<Stamp>(&text).ok().map(|s| s.config_hash)
        } else {
            text.lines().next().and_then(Preamble::parse).map(|p| p.config_hash)
        };
        match found {
            Some(h) if h == self.hash => Ok(()),
            Some(h) => Err(AppError::Data(format!(
                "{} was produced with config_hash {h}, but the current configuration hashes to {}; \
                 rerun `cdainv {producer}` or use the original configuration",
                path.display(),
                self.hash
            ))),
            None => Err(AppError::Data(format!(
                "{} has no config_hash stamp; regenerate it with `cdainv {producer}`",
                path.display()
            ))),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.unwrap_or(0))
            .build()
            .map_err(|e| AppError::Config(format!("thread pool: {e}")))
    }
}

/// Header fields carried by every JSON artifact.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Stamp {
    schema_version: u32,
    config_hash: String,
    seed: u64,
}

impl Stamp {
    fn of(ctx: &Context) -> Self {
        Stamp { schema_version: SCHEMA_VERSION, config_hash: ctx.hash.clone(), seed: ctx.cfg.seed }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(flatten)]
    stamp: Stamp,
    provenance: Provenance,
    markets: usize,
    has_valuations: bool,
    skipped_rows: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(flatten)]
    stamp: Stamp,
    split_id: u32,
    model: FittedModel,
}

fn write_run_config(ctx: &Context) -> Result<()> {
    #[derive(Serialize)]
    struct Echo<'a> {
        #[serde(flatten)]
        stamp: Stamp,
        config: &'a RunConfig,
    }
    ctx.write_json("run_config.json", &Echo { stamp: Stamp::of(ctx), config: &ctx.cfg })?;
    Ok(())
}

fn save_corpus(ctx: &Context, corpus: &Corpus, report: &IngestReport) -> Result<()> {
    let files = export(corpus, Some(&ctx.preamble()));
    ctx.write("corpus/events.csv", &files.events)?;
    ctx.write("corpus/deals.csv", &files.deals)?;
    ctx.write("corpus/treatments.csv", &files.treatments)?;
    let vpath = ctx.path("corpus/valuations.csv");
    match &files.valuations {
        Some(v) => {
            ctx.write("corpus/valuations.csv", v)?;
        }
        None if vpath.exists() => std::fs::remove_file(&vpath).map_err(|e| AppError::io(&vpath, e))?,
        None => {}
    }
    ctx.write_json(
        "corpus/manifest.json",
        &Manifest {
            stamp: Stamp::of(ctx),
            provenance: corpus.provenance,
            markets: corpus.markets.len(),
            has_valuations: corpus.has_valuations(),
            skipped_rows: report.skipped.clone(),
        },
    )?;
    write_run_config(ctx)?;
    eprintln!("wrote {} markets to {}", corpus.markets.len(), ctx.corpus_dir().display());
    Ok(())
}

pub fn simulate(ctx: &Context) -> Result<()> {
    let markets = simulate_corpus(&ctx.cfg.corpus_config())?;
    let corpus = Corpus { markets, provenance: Provenance::Synthetic, schema_version: SCHEMA_VERSION };
    save_corpus(ctx, &corpus, &IngestReport::default())
}

pub fn ingest(ctx: &Context, paths: &CorpusPaths) -> Result<IngestReport> {
    let (corpus, report) = ingest_paths(paths, ctx.strict)?;
    for (file, n) in &report.skipped {
        eprintln!("warning: skipped {n} row(s) of {file} whose market has no treatments entry");
    }
    save_corpus(ctx, &corpus, &report)?;
    Ok(report)
}

fn load_corpus(ctx: &Context) -> Result<Corpus> {
    let dir = ctx.corpus_dir();
    ctx.check_artifact(&dir.join("manifest.json"), "simulate` or `cdainv ingest")?;
    ctx.check_artifact(&dir.join("events.csv"), "simulate` or `cdainv ingest")?;
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let (mut corpus, _) = ingest_paths(&CorpusPaths::in_dir(&dir), true)?;
    corpus.provenance = manifest.provenance;
    Ok(corpus)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Schema {
        file: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

pub fn featurize(ctx: &Context) -> Result<Vec<FeatureRow>> {
    let corpus = load_corpus(ctx)?;
    if !corpus.has_valuations() {
        eprintln!("warning: the corpus has no valuations; rows carry no AE or CEP targets");
    }
    let rows: Vec<FeatureRow> =
        corpus.markets.iter().flat_map(|m| snapshot_stream(m, ctx.cfg.cadence, ctx.cfg.quote_pool)).collect();
    ctx.write("features.csv", &tables::write_features(&rows, &ctx.preamble()))?;
    eprintln!("wrote {} feature rows", rows.len());
    Ok(rows)
}

fn load_features(ctx: &Context) -> Result<Vec<FeatureRow>> {
    let path = ctx.path("features.csv");
    ctx.check_artifact(&path, "featurize")?;
    let header = tables::feature_header();
    let input = CsvIn::open(&path, &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    tables::read_features(&input)
}

fn plans_for(ctx: &Context, rows: &[FeatureRow]) -> Result<Vec<SplitPlan>> {
    let mut ids: Vec<(&str, Treatment)> = rows.iter().map(|r| (r.market_id.as_str(), r.treatment)).collect();
    ids.sort();
    ids.dedup();
    Ok(make_splits_by_id(&ids, ctx.cfg.n_splits, ctx.cfg.seed)?)
}

fn require_targets(rows: &[FeatureRow]) -> Result<()> {
    if rows.iter().any(|r| r.ae_round.is_some() || r.cep_mid.is_some()) {
        Ok(())
    } else {
        Err(AppError::Data(
            "no feature row has an AE or CEP target; fitting needs a corpus with valuations".into(),
        ))
    }
}

fn model_rel(split_id: u32, kind: ModelKind, target: TargetKind) -> String {
    format!("models/split_{split_id:03}/{}_{}.json", kind.as_str(), target.as_str())
}

pub fn fit_models(ctx: &Context) -> Result<()> {
    let rows = load_features(ctx)?;
    require_targets(&rows)?;
    let plans = plans_for(ctx, &rows)?;
    ctx.write("splits.csv", &tables::write_splits(&plans, &ctx.preamble()))?;
    let roster = ctx.cfg.roster();
    let opts = ctx.cfg.fit_options();
    let fitted: Vec<Vec<FittedModel>> = ctx
        .pool()?
        .install(|| plans.par_iter().map(|p| fit_split(p, &rows, &roster, &opts)).collect::<Result<_, _>>())?;
    for (plan, models) in plans.iter().zip(&fitted) {
        for m in models {
            let file = ModelFile { stamp: Stamp::of(ctx), split_id: plan.split_id, model: m.clone() };
            ctx.write_json(&model_rel(plan.split_id, m.kind, m.target), &file)?;
        }
    }
    write_run_config(ctx)?;
    eprintln!("fitted {} models on {} splits", roster.len(), plans.len());
    Ok(())
}

fn load_models(ctx: &Context, split_id: u32) -> Result<Vec<FittedModel>> {
    ctx.cfg
        .roster()
        .into_iter()
        .map(|(kind, target)| {
            let path = ctx.path(&model_rel(split_id, kind, target));
            ctx.check_artifact(&path, "fit")?;
            Ok(read_json::<ModelFile>(&path)?.model)
        })
        .collect()
}

pub fn predict(ctx: &Context) -> Result<Vec<PredictionRecord>> {
    let rows = load_features(ctx)?;
    let plans = plans_for(ctx, &rows)?;
    let loto_targets: Vec<TargetKind> =
        ctx.cfg.roster().into_iter().filter(|(k, _)| *k == ModelKind::TreatmentMean).map(|(_, t)| t).collect();
    let per_split: Vec<Vec<PredictionRecord>> = ctx.pool()?.install(|| {
        plans
            .par_iter()
            .map(|plan| {
                let models = load_models(ctx, plan.split_id)?;
                let mut records = predict_split(plan, &rows, &models, Variant::Full);
                for &t in &loto_targets {
                    records.extend(loto_records(plan, &rows, t)?);
                }
                Ok(records)
            })
            .collect::<Result<_>>()
    })?;
    let records: Vec<PredictionRecord> = per_split.into_iter().flatten().collect();
    ctx.write("predictions.csv", &tables::write_predictions(&records, &ctx.preamble()))?;
    eprintln!("wrote {} prediction records", records.len());
    Ok(records)
}

fn load_records(ctx: &Context, rel: &str, producer: &str) -> Result<Vec<PredictionRecord>> {
    let path = ctx.path(rel);
    ctx.check_artifact(&path, producer)?;
    tables::read_predictions(&CsvIn::open(&path, &tables::PREDICTIONS_HEADER)?)
}

/// Median APE over every scored row, per target, model and variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub target: TargetKind,
    pub model: ModelKind,
    pub variant: Variant,
    pub n_rows: usize,
    pub n_predicted: usize,
    pub median_ape: Option<f64>,
}

pub fn aggregate(records: &[PredictionRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(TargetKind, ModelKind, Variant), (usize, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let g = groups.entry((r.target, r.model, r.variant)).or_default();
        g.0 += 1;
        g.1.extend(r.ape);
    }
    groups
        .into_iter()
        .map(|((target, model, variant), (n_rows, apes))| AggregateRow {
            target,
            model,
            variant,
            n_rows,
            n_predicted: apes.len(),
            median_ape: lower_median(&apes),
        })
        .collect()
}

/// CEP correction coefficient per price rule and feedback setting, fit on
/// every row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemhCoefficient {
    pub price_rule: Option<String>,
    pub feedback_setting: Option<String>,
    pub coefficient: f64,
    pub rows: usize,
}

pub fn cemh_coefficients(rows: &[FeatureRow], opts: &FitOptions) -> Result<Vec<CemhCoefficient>> {
    let opts = FitOptions { cemh_grouping: CemhGrouping::Treatment, ..opts.clone() };
    let model = fit(ModelKind::Cemh, TargetKind::Cep, rows, &opts)
        .map_err(|e| AppError::Data(format!("CEMH coefficient table: {e}")))?;
    let ModelParams::Cemh(m) = model.params else { unreachable!("CEMH fit returns CEMH parameters") };
    let row = |g: &cdainv_core::models::CemhGroup| CemhCoefficient {
        price_rule: g.key.price_rule.map(|p| p.as_str().into()),
        feedback_setting: g.key.feedback.map(|f| f.as_str().into()),
        coefficient: g.value,
        rows: g.rows,
    };
    Ok(m.groups.iter().map(row).chain(std::iter::once(row(&m.global))).collect())
}

fn write_aggregate(rows: &[AggregateRow], p: &Preamble) -> String {
    let mut out = CsvOut::new(p, &["target", "model", "variant", "n_rows", "n_predicted", "median_ape"]);
    for r in rows {
        out.row([
            r.target.as_str().to_string(),
            r.model.as_str().into(),
            r.variant.as_str().into(),
            r.n_rows.to_string(),
            r.n_predicted.to_string(),
            fmt_opt(r.median_ape),
        ]);
    }
    out.finish()
}

fn write_cemh(rows: &[CemhCoefficient], p: &Preamble) -> String {
    let mut out = CsvOut::new(p, &["price_rule", "feedback_setting", "coefficient", "rows"]);
    for r in rows {
        out.row([
            r.price_rule.clone().unwrap_or_else(|| "pooled".into()),
            r.feedback_setting.clone().unwrap_or_else(|| "pooled".into()),
            tables::fmt_f64(r.coefficient),
            r.rows.to_string(),
        ]);
    }
    out.finish()
}

struct Evaluation {
    cells: Vec<BucketCell>,
    comparisons: BTreeMap<TargetKind, Vec<ComparisonRow>>,
    aggregate: Vec<AggregateRow>,
}

fn evaluation(ctx: &Context, records: &[PredictionRecord]) -> Evaluation {
    let spec = ctx.cfg.buckets;
    let comparisons = ctx
        .cfg
        .targets
        .iter()
        .map(|&t| {
            let models: Vec<ModelKind> = ctx.cfg.models.iter().copied().filter(|m| m.supports(t)).collect();
            (t, comparison_table(records, t, &models, &spec))
        })
        .collect();
    Evaluation { cells: bucket_report(records, &spec), comparisons, aggregate: aggregate(records) }
}

pub fn evaluate(ctx: &Context) -> Result<()> {
    let records = load_records(ctx, "predictions.csv", "predict")?;
    if records.is_empty() {
        return Err(AppError::Data("predictions.csv holds no records".into()));
    }
    let rows = load_features(ctx)?;
    let p = ctx.preamble();
    let ev = evaluation(ctx, &records);
    ctx.write("tables/bucket_cells.csv", &tables::write_bucket_cells(&ev.cells, &p))?;
    ctx.write("tables/ae_ape.csv", &tables::write_wide_table(&ev.cells, TargetKind::Ae, &p))?;
    ctx.write("tables/cep_ape.csv", &tables::write_wide_table(&ev.cells, TargetKind::Cep, &p))?;
    for (t, rows) in &ev.comparisons {
        let rel = format!("tables/comparisons_{}.csv", t.as_str().to_ascii_lowercase());
        ctx.write(&rel, &tables::write_comparisons(rows, &p))?;
    }
    ctx.write("tables/aggregate.csv", &write_aggregate(&ev.aggregate, &p))?;
    if ctx.cfg.targets.contains(&TargetKind::Cep) {
        ctx.write("tables/cemh_coefficients.csv", &write_cemh(&cemh_coefficients(&rows, &ctx.cfg.fit_options())?, &p))?;
    }

    let plans = plans_for(ctx, &rows)?;
    if let Some(plan) = plans.iter().find(|p| p.split_id == DIAGNOSTICS_SPLIT) {
        let models = load_models(ctx, plan.split_id)?;
        let d = &ctx.cfg.diagnostics;
        let diag = diagnostics_tables(plan, &rows, &models, &records, &ctx.cfg.buckets, d.pdp_features, d.pdp_rows);
        ctx.write("diagnostics/residuals.csv", &tables::write_residuals(&diag.residuals, &p))?;
        ctx.write("diagnostics/importance.csv", &tables::write_importance(&diag.importance, &p))?;
        ctx.write("diagnostics/pdp.csv", &tables::write_pdp(&diag.pdp, &p))?;
    }
    eprintln!("wrote evaluation tables to {}", ctx.path("tables").display());
    Ok(())
}

/// Refit the applicable models with each ablation's mask. The unmasked
/// side of every comparison is taken from predictions.csv.
pub fn ablate(ctx: &Context) -> Result<Vec<AblationReport>> {
    let rows = load_features(ctx)?;
    require_targets(&rows)?;
    let full = load_records(ctx, "predictions.csv", "predict")?;
    let plans = plans_for(ctx, &rows)?;
    let roster = ctx.cfg.roster();
    let spec = ctx.cfg.buckets;
    let pool = ctx.pool()?;
    let p = ctx.preamble();
    let mut reports = Vec::new();
    for &ablation in &ctx.cfg.ablations {
        let applicable: Vec<(ModelKind, TargetKind)> =
            roster.iter().copied().filter(|&(k, t)| ablation.applies_to(k, t)).collect();
        let opts = FitOptions { mask: ablation.mask(), ..ctx.cfg.fit_options() };
        let per_split: Vec<Vec<PredictionRecord>> = pool.install(|| {
            plans
                .par_iter()
                .map(|plan| run_split(plan, &rows, &applicable, &opts, Variant::Ablated(ablation)).map(|o| o.records))
                .collect::<Result<_, _>>()
        })?;
        let mut records = Vec::new();
        for (plan, ablated) in plans.iter().zip(per_split) {
            records.extend(
                full.iter()
                    .filter(|r| {
                        r.split_id == plan.split_id
                            && r.variant == Variant::Full
                            && applicable.contains(&(r.model, r.target))
                    })
                    .cloned(),
            );
            records.extend(ablated);
        }
        let report = ablation_report(ablation, &records, &spec);
        ctx.write(&format!("ablation/{}.csv", ablation.as_str()), &tables::write_ablation(&report, &p))?;
        ctx.write(&format!("ablation/{}_records.csv", ablation.as_str()), &tables::write_predictions(&records, &p))?;
        eprintln!("ablation {}: {} records", ablation.as_str(), records.len());
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Serialize)]
struct CorpusSummary {
    provenance: Provenance,
    markets: usize,
    has_valuations: bool,
    markets_per_treatment: BTreeMap<String, usize>,
    feature_rows: usize,
    skipped_rows: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct Report<'a> {
    #[serde(flatten)]
    stamp: Stamp,
    config: &'a RunConfig,
    corpus: CorpusSummary,
    median_ape: Vec<BucketCell>,
    aggregate: Vec<AggregateRow>,
    comparisons: BTreeMap<TargetKind, Vec<ComparisonRow>>,
    ablations: Vec<AblationReport>,
    cemh_coefficients: Vec<CemhCoefficient>,
    files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| AppError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| AppError::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join("report.json") {
            let bytes = std::fs::read(&path).map_err(|e| AppError::io(&path, e))?;
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            out.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(())
}

pub fn report(ctx: &Context) -> Result<()> {
    let manifest_path = ctx.corpus_dir().join("manifest.json");
    ctx.check_artifact(&manifest_path, "simulate` or `cdainv ingest")?;
    let manifest: Manifest = read_json(&manifest_path)?;
    let rows = load_features(ctx)?;
    let records = load_records(ctx, "predictions.csv", "predict")?;
    let ev = evaluation(ctx, &records);
    let mut ablations = Vec::new();
    for &a in &ctx.cfg.ablations {
        let recs = load_records(ctx, &format!("ablation/{}_records.csv", a.as_str()), "ablate")?;
        ablations.push(ablation_report(a, &recs, &ctx.cfg.buckets));
    }
    let cemh = if ctx.cfg.targets.contains(&TargetKind::Cep) {
        cemh_coefficients(&rows, &ctx.cfg.fit_options())?
    } else {
        Vec::new()
    };
    let mut per_treatment: BTreeMap<String, std::collections::BTreeSet<&str>> = BTreeMap::new();
    for r in &rows {
        per_treatment.entry(r.treatment.label()).or_default().insert(&r.market_id);
    }
    let mut files = BTreeMap::new();
    collect_files(&ctx.out, &ctx.out, &mut files)?;
    let report = Report {
        stamp: Stamp::of(ctx),
        config: &ctx.cfg,
        corpus: CorpusSummary {
            provenance: manifest.provenance,
            markets: manifest.markets,
            has_valuations: manifest.has_valuations,
            markets_per_treatment: per_treatment.into_iter().map(|(k, v)| (k, v.len())).collect(),
            feature_rows: rows.len(),
            skipped_rows: manifest.skipped_rows,
        },
        median_ape: ev.cells,
        aggregate: ev.aggregate,
        comparisons: ev.comparisons,
        ablations,
        cemh_coefficients: cemh,
        files,
    };
    let path = ctx.write_json("report.json", &report)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Every stage in order. With `skip_simulate` the corpus already in the
/// output tree is used.
pub fn run(ctx: &Context, skip_simulate: bool) -> Result<()> {
    if !skip_simulate {
        simulate(ctx)?;
    }
    featurize(ctx)?;
    fit_models(ctx)?;
    predict(ctx)?;
    evaluate(ctx)?;
    ablate(ctx)?;
    report(ctx)
}
