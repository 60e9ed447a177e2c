//! Prediction records and the tables built from them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{Bucket, BucketSpec};
use super::stats::{clustered_signed_rank, holm_adjust, median_aggregate_test, wilcoxon_paired, Alternative};
use crate::market::{ParseEnumError, Treatment};
use crate::models::{Ablation, ModelKind, TargetKind};
use crate::num::{lower_median, median};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Full,
    Ablated(Ablation),
    /// Treatment-mean scored without the row's own treatment.
    LeaveTreatmentOut,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Ablated(a) => a.as_str(),
            Variant::LeaveTreatmentOut => "loto",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ParseEnumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "loto" => Ok(Variant::LeaveTreatmentOut),
            _ => s
                .parse::<Ablation>()
                .map(Variant::Ablated)
                .map_err(|_| ParseEnumError { what: "variant", value: s.into() }),
        }
    }
}

/// One model's prediction for one test row. `prediction` is `None` where the
/// model has nothing to say (no realized price yet).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub split_id: u32,
    pub market_id: String,
    pub treatment: Treatment,
    pub round: u32,
    pub seq: u32,
    pub time: f64,
    pub n_deals: u32,
    pub model: ModelKind,
    pub target: TargetKind,
    pub variant: Variant,
    pub prediction: Option<f64>,
    pub target_value: f64,
    pub ape: Option<f64>,
}

impl PredictionRecord {
    pub fn bucket(&self, spec: &BucketSpec) -> Bucket {
        Bucket::of(self.round, self.n_deals, &self.treatment, spec)
    }

    fn row_key(&self) -> (u32, &str, u32, u32) {
        (self.split_id, self.market_id.as_str(), self.round, self.seq)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketCell {
    pub target: TargetKind,
    pub model: ModelKind,
    pub variant: Variant,
    pub bucket: Bucket,
    pub n_rows: usize,
    /// Rows where the model produced a prediction.
    pub n_predicted: usize,
    /// Lower median of the APEs; `None` when nothing was predicted.
    pub median_ape: Option<f64>,
}

/// Median APE per (target, model, variant, bucket).
pub fn bucket_report(records: &[PredictionRecord], spec: &BucketSpec) -> Vec<BucketCell> {
    let mut cells: BTreeMap<(TargetKind, ModelKind, Variant, Bucket), (usize, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let e = cells.entry((r.target, r.model, r.variant, r.bucket(spec))).or_default();
        e.0 += 1;
        if let Some(a) = r.ape {
            e.1.push(a);
        }
    }
    cells
        .into_iter()
        .map(|((target, model, variant, bucket), (n_rows, apes))| BucketCell {
            target,
            model,
            variant,
            bucket,
            n_rows,
            n_predicted: apes.len(),
            median_ape: lower_median(&apes),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub target: TargetKind,
    pub model: ModelKind,
    pub bucket: Bucket,
    pub original: Option<f64>,
    pub ablated: Option<f64>,
    pub n_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub ablation: Ablation,
    pub cells: Vec<AblationCell>,
}

/// Pair the full and ablated variants of every applicable model.
pub fn ablation_report(ablation: Ablation, records: &[PredictionRecord], spec: &BucketSpec) -> AblationReport {
    let table = bucket_report(records, spec);
    let mut by_key: BTreeMap<(TargetKind, ModelKind, Bucket), AblationCell> = BTreeMap::new();
    for c in &table {
        if !ablation.applies_to(c.model, c.target) {
            continue;
        }
        let slot = match c.variant {
            Variant::Full => 0,
            Variant::Ablated(a) if a == ablation => 1,
            _ => continue,
        };
        let cell = by_key.entry((c.target, c.model, c.bucket)).or_insert(AblationCell {
            target: c.target,
            model: c.model,
            bucket: c.bucket,
            original: None,
            ablated: None,
            n_rows: c.n_rows,
        });
        if slot == 0 {
            cell.original = c.median_ape;
        } else {
            cell.ablated = c.median_ape;
        }
    }
    AblationReport { ablation, cells: by_key.into_values().collect() }
}

/// Paired comparison of two models within a bucket. Differences are
/// `ape(model_a) - ape(model_b)` over rows both models predicted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub target: TargetKind,
    pub bucket: Bucket,
    pub model_a: ModelKind,
    pub model_b: ModelKind,
    pub n_rows: usize,
    pub n_clusters: usize,
    pub median_difference: Option<f64>,
    /// Per-row test, one-sided in the direction of the median difference.
    pub row_alternative: Alternative,
    pub row_p: Option<f64>,
    pub row_p_holm: Option<f64>,
    /// Median of the per-game median differences.
    pub aggregated_median_difference: Option<f64>,
    pub aggregated_p: Option<f64>,
    pub aggregated_p_holm: Option<f64>,
    pub clustered_p: Option<f64>,
    pub clustered_p_holm: Option<f64>,
}

/// All pairwise comparisons among `models` for one target, bucket by
/// bucket, with Holm adjustment over the whole table per test type.
pub fn comparison_table(
    records: &[PredictionRecord],
    target: TargetKind,
    models: &[ModelKind],
    spec: &BucketSpec,
) -> Vec<ComparisonRow> {
    type RowKey<'a> = (u32, &'a str, u32, u32);
    let mut by_model: BTreeMap<ModelKind, BTreeMap<RowKey, &PredictionRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.target == target && r.variant == Variant::Full && r.ape.is_some()) {
        by_model.entry(r.model).or_default().insert(r.row_key(), r);
    }
    let mut buckets: Vec<Bucket> =
        records.iter().filter(|r| r.target == target).map(|r| r.bucket(spec)).collect();
    buckets.sort_unstable();
    buckets.dedup();

    let mut rows = Vec::new();
    for bucket in buckets {
        for (i, &a) in models.iter().enumerate() {
            for &b in &models[i + 1..] {
                let empty = BTreeMap::new();
                let ra = by_model.get(&a).unwrap_or(&empty);
                let rb = by_model.get(&b).unwrap_or(&empty);
                let mut diffs = Vec::new();
                let mut clusters: Vec<(Treatment, &str)> = Vec::new();
                for (k, x) in ra {
                    if x.bucket(spec) != bucket {
                        continue;
                    }
                    if let (Some(y), Some(ax)) = (rb.get(k), x.ape) {
                        if let Some(by) = y.ape {
                            diffs.push(ax - by);
                            clusters.push((x.treatment, x.market_id.as_str()));
                        }
                    }
                }
                rows.push(compare(target, bucket, a, b, &diffs, &clusters));
            }
        }
    }
    let adjust = |get: fn(&ComparisonRow) -> Option<f64>, set: fn(&mut ComparisonRow, f64), rows: &mut [ComparisonRow]| {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| get(&rows[i]).is_some()).collect();
        let ps: Vec<f64> = idx.iter().map(|&i| get(&rows[i]).unwrap_or(1.0)).collect();
        for (&i, p) in idx.iter().zip(holm_adjust(&ps)) {
            set(&mut rows[i], p);
        }
    };
    adjust(|r| r.row_p, |r, p| r.row_p_holm = Some(p), &mut rows);
    adjust(|r| r.aggregated_p, |r, p| r.aggregated_p_holm = Some(p), &mut rows);
    adjust(|r| r.clustered_p, |r, p| r.clustered_p_holm = Some(p), &mut rows);
    rows
}

fn compare(
    target: TargetKind,
    bucket: Bucket,
    model_a: ModelKind,
    model_b: ModelKind,
    diffs: &[f64],
    clusters: &[(Treatment, &str)],
) -> ComparisonRow {
    let median_difference = median(diffs);
    let row_alternative = Alternative::from_sign(median_difference.unwrap_or(0.0));
    let row_p = (!diffs.is_empty()).then(|| wilcoxon_paired(diffs, row_alternative).p_value);
    let aggregated = median_aggregate_test(diffs, clusters).ok();
    let clustered = clustered_signed_rank(diffs, clusters).ok();
    let mut distinct: Vec<&(Treatment, &str)> = clusters.iter().collect();
    distinct.sort_unstable();
    distinct.dedup();
    ComparisonRow {
        target,
        bucket,
        model_a,
        model_b,
        n_rows: diffs.len(),
        n_clusters: distinct.len(),
        median_difference,
        row_alternative,
        row_p,
        row_p_holm: None,
        aggregated_median_difference: aggregated.as_ref().and_then(|a| {
            let m: Vec<f64> = a.medians.iter().map(|(_, v)| *v).collect();
            median(&m)
        }),
        aggregated_p: aggregated.map(|a| a.test.p_value),
        aggregated_p_holm: None,
        clustered_p: clustered.map(|c| c.p_value),
        clustered_p_holm: None,
    }
}
