//! Residual summaries, tree importances and partial dependence.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::metrics::{Bucket, BucketSpec};
use super::pipeline::test_rows;
use super::report::{PredictionRecord, Variant};
use super::splits::SplitPlan;
use crate::features::FeatureRow;
use crate::models::{gbt_feature_names, gbt_features, FittedModel, GbtModel, ModelKind, ModelParams, TargetKind};
use crate::num::{lower_median, mean, quantile_sorted, sorted_copy, std_dev};

/// Grid points per partial-dependence curve.
pub const PDP_POINTS: usize = 21;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub target: TargetKind,
    pub model: ModelKind,
    pub bucket: Bucket,
    pub n: usize,
    /// Residuals are prediction minus target.
    pub mean_residual: f64,
    pub std_residual: f64,
    pub median_ape: f64,
}

pub fn residual_summaries(records: &[PredictionRecord], spec: &BucketSpec, models: &[ModelKind]) -> Vec<ResidualSummary> {
    let mut groups: BTreeMap<(TargetKind, ModelKind, Bucket), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.variant == Variant::Full && models.contains(&r.model)) {
        if let (Some(p), Some(a)) = (r.prediction, r.ape) {
            let g = groups.entry((r.target, r.model, r.bucket(spec))).or_default();
            g.0.push(p - r.target_value);
            g.1.push(a);
        }
    }
    groups
        .into_iter()
        .map(|((target, model, bucket), (res, apes))| ResidualSummary {
            target,
            model,
            bucket,
            n: res.len(),
            mean_residual: mean(&res).unwrap_or(0.0),
            std_residual: std_dev(&res).unwrap_or(0.0),
            median_ape: lower_median(&apes).unwrap_or(0.0),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub target: TargetKind,
    pub feature: String,
    pub importance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpCurve {
    pub target: TargetKind,
    pub feature: String,
    /// Feature values, in model input units.
    pub grid: Vec<f64>,
    /// Mean prediction at each grid value, in target units.
    pub mean_prediction: Vec<f64>,
    /// Mean prediction on the unmodified rows.
    pub grand_mean: f64,
}

impl PdpCurve {
    pub fn centered(&self) -> Vec<f64> {
        self.mean_prediction.iter().map(|v| v - self.grand_mean).collect()
    }
}

fn finish(target: TargetKind, v: f64) -> f64 {
    match target {
        TargetKind::Ae => v.clamp(0.0, 1.0),
        TargetKind::Cep => v,
    }
}

/// Sweep one input over its 2nd to 98th percentile while holding the others
/// at their observed values.
pub fn partial_dependence(model: &GbtModel, rows: &[&FeatureRow], feature: usize) -> Option<PdpCurve> {
    let inputs: Vec<([f64; crate::models::GBT_FEATURES], &FeatureRow)> =
        rows.iter().filter_map(|r| Some((gbt_features(r)?, *r))).collect();
    if inputs.is_empty() {
        return None;
    }
    let column: Vec<f64> = inputs.iter().map(|(x, _)| x[feature]).collect();
    let sorted = sorted_copy(&column);
    let grid: Vec<f64> = (0..PDP_POINTS)
        .map(|k| quantile_sorted(&sorted, 0.02 + 0.96 * k as f64 / (PDP_POINTS - 1) as f64))
        .collect();
    let avg = |value: Option<f64>| {
        let preds: Vec<f64> = inputs
            .iter()
            .map(|(x, row)| {
                let mut x = *x;
                if let Some(v) = value {
                    x[feature] = v;
                }
                finish(model.target, model.predict_features(&x, row))
            })
            .collect();
        mean(&preds).unwrap_or(0.0)
    };
    Some(PdpCurve {
        target: model.target,
        feature: gbt_feature_names().swap_remove(feature),
        mean_prediction: grid.iter().map(|&v| avg(Some(v))).collect(),
        grand_mean: avg(None),
        grid,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Diagnostics {
    pub residuals: Vec<ResidualSummary>,
    pub importance: Vec<ImportanceRow>,
    pub pdp: Vec<PdpCurve>,
}

/// Residual tables for OB-RLM and GBT plus GBT importances and partial
/// dependence for the `pdp_features` most important inputs. At most
/// `max_rows` evenly spaced test rows enter each curve.
pub fn diagnostics_tables(
    plan: &SplitPlan,
    rows: &[FeatureRow],
    models: &[FittedModel],
    records: &[PredictionRecord],
    spec: &BucketSpec,
    pdp_features: usize,
    max_rows: usize,
) -> Diagnostics {
    let split_records: Vec<PredictionRecord> =
        records.iter().filter(|r| r.split_id == plan.split_id).cloned().collect();
    let residuals = residual_summaries(&split_records, spec, &[ModelKind::Obrlm, ModelKind::Gbt]);
    let mut importance = Vec::new();
    let mut pdp = Vec::new();
    for m in models {
        let ModelParams::Gbt(g) = &m.params else { continue };
        if m.mask != crate::models::FeatureMask::FULL {
            continue;
        }
        let imp = g.importance();
        importance.extend(imp.iter().map(|(f, v)| ImportanceRow { target: m.target, feature: f.clone(), importance: *v }));
        let mut order: Vec<usize> = (0..imp.len()).filter(|&j| imp[j].1 > 0.0).collect();
        order.sort_by(|&a, &b| imp[b].1.total_cmp(&imp[a].1).then(a.cmp(&b)));
        let test = test_rows(plan, rows, m.target);
        let step = test.len().div_ceil(max_rows.max(1)).max(1);
        let sample: Vec<&FeatureRow> = test.into_iter().step_by(step).collect();
        for &j in order.iter().take(pdp_features) {
            pdp.extend(partial_dependence(g, &sample, j));
        }
    }
    Diagnostics { residuals, importance, pdp }
}
