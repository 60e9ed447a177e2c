//! Fit and score models on one split.

use alloc::vec::Vec;

use super::metrics::{ape, BucketSpec};
use super::report::{ablation_report, AblationReport, PredictionRecord, Variant};
use super::splits::SplitPlan;
use super::EvalError;
use crate::features::FeatureRow;
use crate::models::{
    baseline_treatment_mean, fit, predict, Ablation, FitOptions, FittedModel, ModelKind, PredictError,
    TargetKind,
};

/// Every supported (model, target) pair.
pub fn default_roster() -> Vec<(ModelKind, TargetKind)> {
    TargetKind::ALL
        .into_iter()
        .flat_map(|t| ModelKind::ALL.into_iter().filter(move |k| k.supports(t)).map(move |k| (k, t)))
        .collect()
}

pub fn train_rows(plan: &SplitPlan, rows: &[FeatureRow]) -> Vec<FeatureRow> {
    rows.iter().filter(|r| plan.is_train(&r.market_id)).cloned().collect()
}

/// Scored rows: test markets, both book sides present, target known.
pub fn test_rows<'a>(plan: &'a SplitPlan, rows: &'a [FeatureRow], target: TargetKind) -> Vec<&'a FeatureRow> {
    rows.iter()
        .filter(|r| plan.is_test(&r.market_id) && r.has_book() && target.of(r).is_some_and(f64::is_finite))
        .collect()
}

pub fn fit_split(
    plan: &SplitPlan,
    rows: &[FeatureRow],
    roster: &[(ModelKind, TargetKind)],
    opts: &FitOptions,
) -> Result<Vec<FittedModel>, EvalError> {
    let train = train_rows(plan, rows);
    let opts = FitOptions { seed: plan.rng_seed, ..opts.clone() };
    roster
        .iter()
        .map(|&(kind, target)| {
            fit(kind, target, &train, &opts).map_err(|source| EvalError::Fit {
                model: kind,
                target,
                split: plan.split_id,
                source,
            })
        })
        .collect()
}

fn record(
    plan: &SplitPlan,
    row: &FeatureRow,
    model: ModelKind,
    target: TargetKind,
    variant: Variant,
    prediction: Option<f64>,
) -> PredictionRecord {
    let y = target.of(row).unwrap_or(f64::NAN);
    PredictionRecord {
        split_id: plan.split_id,
        market_id: row.market_id.clone(),
        treatment: row.treatment,
        round: row.round,
        seq: row.seq,
        time: row.time,
        n_deals: row.n_deals,
        model,
        target,
        variant,
        prediction,
        target_value: y,
        ape: prediction.map(|p| ape(y, p)),
    }
}

pub fn predict_split(
    plan: &SplitPlan,
    rows: &[FeatureRow],
    models: &[FittedModel],
    variant: Variant,
) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    for m in models {
        for row in test_rows(plan, rows, m.target) {
            let prediction = match predict(m, row) {
                Ok(p) => Some(p),
                Err(PredictError::NoRealizedPrice) => None,
                // test rows always carry both sides
                Err(PredictError::MissingInput(_)) => None,
            };
            out.push(record(plan, row, m.kind, m.target, variant, prediction));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutput {
    pub models: Vec<FittedModel>,
    pub records: Vec<PredictionRecord>,
}

pub fn run_split(
    plan: &SplitPlan,
    rows: &[FeatureRow],
    roster: &[(ModelKind, TargetKind)],
    opts: &FitOptions,
    variant: Variant,
) -> Result<SplitOutput, EvalError> {
    let models = fit_split(plan, rows, roster, opts)?;
    let records = predict_split(plan, rows, &models, variant);
    Ok(SplitOutput { models, records })
}

/// Treatment-mean predictions where each test row's own treatment is left out
/// of the training mean.
pub fn loto_records(plan: &SplitPlan, rows: &[FeatureRow], target: TargetKind) -> Result<Vec<PredictionRecord>, EvalError> {
    let train = train_rows(plan, rows);
    let model = baseline_treatment_mean(&train, target).map_err(|source| EvalError::Fit {
        model: ModelKind::TreatmentMean,
        target,
        split: plan.split_id,
        source,
    })?;
    Ok(test_rows(plan, rows, target)
        .into_iter()
        .map(|row| {
            let p = model.predict_excluding(&row.treatment);
            record(plan, row, ModelKind::TreatmentMean, target, Variant::LeaveTreatmentOut, Some(target_clip(target, p)))
        })
        .collect())
}

fn target_clip(target: TargetKind, p: f64) -> f64 {
    match target {
        TargetKind::Ae => p.clamp(0.0, 1.0),
        TargetKind::Cep => p,
    }
}

/// Refit the applicable models with and without the ablation's mask on
/// every plan and compare median APE bucket by bucket.
pub fn run_ablation(
    ablation: Ablation,
    plans: &[SplitPlan],
    rows: &[FeatureRow],
    roster: &[(ModelKind, TargetKind)],
    opts: &FitOptions,
    spec: &BucketSpec,
) -> Result<(AblationReport, Vec<PredictionRecord>), EvalError> {
    let applicable: Vec<(ModelKind, TargetKind)> =
        roster.iter().copied().filter(|&(k, t)| ablation.applies_to(k, t)).collect();
    let masked = FitOptions { mask: ablation.mask(), ..opts.clone() };
    let mut records = Vec::new();
    for plan in plans {
        records.extend(run_split(plan, rows, &applicable, opts, Variant::Full)?.records);
        records.extend(run_split(plan, rows, &applicable, &masked, Variant::Ablated(ablation))?.records);
    }
    Ok((ablation_report(ablation, &records, spec), records))
}
