//! Predictors for allocative efficiency (AE) and the competitive-equilibrium
//! price midpoint (CEP).
//!
//! Every model is fit with [`fit`] and evaluated with [`predict`]. AE outputs
//! are clipped to `[0, 1]`; CEP outputs are in money units.

mod baseline;
mod cemh;
mod gbt;
pub mod linalg;
mod obrlm;
pub mod robust;
pub mod trees;

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::FeatureRow;
use crate::market::ParseEnumError;

pub use baseline::{baseline_book_midpoint, baseline_treatment_mean, BookMidpointModel, TreatmentMeanModel};
pub use cemh::{fit_cemh, CemhGroup, CemhGrouping, CemhModel, GroupKey, N_DEALS_CAP};
pub use gbt::{fit_gbt, gbt_feature_names, gbt_features, GbtGrid, GbtModel, GBT_FEATURES};
pub use obrlm::{fit_obrlm, ObrlmModel, ObrlmPartition};
pub use robust::HuberConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TargetKind {
    #[serde(rename = "AE")]
    Ae,
    #[serde(rename = "CEP")]
    Cep,
}

impl TargetKind {
    pub const ALL: [TargetKind; 2] = [TargetKind::Ae, TargetKind::Cep];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Ae => "AE",
            TargetKind::Cep => "CEP",
        }
    }

    /// The row's target value, if known.
    pub fn of(self, row: &FeatureRow) -> Option<f64> {
        match self {
            TargetKind::Ae => row.ae_round,
            TargetKind::Cep => row.cep_mid,
        }
    }

    fn finish(self, raw: f64) -> f64 {
        match self {
            TargetKind::Ae => raw.clamp(0.0, 1.0),
            TargetKind::Cep => raw,
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetKind {
    type Err = ParseEnumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TargetKind::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ParseEnumError { what: "target", value: s.into() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "EMH")]
    Emh,
    #[serde(rename = "CEMH")]
    Cemh,
    #[serde(rename = "OBRLM")]
    Obrlm,
    #[serde(rename = "GBT")]
    Gbt,
    TreatmentMean,
    BookMidpoint,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Emh,
        ModelKind::Cemh,
        ModelKind::Obrlm,
        ModelKind::Gbt,
        ModelKind::TreatmentMean,
        ModelKind::BookMidpoint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Emh => "EMH",
            ModelKind::Cemh => "CEMH",
            ModelKind::Obrlm => "OBRLM",
            ModelKind::Gbt => "GBT",
            ModelKind::TreatmentMean => "TreatmentMean",
            ModelKind::BookMidpoint => "BookMidpoint",
        }
    }

    pub fn supports(self, target: TargetKind) -> bool {
        !(self == ModelKind::BookMidpoint && target == TargetKind::Ae)
    }

    /// Whether the model reads the decile vectors (and so needs both sides).
    pub fn needs_book(self) -> bool {
        matches!(self, ModelKind::Obrlm | ModelKind::Gbt)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ParseEnumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ParseEnumError { what: "model", value: s.into() })
    }
}

/// Input families a model may use. The decile vectors are always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMask {
    /// Feedback setting and price rule.
    pub treatment: bool,
    pub round: bool,
    pub n_deals: bool,
    pub deal_price: bool,
}

impl FeatureMask {
    pub const FULL: FeatureMask = FeatureMask { treatment: true, round: true, n_deals: true, deal_price: true };

    pub fn is_full(&self) -> bool {
        *self == FeatureMask::FULL
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask::FULL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    /// Drop treatment descriptors, round and deal count.
    OrderbookOnly,
    /// Drop the last realized deal price.
    NoDealPrice,
}

impl Ablation {
    pub const ALL: [Ablation; 2] = [Ablation::OrderbookOnly, Ablation::NoDealPrice];

    pub fn mask(self) -> FeatureMask {
        match self {
            Ablation::OrderbookOnly => {
                FeatureMask { treatment: false, round: false, n_deals: false, deal_price: true }
            }
            Ablation::NoDealPrice => FeatureMask { deal_price: false, ..FeatureMask::FULL },
        }
    }

    /// Models that have a non-trivial variant under this ablation.
    pub fn applies_to(self, kind: ModelKind, target: TargetKind) -> bool {
        match self {
            Ablation::OrderbookOnly => matches!(
                (kind, target),
                (ModelKind::Obrlm, TargetKind::Ae)
                    | (ModelKind::Gbt, _)
                    | (ModelKind::Cemh, TargetKind::Cep)
            ),
            Ablation::NoDealPrice => kind == ModelKind::Obrlm && target == TargetKind::Ae,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::OrderbookOnly => "orderbook-only",
            Ablation::NoDealPrice => "no-deal-price",
        }
    }
}

impl FromStr for Ablation {
    type Err = ParseEnumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ParseEnumError { what: "ablation", value: s.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FitError {
    #[error("no training rows")]
    EmptyTrainingSet,
    #[error("{0} cannot predict {1}")]
    UnsupportedTarget(ModelKind, TargetKind),
    #[error("no training row has the inputs and target {0} needs")]
    NoUsableRows(ModelKind),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PredictError {
    #[error("missing input: {0}")]
    MissingInput(&'static str),
    #[error("no realized deal price in the current round")]
    NoRealizedPrice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub mask: FeatureMask,
    /// `None` uses the default grid for the target.
    pub gbt_grid: Option<GbtGrid>,
    pub seed: u64,
    pub cemh_grouping: CemhGrouping,
    pub huber: HuberConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mask: FeatureMask::FULL,
            gbt_grid: None,
            seed: 0,
            cemh_grouping: CemhGrouping::default(),
            huber: HuberConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum ModelParams {
    Emh,
    Cemh(CemhModel),
    Obrlm(ObrlmModel),
    Gbt(GbtModel),
    TreatmentMean(TreatmentMeanModel),
    BookMidpoint(BookMidpointModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub target: TargetKind,
    pub mask: FeatureMask,
    pub params: ModelParams,
}

/// Rows usable for training `kind` against `target`.
pub fn training_rows<'a>(
    rows: &'a [FeatureRow],
    kind: ModelKind,
    target: TargetKind,
) -> impl Iterator<Item = &'a FeatureRow> + 'a {
    rows.iter()
        .filter(move |r| target.of(r).is_some_and(f64::is_finite) && (!kind.needs_book() || r.has_book()))
}

pub fn fit(
    kind: ModelKind,
    target: TargetKind,
    train: &[FeatureRow],
    opts: &FitOptions,
) -> Result<FittedModel, FitError> {
    if train.is_empty() {
        return Err(FitError::EmptyTrainingSet);
    }
    if !kind.supports(target) {
        return Err(FitError::UnsupportedTarget(kind, target));
    }
    let params = match kind {
        ModelKind::Emh => ModelParams::Emh,
        ModelKind::Cemh => ModelParams::Cemh(fit_cemh(train, target, opts.cemh_grouping, &opts.mask, &opts.huber)?),
        ModelKind::Obrlm => ModelParams::Obrlm(fit_obrlm(train, target, &opts.mask, &opts.huber)?),
        ModelKind::Gbt => {
            let grid = opts.gbt_grid.clone().unwrap_or_else(|| GbtGrid::default_for(target));
            ModelParams::Gbt(fit_gbt(train, target, &grid, &opts.mask, opts.seed)?)
        }
        ModelKind::TreatmentMean => ModelParams::TreatmentMean(baseline_treatment_mean(train, target)?),
        ModelKind::BookMidpoint => {
            ModelParams::BookMidpoint(BookMidpointModel { fallback: baseline_treatment_mean(train, target)? })
        }
    };
    Ok(FittedModel { kind, target, mask: opts.mask, params })
}

/// AE: always one. CEP: the last realized deal price.
pub fn predict_emh(row: &FeatureRow, target: TargetKind) -> Result<f64, PredictError> {
    match target {
        TargetKind::Ae => Ok(1.0),
        TargetKind::Cep => row.last_deal_price.ok_or(PredictError::NoRealizedPrice),
    }
}

pub fn predict(model: &FittedModel, row: &FeatureRow) -> Result<f64, PredictError> {
    let raw = match &model.params {
        ModelParams::Emh => predict_emh(row, model.target)?,
        ModelParams::Cemh(m) => m.predict(row)?,
        ModelParams::Obrlm(m) => m.predict(row)?,
        ModelParams::Gbt(m) => m.predict(row)?,
        ModelParams::TreatmentMean(m) => m.predict(row),
        ModelParams::BookMidpoint(m) => baseline_book_midpoint(row, &m.fallback),
    };
    Ok(model.target.finish(raw))
}

pub(crate) fn require_book(row: &FeatureRow) -> Result<(), PredictError> {
    if row.bids.is_none() {
        Err(PredictError::MissingInput("bid deciles"))
    } else if row.asks.is_none() {
        Err(PredictError::MissingInput("ask deciles"))
    } else {
        Ok(())
    }
}

/// Sorted `(key, value)` table with binary-search lookup.
pub(crate) fn lookup<'a, K: Ord, V>(table: &'a [(K, V)], key: &K) -> Option<&'a V> {
    table.binary_search_by(|(k, _)| k.cmp(key)).ok().map(|i| &table[i].1)
}
