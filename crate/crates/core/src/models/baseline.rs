//! Treatment-mean and book-midpoint baselines.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{lookup, FitError, ModelKind, TargetKind};
use crate::features::FeatureRow;
use crate::market::Treatment;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanAccumulator {
    pub sum: f64,
    pub count: usize,
}

impl MeanAccumulator {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Mean round target per treatment, one observation per (market, round).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentMeanModel {
    pub groups: Vec<(Treatment, MeanAccumulator)>,
    pub global: MeanAccumulator,
}

impl TreatmentMeanModel {
    pub fn mean_of(&self, treatment: &Treatment) -> Option<f64> {
        lookup(&self.groups, treatment).and_then(MeanAccumulator::mean)
    }

    pub fn predict(&self, row: &FeatureRow) -> f64 {
        self.mean_of(&row.treatment).unwrap_or_else(|| self.global.mean().unwrap_or(0.0))
    }

    /// Leave-one-treatment-out prediction: the pooled mean of every other
    /// treatment.
    pub fn predict_excluding(&self, treatment: &Treatment) -> f64 {
        let own = lookup(&self.groups, treatment).copied().unwrap_or(MeanAccumulator { sum: 0.0, count: 0 });
        let rest = MeanAccumulator { sum: self.global.sum - own.sum, count: self.global.count - own.count };
        rest.mean().or_else(|| self.global.mean()).unwrap_or(0.0)
    }
}

pub fn baseline_treatment_mean(train: &[FeatureRow], target: TargetKind) -> Result<TreatmentMeanModel, FitError> {
    let mut seen: BTreeMap<(&str, u32), (Treatment, f64)> = BTreeMap::new();
    for r in train {
        if let Some(y) = target.of(r).filter(|y| y.is_finite()) {
            seen.entry((r.market_id.as_str(), r.round)).or_insert((r.treatment, y));
        }
    }
    if seen.is_empty() {
        return Err(FitError::NoUsableRows(ModelKind::TreatmentMean));
    }
    let mut groups: BTreeMap<Treatment, MeanAccumulator> = BTreeMap::new();
    let mut global = MeanAccumulator { sum: 0.0, count: 0 };
    for (t, y) in seen.into_values() {
        let g = groups.entry(t).or_insert(MeanAccumulator { sum: 0.0, count: 0 });
        g.sum += y;
        g.count += 1;
        global.sum += y;
        global.count += 1;
    }
    Ok(TreatmentMeanModel { groups: groups.into_iter().collect(), global })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BookMidpointModel {
    /// Used when neither side of the book has orders.
    pub fallback: TreatmentMeanModel,
}

/// Midpoint of the highest bid decile and the lowest ask decile, falling back
/// to the side that exists and then to the treatment mean.
pub fn baseline_book_midpoint(row: &FeatureRow, fallback: &TreatmentMeanModel) -> f64 {
    match (row.bids, row.asks) {
        (Some(b), Some(a)) => 0.5 * (b.max() + a.min()),
        (Some(b), None) => b.max(),
        (None, Some(a)) => a.min(),
        (None, None) => fallback.predict(row),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DecileVector;
    use crate::market::{FeedbackSetting, MarketSizeClass, PriceRule};
    use crate::models::tests::row;

    fn treatment(feedback: FeedbackSetting) -> Treatment {
        Treatment { feedback, price_rule: PriceRule::First, size: MarketSizeClass::Small }
    }

    #[test]
    fn midpoint_and_fallbacks() {
        let mut r = row(None, 0);
        r.bids = Some(DecileVector { values: core::array::from_fn(|k| 80.0 + k as f64), count: 3 });
        r.asks = Some(DecileVector { values: core::array::from_fn(|k| 100.0 + k as f64), count: 3 });
        let fb = baseline_treatment_mean(&[row(None, 0)], TargetKind::Cep).unwrap();
        assert_eq!(baseline_book_midpoint(&r, &fb), 95.0);
        r.asks = None;
        assert_eq!(baseline_book_midpoint(&r, &fb), 90.0);
        r.bids = None;
        assert_eq!(baseline_book_midpoint(&r, &fb), 92.0);
    }

    #[test]
    fn one_observation_per_market_round() {
        let mut rows = Vec::new();
        for (m, round, y, fb) in [
            ("a", 1, 10.0, FeedbackSetting::Full),
            ("a", 1, 10.0, FeedbackSetting::Full),
            ("a", 1, 10.0, FeedbackSetting::Full),
            ("a", 2, 20.0, FeedbackSetting::Full),
            ("b", 1, 100.0, FeedbackSetting::BlackBox),
        ] {
            let mut r = row(None, 0);
            r.market_id = m.into();
            r.round = round;
            r.cep_mid = Some(y);
            r.treatment = treatment(fb);
            rows.push(r);
        }
        let m = baseline_treatment_mean(&rows, TargetKind::Cep).unwrap();
        assert_eq!(m.mean_of(&treatment(FeedbackSetting::Full)), Some(15.0));
        assert_eq!(m.global.mean(), Some(130.0 / 3.0));
        assert_eq!(m.predict_excluding(&treatment(FeedbackSetting::Full)), 100.0);
        assert_eq!(m.predict_excluding(&treatment(FeedbackSetting::BlackBox)), 15.0);
        let mut unseen = row(None, 0);
        unseen.treatment = treatment(FeedbackSetting::Other);
        assert_eq!(m.predict(&unseen), 130.0 / 3.0);
    }
}
