//! Corrected EMH: per-group AE medians, or per-group scalar corrections of the
//! last realized deal price.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::linalg::Design;
use super::robust::{huber_irls, HuberConfig};
use super::{FeatureMask, FitError, ModelKind, PredictError, TargetKind};
use crate::features::FeatureRow;
use crate::market::{FeedbackSetting, PriceRule};
use crate::num::median;

/// Deal counts at or above this share one group.
pub const N_DEALS_CAP: u32 = 5;

/// Which descriptors key the CEP correction coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum CemhGrouping {
    /// Price rule x feedback x deal count x round.
    #[default]
    TreatmentDealsRound,
    TreatmentDeals,
    DealsRound,
    /// Price rule x feedback only; one coefficient per treatment pair.
    Treatment,
}

/// Absent fields are pooled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub price_rule: Option<PriceRule>,
    pub feedback: Option<FeedbackSetting>,
    pub n_deals: Option<u32>,
    /// For CEP groups: fit on training rounds up to and including this one.
    pub round: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemhGroup {
    pub key: GroupKey,
    /// Median AE, or the price coefficient for CEP.
    pub value: f64,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemhModel {
    pub target: TargetKind,
    pub grouping: CemhGrouping,
    pub mask: FeatureMask,
    /// Sorted by key.
    pub groups: Vec<CemhGroup>,
    /// Used for rows whose group was not seen in training.
    pub global: CemhGroup,
}

struct KeyParts {
    treatment: bool,
    n_deals: bool,
    round: bool,
}

fn key_parts(target: TargetKind, grouping: CemhGrouping, mask: &FeatureMask) -> KeyParts {
    let (t, r) = match (target, grouping) {
        (TargetKind::Ae, _) | (_, CemhGrouping::TreatmentDealsRound) => (true, true),
        (_, CemhGrouping::TreatmentDeals) => (true, false),
        (_, CemhGrouping::DealsRound) => (false, true),
        (_, CemhGrouping::Treatment) => (true, false),
    };
    let n = mask.n_deals && (target == TargetKind::Ae || grouping != CemhGrouping::Treatment);
    KeyParts { treatment: t && mask.treatment, n_deals: n, round: r && mask.round }
}

fn key_of(row: &FeatureRow, parts: &KeyParts) -> GroupKey {
    GroupKey {
        price_rule: parts.treatment.then_some(row.treatment.price_rule),
        feedback: parts.treatment.then_some(row.treatment.feedback),
        n_deals: parts.n_deals.then_some(row.n_deals.min(N_DEALS_CAP)),
        round: parts.round.then_some(row.round),
    }
}

fn ratio_fit(rows: &[(f64, f64)], huber: &HuberConfig) -> f64 {
    let mut x = Design::with_capacity(1, rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for &(p, t) in rows {
        x.push_row(&[p]);
        y.push(t);
    }
    huber_irls(&x, &y, huber).coef[0]
}

pub fn fit_cemh(
    train: &[FeatureRow],
    target: TargetKind,
    grouping: CemhGrouping,
    mask: &FeatureMask,
    huber: &HuberConfig,
) -> Result<CemhModel, FitError> {
    let parts = key_parts(target, grouping, mask);
    let (groups, global) = match target {
        TargetKind::Ae => fit_ae(train, &parts)?,
        TargetKind::Cep => fit_cep(train, &parts, huber)?,
    };
    Ok(CemhModel { target, grouping, mask: *mask, groups, global })
}

fn fit_ae(train: &[FeatureRow], parts: &KeyParts) -> Result<(Vec<CemhGroup>, CemhGroup), FitError> {
    let mut by_key: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::new();
    for r in train {
        if let Some(ae) = r.ae_round.filter(|v| v.is_finite()) {
            by_key.entry(key_of(r, parts)).or_default().push(ae);
            all.push(ae);
        }
    }
    let global_value = median(&all).ok_or(FitError::NoUsableRows(ModelKind::Cemh))?;
    let groups = by_key
        .into_iter()
        .map(|(key, v)| CemhGroup { key, value: median(&v).unwrap_or(global_value), rows: v.len() })
        .collect();
    let global = CemhGroup { key: GroupKey::default_pooled(), value: global_value, rows: all.len() };
    Ok((groups, global))
}

fn fit_cep(
    train: &[FeatureRow],
    parts: &KeyParts,
    huber: &HuberConfig,
) -> Result<(Vec<CemhGroup>, CemhGroup), FitError> {
    // (base key without round) -> rows as (round, price, target)
    let mut by_base: BTreeMap<GroupKey, Vec<(u32, f64, f64)>> = BTreeMap::new();
    let mut all = Vec::new();
    for r in train {
        let (Some(p), Some(t)) = (r.last_deal_price, r.cep_mid) else { continue };
        if r.n_deals == 0 || !p.is_finite() || !t.is_finite() {
            continue;
        }
        let base = GroupKey { round: None, ..key_of(r, parts) };
        by_base.entry(base).or_default().push((r.round, p, t));
        all.push((p, t));
    }
    if all.is_empty() {
        return Err(FitError::NoUsableRows(ModelKind::Cemh));
    }
    let global = CemhGroup { key: GroupKey::default_pooled(), value: ratio_fit(&all, huber), rows: all.len() };

    let mut groups = Vec::new();
    for (base, mut rows) in by_base {
        if !parts.round {
            let pairs: Vec<(f64, f64)> = rows.iter().map(|&(_, p, t)| (p, t)).collect();
            groups.push(CemhGroup { key: base, value: ratio_fit(&pairs, huber), rows: pairs.len() });
            continue;
        }
        rows.sort_by_key(|&(round, _, _)| round);
        let mut end = 0;
        while end < rows.len() {
            let round = rows[end].0;
            while end < rows.len() && rows[end].0 == round {
                end += 1;
            }
            let pairs: Vec<(f64, f64)> = rows[..end].iter().map(|&(_, p, t)| (p, t)).collect();
            groups.push(CemhGroup {
                key: GroupKey { round: Some(round), ..base },
                value: ratio_fit(&pairs, huber),
                rows: pairs.len(),
            });
        }
    }
    Ok((groups, global))
}

impl GroupKey {
    fn default_pooled() -> Self {
        GroupKey { price_rule: None, feedback: None, n_deals: None, round: None }
    }
}

impl CemhModel {
    fn parts(&self) -> KeyParts {
        key_parts(self.target, self.grouping, &self.mask)
    }

    /// The group value used for `row`, and whether it came from a fitted group
    /// (false means the global fallback).
    pub fn group_value(&self, row: &FeatureRow) -> (f64, bool) {
        let key = key_of(row, &self.parts());
        let found = match self.target {
            TargetKind::Ae => self.groups.binary_search_by(|g| g.key.cmp(&key)).ok(),
            TargetKind::Cep => match self.groups.binary_search_by(|g| g.key.cmp(&key)) {
                Ok(i) => Some(i),
                // latest fitted round at or before the row's round
                Err(i) if key.round.is_some() && i > 0 => {
                    let prev = &self.groups[i - 1].key;
                    (GroupKey { round: None, ..*prev } == GroupKey { round: None, ..key }).then(|| i - 1)
                }
                Err(_) => None,
            },
        };
        match found {
            Some(i) => (self.groups[i].value, true),
            None => (self.global.value, false),
        }
    }

    pub fn predict(&self, row: &FeatureRow) -> Result<f64, PredictError> {
        let (v, _) = self.group_value(row);
        match self.target {
            TargetKind::Ae => Ok(v),
            TargetKind::Cep => {
                let p = row.last_deal_price.filter(|_| row.n_deals > 0).ok_or(PredictError::NoRealizedPrice)?;
                Ok(v * p)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::row;

    fn cep_rows(ratio: f64) -> Vec<FeatureRow> {
        (0..30)
            .map(|i| {
                let target = 50.0 + i as f64;
                let mut r = row(Some(ratio * target), 1 + (i % 3) as u32);
                r.cep_mid = Some(target);
                r.round = 1 + (i % 4) as u32;
                r
            })
            .collect()
    }

    #[test]
    fn exact_ratio_is_recovered() {
        let rows = cep_rows(0.9);
        let m = fit_cemh(&rows, TargetKind::Cep, CemhGrouping::default(), &FeatureMask::FULL, &HuberConfig::default())
            .unwrap();
        for g in &m.groups {
            assert!((g.value - 1.0 / 0.9).abs() < 1e-6, "{g:?}");
        }
        let p = m.predict(&rows[7]).unwrap();
        assert!((p - rows[7].cep_mid.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn identity_when_prices_at_target() {
        let m = fit_cemh(&cep_rows(1.0), TargetKind::Cep, CemhGrouping::TreatmentDeals, &FeatureMask::FULL, &HuberConfig::default())
            .unwrap();
        assert!(m.groups.iter().all(|g| (g.value - 1.0).abs() < 1e-12));
    }

    #[test]
    fn cumulative_round_lookup() {
        let rows = cep_rows(0.9);
        let m = fit_cemh(&rows, TargetKind::Cep, CemhGrouping::default(), &FeatureMask::FULL, &HuberConfig::default())
            .unwrap();
        let mut late = rows[0].clone();
        late.round = 40;
        assert!(m.group_value(&late).1);
        let mut early = rows[0].clone();
        early.round = 0;
        assert!(!m.group_value(&early).1);
    }

    #[test]
    fn ae_group_medians() {
        let mut rows = Vec::new();
        for (i, ae) in [0.2, 0.9, 0.5, 0.7].iter().enumerate() {
            let mut r = row(None, 0);
            r.ae_round = Some(*ae);
            r.seq = i as u32;
            rows.push(r);
        }
        let m = fit_cemh(&rows, TargetKind::Ae, CemhGrouping::default(), &FeatureMask::FULL, &HuberConfig::default())
            .unwrap();
        assert_eq!(m.groups.len(), 1);
        assert_eq!(m.groups[0].value, 0.6);
        assert_eq!(m.predict(&rows[0]), Ok(0.6));
    }

    #[test]
    fn cep_without_deal_is_unavailable() {
        let m = fit_cemh(&cep_rows(1.0), TargetKind::Cep, CemhGrouping::default(), &FeatureMask::FULL, &HuberConfig::default())
            .unwrap();
        assert_eq!(m.predict(&row(None, 0)), Err(PredictError::NoRealizedPrice));
    }
}
