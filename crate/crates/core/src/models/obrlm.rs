//! Orderbook regression: linear models on the decile vectors, fit per
//! partition with training rounds accumulated up to the predicted round.
//!
//! AE uses least squares on normalized deciles plus the normalized last deal
//! price, the deal count and an intercept. CEP uses a Huber regression on the
//! raw deciles without an intercept.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::linalg::{dot, weighted_lstsq, Design};
use super::robust::{huber_irls, HuberConfig};
use super::{require_book, FeatureMask, FitError, ModelKind, PredictError, TargetKind};
use crate::features::{FeatureRow, DECILES};
use crate::market::FeedbackSetting;

/// Absent fields are pooled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartitionKey {
    pub feedback: Option<FeedbackSetting>,
    /// Rows before the first deal of the round are fit separately.
    pub has_deal: Option<bool>,
    /// Fit on training rounds up to and including this one.
    pub round: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObrlmPartition {
    pub key: PartitionKey,
    pub coef: Vec<f64>,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObrlmModel {
    pub target: TargetKind,
    pub mask: FeatureMask,
    /// Column names, in coefficient order.
    pub columns: Vec<alloc::string::String>,
    /// Sorted by key; the all-pooled partition is always present.
    pub partitions: Vec<ObrlmPartition>,
}

fn columns(target: TargetKind, mask: &FeatureMask) -> Vec<alloc::string::String> {
    use alloc::format;
    let mut c: Vec<_> = (0..DECILES).map(|k| format!("bid_q{}", k * 10)).collect();
    c.extend((0..DECILES).map(|k| format!("ask_q{}", k * 10)));
    if target == TargetKind::Ae {
        if mask.deal_price {
            c.push("last_price".into());
        }
        if mask.n_deals {
            c.push("n_deals".into());
        }
        c.push("intercept".into());
    }
    c
}

fn design_row(row: &FeatureRow, target: TargetKind, mask: &FeatureMask, out: &mut Vec<f64>) -> Option<()> {
    out.clear();
    match target {
        TargetKind::Ae => {
            out.extend(row.normalized_bids()?);
            out.extend(row.normalized_asks()?);
            if mask.deal_price {
                out.push(row.normalized_last_price()?);
            }
            if mask.n_deals {
                out.push(row.n_deals as f64);
            }
            out.push(1.0);
        }
        TargetKind::Cep => {
            out.extend(row.bids?.values);
            out.extend(row.asks?.values);
        }
    }
    Some(())
}

/// Partition keys for a row, most specific first.
fn key_chain(row: &FeatureRow, target: TargetKind, mask: &FeatureMask) -> Vec<PartitionKey> {
    let round = mask.round.then_some(row.round);
    let mut chain = Vec::with_capacity(4);
    let mut push = |k: PartitionKey| {
        if chain.last() != Some(&k) {
            chain.push(k);
        }
    };
    match target {
        TargetKind::Ae => {
            let has_deal = mask.n_deals.then_some(row.n_deals > 0);
            let feedback = mask.treatment.then_some(row.treatment.feedback);
            push(PartitionKey { feedback, has_deal, round });
            push(PartitionKey { feedback: None, has_deal, round });
            push(PartitionKey { feedback: None, has_deal, round: None });
        }
        TargetKind::Cep => push(PartitionKey { feedback: None, has_deal: None, round }),
    }
    push(PartitionKey { feedback: None, has_deal: None, round: None });
    chain
}

fn solve(x: &Design, y: &[f64], target: TargetKind, huber: &HuberConfig) -> Vec<f64> {
    match target {
        TargetKind::Ae => weighted_lstsq(x, y, None).coef,
        TargetKind::Cep => huber_irls(x, y, huber).coef,
    }
}

/// Rows needed before a partition gets its own fit: one more than the
/// number of columns that can be nonzero inside it.
fn min_rows(key: &PartitionKey, target: TargetKind, mask: &FeatureMask) -> usize {
    let mut p = 2 * DECILES;
    if target == TargetKind::Ae {
        p += 1;
        if key.has_deal != Some(false) {
            p += usize::from(mask.deal_price) + usize::from(mask.n_deals);
        }
    }
    p + 1
}

pub fn fit_obrlm(
    train: &[FeatureRow],
    target: TargetKind,
    mask: &FeatureMask,
    huber: &HuberConfig,
) -> Result<ObrlmModel, FitError> {
    let ncols = columns(target, mask).len();
    let mut x_all = Design::with_capacity(ncols, train.len());
    let mut y_all = Vec::with_capacity(train.len());
    let mut chains = Vec::with_capacity(train.len());
    let mut buf = Vec::with_capacity(ncols);
    for r in train {
        let Some(y) = target.of(r).filter(|v| v.is_finite()) else { continue };
        if design_row(r, target, mask, &mut buf).is_none() {
            continue;
        }
        x_all.push_row(&buf);
        y_all.push(y);
        chains.push((r.round, key_chain(r, target, mask)));
    }
    if y_all.is_empty() {
        return Err(FitError::NoUsableRows(ModelKind::Obrlm));
    }

    // pooled keys fit once; keys with a round fit once per distinct training
    // round on all rows up to it
    let mut jobs: Vec<(PartitionKey, Vec<usize>)> = Vec::new();
    let mut plain: BTreeMap<PartitionKey, Vec<usize>> = BTreeMap::new();
    let mut by_round: BTreeMap<PartitionKey, Vec<usize>> = BTreeMap::new();
    for (i, (_, chain)) in chains.iter().enumerate() {
        for k in chain {
            if k.round.is_some() {
                by_round.entry(PartitionKey { round: None, ..*k }).or_default().push(i);
            } else {
                plain.entry(*k).or_default().push(i);
            }
        }
    }
    for (key, idx) in plain {
        jobs.push((key, idx));
    }
    for (base, mut idx) in by_round {
        idx.sort_by_key(|&i| (chains[i].0, i));
        let mut end = 0;
        while end < idx.len() {
            let round = chains[idx[end]].0;
            while end < idx.len() && chains[idx[end]].0 == round {
                end += 1;
            }
            let mut prefix = idx[..end].to_vec();
            prefix.sort_unstable();
            jobs.push((PartitionKey { round: Some(round), ..base }, prefix));
        }
    }

    let pooled = PartitionKey { feedback: None, has_deal: None, round: None };
    let mut partitions: Vec<ObrlmPartition> = jobs
        .into_iter()
        .filter(|(key, idx)| *key == pooled || idx.len() >= min_rows(key, target, mask))
        .map(|(key, idx)| {
            let mut x = Design::with_capacity(ncols, idx.len());
            let mut y = Vec::with_capacity(idx.len());
            for &i in &idx {
                x.push_row(x_all.row(i));
                y.push(y_all[i]);
            }
            ObrlmPartition { key, coef: solve(&x, &y, target, huber), rows: idx.len() }
        })
        .collect();
    partitions.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(ObrlmModel { target, mask: *mask, columns: columns(target, mask), partitions })
}

impl ObrlmModel {
    /// The partition used for `row`: the first key in its fallback chain with
    /// a fit, taking the latest fitted round not after the row's round.
    pub fn partition_for(&self, row: &FeatureRow) -> &ObrlmPartition {
        for key in key_chain(row, self.target, &self.mask) {
            match self.partitions.binary_search_by(|p| p.key.cmp(&key)) {
                Ok(i) => return &self.partitions[i],
                Err(i) if key.round.is_some() && i > 0 => {
                    let prev = &self.partitions[i - 1];
                    if prev.key.feedback == key.feedback
                        && prev.key.has_deal == key.has_deal
                        && prev.key.round.is_some()
                    {
                        return prev;
                    }
                }
                Err(_) => {}
            }
        }
        // the pooled partition sorts first and always exists
        &self.partitions[0]
    }

    pub fn predict(&self, row: &FeatureRow) -> Result<f64, PredictError> {
        require_book(row)?;
        let mut buf = Vec::with_capacity(self.columns.len());
        design_row(row, self.target, &self.mask, &mut buf).ok_or(PredictError::MissingInput("book normalization"))?;
        Ok(dot(&buf, &self.partition_for(row).coef))
    }
}
