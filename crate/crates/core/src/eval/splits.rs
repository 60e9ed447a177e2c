//! Random per-treatment halving of markets into train and test sets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::market::{MarketLog, Treatment};

/// The split reserved for diagnostics.
pub const DIAGNOSTICS_SPLIT: u32 = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub split_id: u32,
    /// Seed handed to anything random inside this split (grid search).
    pub rng_seed: u64,
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitPlan {
    pub fn is_train(&self, market_id: &str) -> bool {
        self.train.contains(market_id)
    }

    pub fn is_test(&self, market_id: &str) -> bool {
        self.test.contains(market_id)
    }
}

pub fn make_splits(markets: &[MarketLog], n_splits: u32, seed: u64) -> Result<Vec<SplitPlan>, EvalError> {
    let ids: Vec<(&str, Treatment)> = markets.iter().map(|m| (m.market_id.as_str(), m.treatment)).collect();
    make_splits_by_id(&ids, n_splits, seed)
}

/// Within each treatment half of the markets go to training. Odd counts
/// alternate between rounding down and up across treatments and splits.
pub fn make_splits_by_id(
    markets: &[(&str, Treatment)],
    n_splits: u32,
    seed: u64,
) -> Result<Vec<SplitPlan>, EvalError> {
    let mut by_treatment: BTreeMap<Treatment, Vec<&str>> = BTreeMap::new();
    for (id, t) in markets {
        by_treatment.entry(*t).or_default().push(id);
    }
    for (t, ids) in &mut by_treatment {
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return Err(EvalError::InsufficientMarkets { treatment: t.label(), found: ids.len() });
        }
    }
    let mut plans = Vec::with_capacity(n_splits as usize);
    for split_id in 0..n_splits {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(split_id));
        let mut train = BTreeSet::new();
        let mut test = BTreeSet::new();
        for (k, ids) in by_treatment.values().enumerate() {
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rng);
            let n_train = ids.len() / 2 + (ids.len() % 2) * ((k + split_id as usize) % 2);
            for (i, id) in shuffled.into_iter().enumerate() {
                if i < n_train { train.insert(String::from(id)) } else { test.insert(String::from(id)) };
            }
        }
        let rng_seed = seed ^ (u64::from(split_id) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        plans.push(SplitPlan { split_id, rng_seed, train, test });
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{FeedbackSetting, MarketSizeClass, PriceRule};

    fn t(f: FeedbackSetting) -> Treatment {
        Treatment { feedback: f, price_rule: PriceRule::First, size: MarketSizeClass::Small }
    }

    #[test]
    fn halves_each_treatment() {
        let names: Vec<String> = (0..9).map(|i| alloc::format!("m{i}")).collect();
        let ids: Vec<(&str, Treatment)> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), if i < 4 { t(FeedbackSetting::Full) } else { t(FeedbackSetting::Same) }))
            .collect();
        let plans = make_splits_by_id(&ids, 6, 3).unwrap();
        for p in &plans {
            let full_train = (0..4).filter(|i| p.is_train(&names[*i])).count();
            assert_eq!(full_train, 2);
            let same_train = (4..9).filter(|i| p.is_train(&names[*i])).count();
            assert!(same_train == 2 || same_train == 3);
            assert_eq!(p.train.len() + p.test.len(), 9);
            assert!(p.train.is_disjoint(&p.test));
        }
        assert_eq!(plans, make_splits_by_id(&ids, 6, 3).unwrap());
    }

    #[test]
    fn single_market_treatment_is_rejected() {
        let err = make_splits_by_id(&[("a", t(FeedbackSetting::Full))], 1, 0).unwrap_err();
        assert!(matches!(err, EvalError::InsufficientMarkets { found: 1, .. }));
    }
}
