//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use cdainv_core::features::{make_norm, DecileVector, FeatureRow, DECILES};
use cdainv_core::{
    simulate_corpus, snapshot_stream, Cadence, CorpusConfig, FeedbackSetting, MarketLog, MarketSizeClass,
    PriceRule, QuotePool, Treatment,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximum total surplus over all one-to-one buyer/seller matchings, by
/// dynamic programming over the set of used sellers.
pub fn brute_force_got_max(buyers: &[f64], sellers: &[f64]) -> f64 {
    let m = sellers.len();
    let mut best = vec![f64::NEG_INFINITY; 1 << m];
    best[0] = 0.0;
    for &b in buyers {
        let prev = best.clone();
        for mask in 0..(1usize << m) {
            if prev[mask] == f64::NEG_INFINITY {
                continue;
            }
            for (j, &s) in sellers.iter().enumerate() {
                if mask & (1 << j) == 0 && b >= s {
                    let next = mask | (1 << j);
                    let v = prev[mask] + (b - s);
                    if v > best[next] {
                        best[next] = v;
                    }
                }
            }
        }
    }
    best.into_iter().fold(0.0, f64::max)
}

/// Whether `p` clears the market: some quantity lies in both the demand
/// range `[#{b > p}, #{b >= p}]` and the supply range `[#{s < p}, #{s <= p}]`.
pub fn clears(buyers: &[f64], sellers: &[f64], p: f64) -> bool {
    let d_lo = buyers.iter().filter(|&&b| b > p).count();
    let d_hi = buyers.iter().filter(|&&b| b >= p).count();
    let s_lo = sellers.iter().filter(|&&s| s < p).count();
    let s_hi = sellers.iter().filter(|&&s| s <= p).count();
    d_lo <= s_hi && s_lo <= d_hi
}

/// The clearing-price interval, scanning every valuation and every midpoint
/// between neighbouring valuations.
pub fn clearing_interval(buyers: &[f64], sellers: &[f64]) -> Option<(f64, f64)> {
    let mut pts: Vec<f64> = buyers.iter().chain(sellers).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut cands = pts.clone();
    for w in pts.windows(2) {
        cands.push(0.5 * (w[0] + w[1]));
    }
    let feasible: Vec<f64> = cands.into_iter().filter(|&p| clears(buyers, sellers, p)).collect();
    let lo = feasible.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = feasible.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo <= hi).then_some((lo, hi))
}

pub fn sort_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn sort_lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[(v.len() - 1) / 2]
}

/// Average ranks of absolute values, computed by counting.
fn count_ranks(abs: &[f64]) -> Vec<f64> {
    abs.iter()
        .map(|&a| {
            let below = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided signed-rank p-value by enumerating all sign assignments.
pub fn enumerate_wilcoxon_two_sided(diffs: &[f64]) -> f64 {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return 1.0;
    }
    let ranks = count_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let observed: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let n = nz.len();
    let (mut ge, mut le) = (0u64, 0u64);
    for signs in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| signs & (1 << i) != 0).map(|i| ranks[i]).sum();
        if w >= observed - 1e-9 {
            ge += 1;
        }
        if w <= observed + 1e-9 {
            le += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * (ge.min(le) as f64) / total).min(1.0)
}

pub fn treatment(feedback: FeedbackSetting, price_rule: PriceRule) -> Treatment {
    Treatment { feedback, price_rule, size: MarketSizeClass::Small }
}

/// Sorted random decile vector within `[lo, hi)`.
pub fn random_deciles(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> DecileVector {
    let mut v: [f64; DECILES] = std::array::from_fn(|_| rng.gen_range(lo..hi));
    v.sort_by(f64::total_cmp);
    DecileVector { values: v, count: DECILES }
}

/// Feature row with random book sides and no targets.
pub fn random_row(rng: &mut ChaCha8Rng, market: &str, round: u32, seq: u32) -> FeatureRow {
    let bids = random_deciles(rng, 40.0, 110.0);
    let asks = random_deciles(rng, 60.0, 140.0);
    FeatureRow {
        market_id: market.into(),
        treatment: treatment(FeedbackSetting::Full, PriceRule::First),
        round,
        seq,
        time: seq as f64,
        bids: Some(bids),
        asks: Some(asks),
        last_deal_price: None,
        n_deals: 0,
        norm: Some(make_norm(&bids, &asks)),
        ae_round: None,
        cep_mid: None,
    }
}

pub fn corpus(markets: usize, seed: u64, actions: usize) -> Vec<MarketLog> {
    simulate_corpus(&CorpusConfig { markets, seed, actions_per_round: actions, rounds: 4, ..Default::default() })
        .expect("simulate")
}

pub fn features(markets: &[MarketLog]) -> Vec<FeatureRow> {
    markets
        .iter()
        .flat_map(|m| snapshot_stream(m, Cadence::PerAction, QuotePool::LatestPerTrader))
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
