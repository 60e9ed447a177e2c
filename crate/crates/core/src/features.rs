//! Orderbook features: decile vectors of the running bid and ask pools,
//! per-row IQR normalization and the snapshot stream.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::market::{MarketLog, Side, Treatment};
use crate::num::{quantile_sorted, sorted_copy};

/// Number of entries in a decile vector (D0..D10).
pub const DECILES: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FeatureError {
    #[error("no orders on this side of the book")]
    EmptySide,
}

/// Quantiles at 0.0, 0.1, ..., 1.0 of a set of order prices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileVector {
    pub values: [f64; DECILES],
    pub count: usize,
}

impl DecileVector {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[DECILES - 1]
    }
}

/// Linear interpolation between the closest order statistics.
pub fn decile_vector(prices: &[f64]) -> Result<DecileVector, FeatureError> {
    if prices.is_empty() {
        return Err(FeatureError::EmptySide);
    }
    let sorted = sorted_copy(prices);
    Ok(deciles_of_sorted(&sorted))
}

fn deciles_of_sorted(sorted: &[f64]) -> DecileVector {
    let mut values = [0.0; DECILES];
    let n = sorted.len();
    for (k, v) in values.iter_mut().enumerate() {
        // exact positions for k/10 without going through 0.1
        let h = (n - 1) as f64 * k as f64 / 10.0;
        *v = quantile_at(sorted, h);
    }
    DecileVector { values, count: n }
}

fn quantile_at(sorted: &[f64], h: f64) -> f64 {
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    let (a, b) = (sorted[lo], sorted[hi]);
    if frac == 0.0 || a == b {
        a
    } else {
        a + frac * (b - a)
    }
}

/// Median and 35-65 inter-quantile range of the concatenated decile vectors.
///
/// When the central band is flat the full range of the 22 entries is used
/// instead, and 1 when every entry is the same.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub center: f64,
    /// Always positive.
    pub scale: f64,
}

impl NormalizationConstants {
    pub fn normalize(&self, value: f64) -> f64 {
        (value - self.center) / self.scale
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        value * self.scale + self.center
    }
}

pub fn make_norm(bids: &DecileVector, asks: &DecileVector) -> NormalizationConstants {
    let mut all = [0.0; 2 * DECILES];
    all[..DECILES].copy_from_slice(&bids.values);
    all[DECILES..].copy_from_slice(&asks.values);
    all.sort_by(f64::total_cmp);
    let center = quantile_sorted(&all, 0.5);
    let iqr = quantile_sorted(&all, 0.65) - quantile_sorted(&all, 0.35);
    let range = all[2 * DECILES - 1] - all[0];
    let scale = if iqr > 0.0 {
        iqr
    } else if range > 0.0 {
        // a lone order on one side can fill the whole central band
        range
    } else {
        1.0
    };
    NormalizationConstants { center, scale }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Cadence {
    /// One row after every order event.
    #[default]
    PerAction,
    /// One row at every deal.
    PerDeal,
}

/// Which quotes enter the decile pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum QuotePool {
    /// Each trader's most recent order in the round, including traders that
    /// have already traded.
    #[default]
    LatestPerTrader,
    /// Every order submitted in the round so far.
    AllSubmissions,
}

/// One prediction-time snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub market_id: String,
    pub treatment: Treatment,
    pub round: u32,
    /// Position of the snapshot within the round (0-based).
    pub seq: u32,
    pub time: f64,
    pub bids: Option<DecileVector>,
    pub asks: Option<DecileVector>,
    pub last_deal_price: Option<f64>,
    pub n_deals: u32,
    /// Present iff both sides are present.
    pub norm: Option<NormalizationConstants>,
    pub ae_round: Option<f64>,
    pub cep_mid: Option<f64>,
}

impl FeatureRow {
    pub fn has_book(&self) -> bool {
        self.bids.is_some() && self.asks.is_some()
    }

    pub fn normalized_bids(&self) -> Option<[f64; DECILES]> {
        let norm = self.norm?;
        Some(self.bids?.values.map(|v| norm.normalize(v)))
    }

    pub fn normalized_asks(&self) -> Option<[f64; DECILES]> {
        let norm = self.norm?;
        Some(self.asks?.values.map(|v| norm.normalize(v)))
    }

    /// Normalized last deal price, zero when nothing traded yet.
    pub fn normalized_last_price(&self) -> Option<f64> {
        let norm = self.norm?;
        Some(self.last_deal_price.map_or(0.0, |p| norm.normalize(p)))
    }

    pub fn scaled(&self, factor: f64) -> FeatureRow {
        let scale_dv = |d: DecileVector| DecileVector { values: d.values.map(|v| v * factor), count: d.count };
        let bids = self.bids.map(scale_dv);
        let asks = self.asks.map(scale_dv);
        FeatureRow {
            bids,
            asks,
            norm: match (bids, asks) {
                (Some(b), Some(a)) => Some(make_norm(&b, &a)),
                _ => None,
            },
            last_deal_price: self.last_deal_price.map(|p| p * factor),
            cep_mid: self.cep_mid.map(|p| p * factor),
            ..self.clone()
        }
    }
}

/// Turn a market log into feature rows, in round and time order.
///
/// Targets are attached only when the market carries valuations; rounds
/// without gains of trade get no AE target.
pub fn snapshot_stream(market: &MarketLog, cadence: Cadence, pool: QuotePool) -> Vec<FeatureRow> {
    let mut rows = Vec::new();
    for round in &market.rounds {
        let (ae_round, cep_mid) = match market.round_targets(round) {
            Some(Ok((ce, eff))) => (eff.ae, ce.p_mid),
            _ => (None, None),
        };

        // (event index inclusive, snapshot time)
        let stops: Vec<(usize, f64)> = match cadence {
            Cadence::PerAction => round.events.iter().enumerate().map(|(i, e)| (i, e.time)).collect(),
            Cadence::PerDeal => round
                .deals
                .iter()
                .filter_map(|d| {
                    let last = round.events.iter().rposition(|e| e.time <= d.time)?;
                    Some((last, d.time))
                })
                .collect(),
        };

        let mut latest: Vec<Option<f64>> = alloc::vec![None; market.traders.len()];
        let mut all_bids = Vec::new();
        let mut all_asks = Vec::new();
        let mut consumed = 0usize;
        for (seq, &(upto, tau)) in stops.iter().enumerate() {
            while consumed <= upto {
                let e = &round.events[consumed];
                if let Some(slot) = latest.get_mut(e.actor.0 as usize) {
                    *slot = Some(e.price);
                }
                match e.side {
                    Side::Bid => all_bids.push(e.price),
                    Side::Ask => all_asks.push(e.price),
                }
                consumed += 1;
            }
            let (bid_pool, ask_pool) = match pool {
                QuotePool::AllSubmissions => (all_bids.clone(), all_asks.clone()),
                QuotePool::LatestPerTrader => {
                    let mut b = Vec::new();
                    let mut a = Vec::new();
                    for (id, price) in latest.iter().enumerate() {
                        if let Some(p) = price {
                            match market.traders[id].side {
                                Side::Bid => b.push(*p),
                                Side::Ask => a.push(*p),
                            }
                        }
                    }
                    (b, a)
                }
            };
            let bids = decile_vector(&bid_pool).ok();
            let asks = decile_vector(&ask_pool).ok();
            let norm = match (&bids, &asks) {
                (Some(b), Some(a)) => Some(make_norm(b, a)),
                _ => None,
            };
            let done: Vec<_> = round.deals.iter().take_while(|d| d.time <= tau).collect();
            rows.push(FeatureRow {
                market_id: market.market_id.clone(),
                treatment: market.treatment,
                round: round.round,
                seq: seq as u32,
                time: tau,
                bids,
                asks,
                last_deal_price: done.last().map(|d| d.price),
                n_deals: done.len() as u32,
                norm,
                ae_round,
                cep_mid,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{
        Deal, FeedbackSetting, MarketSizeClass, OrderEvent, PriceRule, ReservationProfile, RoundLog,
        Trader, TraderId,
    };

    #[test]
    fn singleton_and_sequence() {
        assert_eq!(decile_vector(&[7.0]).unwrap().values, [7.0; 11]);
        let seq: Vec<f64> = (1..=11).map(f64::from).collect();
        let d = decile_vector(&seq).unwrap();
        assert_eq!(d.values.to_vec(), seq);
        let d = decile_vector(&[9.0, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!((d.min(), d.max()), (5.0, 9.0));
        assert!(d.values.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(decile_vector(&[]), Err(FeatureError::EmptySide));
    }

    #[test]
    fn norm_examples() {
        let c = decile_vector(&[3.0]).unwrap();
        assert_eq!(make_norm(&c, &c), NormalizationConstants { center: 3.0, scale: 1.0 });

        let b = decile_vector(&[4.0]).unwrap();
        let a = decile_vector(&[8.0]).unwrap();
        // oracle: sort the 22 entries and read positions 21*p
        let mut all: Vec<f64> = b.values.iter().chain(a.values.iter()).copied().collect();
        all.sort_by(f64::total_cmp);
        let q = |p: f64| quantile_sorted(&all, p);
        assert_eq!(q(0.65) - q(0.35), 4.0);
        assert_eq!(make_norm(&b, &a), NormalizationConstants { center: 6.0, scale: 4.0 });

        let shift = |d: &DecileVector| DecileVector { values: d.values.map(|v| v + 2.5), ..*d };
        let n = make_norm(&shift(&b), &shift(&a));
        assert_eq!((n.center, n.scale), (8.5, 4.0));
    }

    #[test]
    fn flat_central_band_uses_range() {
        let b = decile_vector(&[10.0, 130.0]).unwrap();
        let a = decile_vector(&[80.0]).unwrap();
        let n = make_norm(&b, &a);
        assert_eq!(n.center, 80.0);
        assert_eq!(n.scale, 120.0);
    }

    #[test]
    fn normalize_round_trip() {
        let n = NormalizationConstants { center: 12.0, scale: 3.0 };
        assert_eq!(n.normalize(12.0), 0.0);
        assert_eq!(n.normalize(15.0), 1.0);
        assert_eq!(n.denormalize(n.normalize(17.25)), 17.25);
    }

    fn toy_market() -> MarketLog {
        let ev = |time: f64, actor: u32, side: Side, price: f64| OrderEvent {
            time,
            round: 1,
            actor: TraderId(actor),
            side,
            price,
        };
        MarketLog {
            market_id: "m".into(),
            treatment: Treatment {
                feedback: FeedbackSetting::Full,
                price_rule: PriceRule::First,
                size: MarketSizeClass::Small,
            },
            traders: vec![
                Trader { name: "b1".into(), side: Side::Bid },
                Trader { name: "b2".into(), side: Side::Bid },
                Trader { name: "b3".into(), side: Side::Bid },
                Trader { name: "s1".into(), side: Side::Ask },
            ],
            rounds: vec![RoundLog {
                round: 1,
                events: vec![
                    ev(1.0, 0, Side::Bid, 5.0),
                    ev(2.0, 1, Side::Bid, 6.0),
                    ev(3.0, 2, Side::Bid, 7.0),
                    ev(4.0, 3, Side::Ask, 6.5),
                ],
                deals: vec![Deal {
                    time: 4.0,
                    round: 1,
                    buyer: TraderId(2),
                    seller: TraderId(3),
                    price: 7.0,
                    buyer_price: 7.0,
                    seller_price: 7.0,
                }],
                active_traders: vec![TraderId(0), TraderId(1), TraderId(2), TraderId(3)],
            }],
            profile: Some(ReservationProfile {
                buyers: vec![
                    crate::market::Valuation { trader: TraderId(0), value: 8.0 },
                    crate::market::Valuation { trader: TraderId(1), value: 9.0 },
                    crate::market::Valuation { trader: TraderId(2), value: 10.0 },
                ],
                sellers: vec![crate::market::Valuation { trader: TraderId(3), value: 4.0 }],
            }),
        }
    }

    #[test]
    fn snapshot_counts_deals() {
        let rows = snapshot_stream(&toy_market(), Cadence::PerAction, QuotePool::LatestPerTrader);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows.iter().map(|r| r.n_deals).collect::<Vec<_>>(), vec![0, 0, 0, 1]);
        assert!(rows[..3].iter().all(|r| r.asks.is_none() && r.norm.is_none() && r.last_deal_price.is_none()));
        assert_eq!(rows[3].last_deal_price, Some(7.0));
        assert_eq!(rows[3].bids.unwrap().count, 3);
        // single pair 10/4 trades, g* = 6 with one seller
        assert_eq!(rows[3].ae_round, Some(1.0));
        assert_eq!(rows[3].cep_mid, Some(0.5 * (9.0 + 10.0)));

        let per_deal = snapshot_stream(&toy_market(), Cadence::PerDeal, QuotePool::LatestPerTrader);
        assert_eq!(per_deal.len(), 1);
        assert_eq!(per_deal[0].bids, rows[3].bids);
    }

    #[test]
    fn pools_differ_on_overwrites() {
        let mut m = toy_market();
        m.rounds[0].events[1].actor = TraderId(0); // b1 overwrites 5 with 6
        let latest = snapshot_stream(&m, Cadence::PerAction, QuotePool::LatestPerTrader);
        let all = snapshot_stream(&m, Cadence::PerAction, QuotePool::AllSubmissions);
        assert_eq!(latest[1].bids.unwrap().count, 1);
        assert_eq!(all[1].bids.unwrap().count, 2);
    }
}
