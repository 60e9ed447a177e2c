//! Market domain types and the competitive-equilibrium solver.
//!
//! Money values are plain `f64`. All reservation values and prices must be
//! finite and strictly positive.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarketError {
    #[error("reservation value {value} of trader {trader} is not finite and positive")]
    InvalidValuation { trader: u32, value: f64 },
    #[error("deal in round {round} references trader {trader} absent from the reservation profile")]
    UnknownTrader { round: u32, trader: u32 },
    #[error("round numbering broken: expected round {expected}, found {found}")]
    RoundNumbering { expected: u32, found: u32 },
    #[error("round {round}: time {time} goes backwards")]
    NonMonotoneTime { round: u32, time: f64 },
    #[error("round {round}: invalid price {price}")]
    InvalidPrice { round: u32, price: f64 },
    #[error("round {round}: trader {trader} trades more than once")]
    DoubleTrade { round: u32, trader: u32 },
    #[error("round {round}: deal legs out of order (seller {seller_price} > price {price} or price > buyer {buyer_price})")]
    DealLegs { round: u32, price: f64, buyer_price: f64, seller_price: f64 },
    #[error("trader {trader} acts on the wrong side")]
    WrongSide { trader: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraderId(pub u32);

impl fmt::Display for TraderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Buyers post bids, sellers post asks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn code(self) -> &'static str {
        match self {
            Side::Bid => "B",
            Side::Ask => "S",
        }
    }
}

impl FromStr for Side {
    type Err = ParseEnumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "B" => Ok(Side::Bid),
            "S" => Ok(Side::Ask),
            _ => Err(ParseEnumError { what: "side", value: s.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {what} '{value}'")]
pub struct ParseEnumError {
    pub what: &'static str,
    pub value: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeedbackSetting {
    BlackBox,
    Full,
    Same,
    Other,
}

impl FeedbackSetting {
    pub const ALL: [FeedbackSetting; 4] = [
        FeedbackSetting::BlackBox,
        FeedbackSetting::Full,
        FeedbackSetting::Same,
        FeedbackSetting::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackSetting::BlackBox => "BlackBox",
            FeedbackSetting::Full => "Full",
            FeedbackSetting::Same => "Same",
            FeedbackSetting::Other => "Other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for FeedbackSetting {
    type Err = ParseEnumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeedbackSetting::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ParseEnumError { what: "feedback setting", value: s.into() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PriceRule {
    /// Trade at the price of the chronologically earlier order.
    First,
    /// Trade at a uniform draw between ask and bid.
    Random,
    /// Matchmaker keeps: the buyer pays the bid, the seller receives the ask.
    Mmk,
}

impl PriceRule {
    pub const ALL: [PriceRule; 3] = [PriceRule::First, PriceRule::Random, PriceRule::Mmk];

    pub fn as_str(self) -> &'static str {
        match self {
            PriceRule::First => "First",
            PriceRule::Random => "Random",
            PriceRule::Mmk => "MMK",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for PriceRule {
    type Err = ParseEnumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PriceRule::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| ParseEnumError { what: "price rule", value: s.into() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MarketSizeClass {
    Small,
    Large,
}

impl MarketSizeClass {
    /// Large iff at least 15 traders are present in the first round.
    pub fn from_trader_count(n: usize) -> Self {
        if n >= 15 {
            MarketSizeClass::Large
        } else {
            MarketSizeClass::Small
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MarketSizeClass::Small => "Small",
            MarketSizeClass::Large => "Large",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Treatment {
    pub feedback: FeedbackSetting,
    pub price_rule: PriceRule,
    pub size: MarketSizeClass,
}

impl Treatment {
    pub fn label(&self) -> String {
        let mut s = String::new();
        s.push_str(self.feedback.as_str());
        s.push('/');
        s.push_str(self.price_rule.as_str());
        s.push('/');
        s.push_str(self.size.as_str());
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Valuation {
    pub trader: TraderId,
    pub value: f64,
}

/// Induced buyer budgets and seller costs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReservationProfile {
    pub buyers: Vec<Valuation>,
    pub sellers: Vec<Valuation>,
}

impl ReservationProfile {
    /// Buyers get ids `0..buyers.len()`, sellers the ids that follow.
    pub fn from_values(buyers: &[f64], sellers: &[f64]) -> Self {
        let nb = buyers.len() as u32;
        ReservationProfile {
            buyers: buyers
                .iter()
                .enumerate()
                .map(|(i, &value)| Valuation { trader: TraderId(i as u32), value })
                .collect(),
            sellers: sellers
                .iter()
                .enumerate()
                .map(|(j, &value)| Valuation { trader: TraderId(nb + j as u32), value })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        for v in self.buyers.iter().chain(&self.sellers) {
            if !(v.value.is_finite() && v.value > 0.0) {
                return Err(MarketError::InvalidValuation { trader: v.trader.0, value: v.value });
            }
        }
        Ok(())
    }

    pub fn buyer_values(&self) -> Vec<f64> {
        self.buyers.iter().map(|v| v.value).collect()
    }

    pub fn seller_values(&self) -> Vec<f64> {
        self.sellers.iter().map(|v| v.value).collect()
    }

    pub fn value_of(&self, trader: TraderId) -> Option<(Side, f64)> {
        if let Some(v) = self.buyers.iter().find(|v| v.trader == trader) {
            return Some((Side::Bid, v.value));
        }
        self.sellers
            .iter()
            .find(|v| v.trader == trader)
            .map(|v| (Side::Ask, v.value))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &Valuation| Valuation { trader: v.trader, value: v.value * factor };
        ReservationProfile {
            buyers: self.buyers.iter().map(scale).collect(),
            sellers: self.sellers.iter().map(scale).collect(),
        }
    }

    /// Keep only traders in `active` (an ascending id list).
    pub fn restricted_to(&self, active: &[TraderId]) -> Self {
        let keep = |v: &&Valuation| active.binary_search(&v.trader).is_ok();
        ReservationProfile {
            buyers: self.buyers.iter().filter(keep).copied().collect(),
            sellers: self.sellers.iter().filter(keep).copied().collect(),
        }
    }
}

/// Buyer values in descending and seller values in ascending order, with the
/// position each entry had in the profile.
#[derive(Clone, Debug, PartialEq)]
pub struct SortedValuations {
    pub buyers: Vec<f64>,
    pub sellers: Vec<f64>,
    pub buyer_index: Vec<usize>,
    pub seller_index: Vec<usize>,
}

pub fn sort_valuations(profile: &ReservationProfile) -> SortedValuations {
    let mut buyer_index: Vec<usize> = (0..profile.buyers.len()).collect();
    buyer_index.sort_by(|&a, &b| profile.buyers[b].value.total_cmp(&profile.buyers[a].value));
    let mut seller_index: Vec<usize> = (0..profile.sellers.len()).collect();
    seller_index.sort_by(|&a, &b| profile.sellers[a].value.total_cmp(&profile.sellers[b].value));
    SortedValuations {
        buyers: buyer_index.iter().map(|&i| profile.buyers[i].value).collect(),
        sellers: seller_index.iter().map(|&j| profile.sellers[j].value).collect(),
        buyer_index,
        seller_index,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeSolution {
    /// 1-based marginal index: the number of intramarginal pairs.
    pub k_star: Option<usize>,
    pub p_lower: Option<f64>,
    pub p_upper: Option<f64>,
    pub p_mid: Option<f64>,
    pub got_max: f64,
}

impl CeSolution {
    fn no_trade() -> Self {
        CeSolution { k_star: None, p_lower: None, p_upper: None, p_mid: None, got_max: 0.0 }
    }
}

/// Competitive-equilibrium price interval and maximal gains of trade.
///
/// With buyers sorted descending and sellers ascending the gap
/// `buyer[k] - seller[k]` is nonincreasing in `k`, so the nonnegative gaps form
/// a prefix. The marginal pair is the last index of that prefix (smallest
/// nonnegative gap; ties go to the deepest index). The upper bound uses
/// `min(buyer[k*], seller[k*+1])`: the printed `max` admits prices at which
/// supply exceeds demand.
pub fn compute_ce(profile: &ReservationProfile) -> CeSolution {
    let sorted = sort_valuations(profile);
    let (b, s) = (&sorted.buyers, &sorted.sellers);
    let k = b.iter().zip(s).take_while(|(bv, sv)| *bv >= *sv).count();
    if k == 0 {
        return CeSolution::no_trade();
    }
    let got_max = b[..k].iter().zip(&s[..k]).map(|(bv, sv)| bv - sv).sum();
    let p_lower = if b.len() == k { s[k - 1] } else { s[k - 1].max(b[k]) };
    let p_upper = if s.len() == k { b[k - 1] } else { b[k - 1].min(s[k]) };
    CeSolution {
        k_star: Some(k),
        p_lower: Some(p_lower),
        p_upper: Some(p_upper),
        p_mid: Some(0.5 * (p_lower + p_upper)),
        got_max,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub got_realized: f64,
    /// `None` when the round has no gains of trade to realize.
    pub ae: Option<f64>,
}

/// Realized gains of trade of one round and the resulting efficiency.
///
/// Extramarginal trades (buyer value below seller cost) keep their negative
/// contribution.
pub fn compute_realized_got(
    profile: &ReservationProfile,
    round: &RoundLog,
) -> Result<EfficiencyReport, MarketError> {
    let mut got = 0.0;
    for deal in &round.deals {
        let buyer = profile
            .buyers
            .iter()
            .find(|v| v.trader == deal.buyer)
            .ok_or(MarketError::UnknownTrader { round: round.round, trader: deal.buyer.0 })?;
        let seller = profile
            .sellers
            .iter()
            .find(|v| v.trader == deal.seller)
            .ok_or(MarketError::UnknownTrader { round: round.round, trader: deal.seller.0 })?;
        got += buyer.value - seller.value;
    }
    let ce = compute_ce(profile);
    let ae = (ce.got_max > 0.0).then(|| got / ce.got_max);
    Ok(EfficiencyReport { got_realized: got, ae })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderEvent {
    pub time: f64,
    pub round: u32,
    pub actor: TraderId,
    pub side: Side,
    pub price: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deal {
    pub time: f64,
    pub round: u32,
    pub buyer: TraderId,
    pub seller: TraderId,
    /// The single recorded price; the midpoint of the two legs under MMK.
    pub price: f64,
    pub buyer_price: f64,
    pub seller_price: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u32,
    pub events: Vec<OrderEvent>,
    pub deals: Vec<Deal>,
    /// Ascending ids of the traders present at round start.
    pub active_traders: Vec<TraderId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trader {
    pub name: String,
    pub side: Side,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketLog {
    pub market_id: String,
    pub treatment: Treatment,
    /// Indexed by `TraderId`.
    pub traders: Vec<Trader>,
    pub rounds: Vec<RoundLog>,
    pub profile: Option<ReservationProfile>,
}

impl MarketLog {
    pub fn trader(&self, id: TraderId) -> Option<&Trader> {
        self.traders.get(id.0 as usize)
    }

    /// Reservation profile of the traders active in `round`.
    pub fn round_profile(&self, round: &RoundLog) -> Option<ReservationProfile> {
        let profile = self.profile.as_ref()?;
        if round.active_traders.is_empty() {
            Some(profile.clone())
        } else {
            Some(profile.restricted_to(&round.active_traders))
        }
    }

    /// CE solution and realized efficiency of a round, when valuations are known.
    pub fn round_targets(
        &self,
        round: &RoundLog,
    ) -> Option<Result<(CeSolution, EfficiencyReport), MarketError>> {
        let profile = self.round_profile(round)?;
        Some(compute_realized_got(&profile, round).map(|eff| (compute_ce(&profile), eff)))
    }

    /// Same market with every price and reservation value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> MarketLog {
        let mut out = self.clone();
        for r in &mut out.rounds {
            for e in &mut r.events {
                e.price *= factor;
            }
            for d in &mut r.deals {
                d.price *= factor;
                d.buyer_price *= factor;
                d.seller_price *= factor;
            }
        }
        out.profile = self.profile.as_ref().map(|p| p.scaled(factor));
        out
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if let Some(p) = &self.profile {
            p.validate()?;
        }
        let side_of = |id: TraderId| self.trader(id).map(|t| t.side);
        for (i, r) in self.rounds.iter().enumerate() {
            let expected = i as u32 + 1;
            if r.round != expected {
                return Err(MarketError::RoundNumbering { expected, found: r.round });
            }
            let mut last = f64::NEG_INFINITY;
            for e in &r.events {
                if !(e.time >= last) {
                    return Err(MarketError::NonMonotoneTime { round: r.round, time: e.time });
                }
                last = e.time;
                if !(e.price.is_finite() && e.price > 0.0) {
                    return Err(MarketError::InvalidPrice { round: r.round, price: e.price });
                }
                if side_of(e.actor) != Some(e.side) {
                    return Err(MarketError::WrongSide { trader: e.actor.0 });
                }
            }
            let mut traded: Vec<TraderId> = Vec::new();
            let mut last = f64::NEG_INFINITY;
            for d in &r.deals {
                if !(d.time >= last) {
                    return Err(MarketError::NonMonotoneTime { round: r.round, time: d.time });
                }
                last = d.time;
                if !(d.price.is_finite() && d.price > 0.0) {
                    return Err(MarketError::InvalidPrice { round: r.round, price: d.price });
                }
                if !(d.seller_price <= d.price && d.price <= d.buyer_price) {
                    return Err(MarketError::DealLegs {
                        round: r.round,
                        price: d.price,
                        buyer_price: d.buyer_price,
                        seller_price: d.seller_price,
                    });
                }
                if side_of(d.buyer) != Some(Side::Bid) {
                    return Err(MarketError::WrongSide { trader: d.buyer.0 });
                }
                if side_of(d.seller) != Some(Side::Ask) {
                    return Err(MarketError::WrongSide { trader: d.seller.0 });
                }
                for t in [d.buyer, d.seller] {
                    if traded.contains(&t) {
                        return Err(MarketError::DoubleTrade { round: r.round, trader: t.0 });
                    }
                    traded.push(t);
                }
            }
        }
        Ok(())
    }
}
