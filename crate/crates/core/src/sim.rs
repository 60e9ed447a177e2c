//! Continuous double auction with single-unit traders and zero-intelligence
//! quoting.
//!
//! Every trader holds at most one live order; a new order overwrites the
//! previous one. An incoming order that crosses the best opposite order trades
//! immediately and both parties leave the market until the next round.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::market::{
    Deal, FeedbackSetting, MarketLog, MarketSizeClass, OrderEvent, PriceRule, ReservationProfile,
    RoundLog, Side, Trader, TraderId, Treatment,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("trader {0} already traded this round")]
    TraderRetired(TraderId),
    #[error("bid {bid} does not cross ask {ask}")]
    NonCrossing { bid: f64, ask: f64 },
    #[error("reservation value {value} outside the allowed quote range [{min}, {max}]")]
    InfeasibleRange { value: f64, min: f64, max: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Order {
    pub trader: TraderId,
    pub price: f64,
    pub time: f64,
    seq: u64,
}

/// Live orders of one round plus the traders that already traded.
#[derive(Clone, Debug, Default)]
pub struct BookState {
    bids: Vec<Order>,
    asks: Vec<Order>,
    traded: Vec<TraderId>,
    seq: u64,
}

impl BookState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bids(&self) -> &[Order] {
        &self.bids
    }

    pub fn asks(&self) -> &[Order] {
        &self.asks
    }

    pub fn traded(&self) -> &[TraderId] {
        &self.traded
    }

    pub fn is_retired(&self, trader: TraderId) -> bool {
        self.traded.contains(&trader)
    }

    /// Highest bid, earliest submission first among equals.
    pub fn best_bid(&self) -> Option<&Order> {
        best(&self.bids, |a, b| a.price > b.price)
    }

    /// Lowest ask, earliest submission first among equals.
    pub fn best_ask(&self) -> Option<&Order> {
        best(&self.asks, |a, b| a.price < b.price)
    }
}

fn best(orders: &[Order], better: impl Fn(&Order, &Order) -> bool) -> Option<&Order> {
    let mut it = orders.iter();
    let mut top = it.next()?;
    for o in it {
        if better(o, top) || (o.price == top.price && o.seq < top.seq) {
            top = o;
        }
    }
    Some(top)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Settlement {
    pub price: f64,
    pub buyer_price: f64,
    pub seller_price: f64,
}

/// Trade price of a crossing pair. Under `First` the earlier order sets the
/// price; equal times count the bid as earlier.
pub fn settle_price<R: Rng + ?Sized>(
    bid: f64,
    ask: f64,
    bid_time: f64,
    ask_time: f64,
    rule: PriceRule,
    rng: &mut R,
) -> Result<Settlement, SimError> {
    let earlier = if bid_time <= ask_time { Side::Bid } else { Side::Ask };
    settle(bid, ask, earlier, rule, rng)
}

fn settle<R: Rng + ?Sized>(
    bid: f64,
    ask: f64,
    earlier: Side,
    rule: PriceRule,
    rng: &mut R,
) -> Result<Settlement, SimError> {
    if bid < ask {
        return Err(SimError::NonCrossing { bid, ask });
    }
    let s = match rule {
        PriceRule::First => {
            let p = match earlier {
                Side::Bid => bid,
                Side::Ask => ask,
            };
            Settlement { price: p, buyer_price: p, seller_price: p }
        }
        PriceRule::Random => {
            let p = if bid == ask { bid } else { rng.gen_range(ask..=bid) };
            Settlement { price: p, buyer_price: p, seller_price: p }
        }
        PriceRule::Mmk => Settlement {
            price: 0.5 * (bid + ask),
            buyer_price: bid,
            seller_price: ask,
        },
    };
    Ok(s)
}

/// Record an order and execute it against the best opposite order if they cross.
pub fn submit_order<R: Rng + ?Sized>(
    book: &mut BookState,
    event: &OrderEvent,
    rule: PriceRule,
    rng: &mut R,
) -> Result<Option<Deal>, SimError> {
    if book.is_retired(event.actor) {
        return Err(SimError::TraderRetired(event.actor));
    }
    book.bids.retain(|o| o.trader != event.actor);
    book.asks.retain(|o| o.trader != event.actor);
    book.seq += 1;
    let order = Order { trader: event.actor, price: event.price, time: event.time, seq: book.seq };

    let counterpart = match event.side {
        Side::Bid => book.best_ask().filter(|a| event.price >= a.price).copied(),
        Side::Ask => book.best_bid().filter(|b| b.price >= event.price).copied(),
    };
    let Some(resting) = counterpart else {
        match event.side {
            Side::Bid => book.bids.push(order),
            Side::Ask => book.asks.push(order),
        }
        return Ok(None);
    };

    let (buyer, seller, bid, ask, earlier) = match event.side {
        Side::Bid => (order.trader, resting.trader, order.price, resting.price, Side::Ask),
        Side::Ask => (resting.trader, order.trader, resting.price, order.price, Side::Bid),
    };
    let s = settle(bid, ask, earlier, rule, rng)?;
    book.bids.retain(|o| o.trader != resting.trader);
    book.asks.retain(|o| o.trader != resting.trader);
    book.traded.push(buyer);
    book.traded.push(seller);
    Ok(Some(Deal {
        time: event.time,
        round: event.round,
        buyer,
        seller,
        price: s.price,
        buyer_price: s.buyer_price,
        seller_price: s.seller_price,
    }))
}

/// Zero-intelligence quote: uniform over the prices the trader can accept.
pub fn zi_quote<R: Rng + ?Sized>(
    side: Side,
    reservation: f64,
    range: (f64, f64),
    rng: &mut R,
) -> Result<f64, SimError> {
    let (min, max) = range;
    if !(min <= reservation && reservation <= max) {
        return Err(SimError::InfeasibleRange { value: reservation, min, max });
    }
    let (lo, hi) = match side {
        Side::Bid => (min, reservation),
        Side::Ask => (reservation, max),
    };
    Ok(if lo == hi { lo } else { rng.gen_range(lo..=hi) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ValuationSampler {
    /// Independent integer draws, inclusive on both ends.
    UniformInt { lo: i64, hi: i64 },
    UniformReal { lo: f64, hi: f64 },
    Fixed { buyers: Vec<f64>, sellers: Vec<f64> },
}

impl Default for ValuationSampler {
    fn default() -> Self {
        ValuationSampler::UniformInt { lo: 1, hi: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub market_id: String,
    pub n_buyers: usize,
    pub n_sellers: usize,
    pub valuations: ValuationSampler,
    pub feedback: FeedbackSetting,
    pub price_rule: PriceRule,
    pub rounds: u32,
    /// Number of quotes per round.
    pub actions_per_round: usize,
    pub price_range: (f64, f64),
    pub rng_seed: u64,
    /// Independent ChaCha stream; lets many markets share one seed.
    pub rng_stream: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            market_id: "M1".into(),
            n_buyers: 10,
            n_sellers: 10,
            valuations: ValuationSampler::default(),
            feedback: FeedbackSetting::Full,
            price_rule: PriceRule::First,
            rounds: 10,
            actions_per_round: 200,
            price_range: (1.0, 200.0),
            rng_seed: 0,
            rng_stream: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.n_buyers + self.n_sellers;
        if self.n_buyers == 0 || self.n_sellers == 0 || n < 2 {
            return Err(SimError::InvalidConfig("need at least one buyer and one seller"));
        }
        if self.actions_per_round < n {
            return Err(SimError::InvalidConfig("actions_per_round below the number of traders"));
        }
        if self.rounds == 0 {
            return Err(SimError::InvalidConfig("rounds must be positive"));
        }
        let (lo, hi) = self.price_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SimError::InvalidConfig("price range must be positive and nonempty"));
        }
        if let ValuationSampler::Fixed { buyers, sellers } = &self.valuations {
            if buyers.len() != self.n_buyers || sellers.len() != self.n_sellers {
                return Err(SimError::InvalidConfig("fixed valuations do not match trader counts"));
            }
        }
        Ok(())
    }
}

fn draw_valuations(config: &SimConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| match config.valuations {
                ValuationSampler::UniformInt { lo, hi } => rng.gen_range(lo..=hi) as f64,
                ValuationSampler::UniformReal { lo, hi } => rng.gen_range(lo..=hi),
                ValuationSampler::Fixed { .. } => unreachable!(),
            })
            .collect()
    };
    match &config.valuations {
        ValuationSampler::Fixed { buyers, sellers } => (buyers.clone(), sellers.clone()),
        _ => {
            let b = draw(config.n_buyers);
            let s = draw(config.n_sellers);
            (b, s)
        }
    }
}

/// Simulate a whole market. Deterministic in `(rng_seed, rng_stream)`.
///
/// Valuations are drawn once and kept for all rounds. Each action picks a
/// uniformly random trader that has not traded yet; inter-arrival times are
/// unit-rate exponential.
pub fn run_market(config: &SimConfig) -> Result<MarketLog, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(config.rng_stream);

    let (buyer_values, seller_values) = draw_valuations(config, &mut rng);
    let profile = ReservationProfile::from_values(&buyer_values, &seller_values);
    for v in profile.buyers.iter().chain(&profile.sellers) {
        let (min, max) = config.price_range;
        if !(min <= v.value && v.value <= max) {
            return Err(SimError::InfeasibleRange { value: v.value, min, max });
        }
    }

    let mut traders = Vec::with_capacity(config.n_buyers + config.n_sellers);
    for i in 0..config.n_buyers {
        traders.push(Trader { name: format!("B{}", i + 1), side: Side::Bid });
    }
    for j in 0..config.n_sellers {
        traders.push(Trader { name: format!("S{}", j + 1), side: Side::Ask });
    }
    let reservation: Vec<f64> = buyer_values.iter().chain(&seller_values).copied().collect();
    let all: Vec<TraderId> = (0..traders.len() as u32).map(TraderId).collect();

    let mut rounds = Vec::with_capacity(config.rounds as usize);
    for r in 1..=config.rounds {
        let mut book = BookState::new();
        let mut events = Vec::with_capacity(config.actions_per_round);
        let mut deals = Vec::new();
        let mut time = 0.0;
        let mut waiting: Vec<TraderId> = all.clone();
        for _ in 0..config.actions_per_round {
            if waiting.is_empty() {
                break;
            }
            let actor = waiting[rng.gen_range(0..waiting.len())];
            let side = traders[actor.0 as usize].side;
            let price = zi_quote(side, reservation[actor.0 as usize], config.price_range, &mut rng)?;
            let u: f64 = rng.gen();
            time += -libm::log(1.0 - u);
            let event = OrderEvent { time, round: r, actor, side, price };
            events.push(event);
            if let Some(deal) = submit_order(&mut book, &event, config.price_rule, &mut rng)? {
                waiting.retain(|t| *t != deal.buyer && *t != deal.seller);
                deals.push(deal);
            }
        }
        rounds.push(RoundLog { round: r, events, deals, active_traders: all.clone() });
    }

    Ok(MarketLog {
        market_id: config.market_id.clone(),
        treatment: Treatment {
            feedback: config.feedback,
            price_rule: config.price_rule,
            size: MarketSizeClass::from_trader_count(traders.len()),
        },
        traders,
        rounds,
        profile: Some(profile),
    })
}

/// Treatment of the `index`-th combination in a fixed cycle over all 24
/// (feedback, price rule, size) combinations. The first twelve cover every
/// feedback and price-rule pair with small markets.
pub fn treatment_cycle(index: usize) -> Treatment {
    let c = index % 24;
    Treatment {
        feedback: FeedbackSetting::ALL[c % 4],
        price_rule: PriceRule::ALL[c % 3],
        size: if c < 12 { MarketSizeClass::Small } else { MarketSizeClass::Large },
    }
}

/// Settings for a synthetic corpus of ZI markets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub markets: usize,
    pub seed: u64,
    pub rounds: u32,
    pub actions_per_round: usize,
    pub valuations: ValuationSampler,
    pub price_range: (f64, f64),
    /// Traders per side in small and large markets.
    pub small_side: usize,
    pub large_side: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            markets: 20,
            seed: 0,
            rounds: 10,
            actions_per_round: 200,
            valuations: ValuationSampler::default(),
            price_range: (1.0, 200.0),
            small_side: 5,
            large_side: 10,
        }
    }
}

impl CorpusConfig {
    /// Markets cycle through `min(24, markets / 2)` treatments so every
    /// treatment gets at least two markets.
    pub fn market_config(&self, index: usize) -> SimConfig {
        let k = (self.markets / 2).clamp(1, 24);
        let t = treatment_cycle(index % k);
        let side = match t.size {
            MarketSizeClass::Small => self.small_side,
            MarketSizeClass::Large => self.large_side,
        };
        SimConfig {
            market_id: format!("M{:03}", index + 1),
            n_buyers: side,
            n_sellers: side,
            valuations: self.valuations.clone(),
            feedback: t.feedback,
            price_rule: t.price_rule,
            rounds: self.rounds,
            actions_per_round: self.actions_per_round,
            price_range: self.price_range,
            rng_seed: self.seed,
            rng_stream: index as u64,
        }
    }
}

pub fn simulate_corpus(config: &CorpusConfig) -> Result<Vec<MarketLog>, SimError> {
    (0..config.markets).map(|i| run_market(&config.market_config(i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(time: f64, actor: u32, side: Side, price: f64) -> OrderEvent {
        OrderEvent { time, round: 1, actor: TraderId(actor), side, price }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn first_rule_uses_resting_price() {
        let mut book = BookState::new();
        let mut r = rng();
        assert_eq!(submit_order(&mut book, &ev(1.0, 0, Side::Bid, 10.0), PriceRule::First, &mut r), Ok(None));
        let deal = submit_order(&mut book, &ev(2.0, 1, Side::Ask, 8.0), PriceRule::First, &mut r)
            .unwrap()
            .unwrap();
        assert_eq!((deal.price, deal.buyer, deal.seller), (10.0, TraderId(0), TraderId(1)));
        assert!(book.bids().is_empty() && book.asks().is_empty());
        assert_eq!(
            submit_order(&mut book, &ev(3.0, 0, Side::Bid, 50.0), PriceRule::First, &mut r),
            Err(SimError::TraderRetired(TraderId(0)))
        );
    }

    #[test]
    fn mmk_records_midpoint_and_both_legs() {
        let mut book = BookState::new();
        let mut r = rng();
        submit_order(&mut book, &ev(1.0, 0, Side::Bid, 10.0), PriceRule::Mmk, &mut r).unwrap();
        let d = submit_order(&mut book, &ev(2.0, 1, Side::Ask, 8.0), PriceRule::Mmk, &mut r)
            .unwrap()
            .unwrap();
        assert_eq!((d.price, d.buyer_price, d.seller_price), (9.0, 10.0, 8.0));
    }

    #[test]
    fn non_crossing_rests() {
        let mut book = BookState::new();
        let mut r = rng();
        submit_order(&mut book, &ev(1.0, 1, Side::Ask, 8.0), PriceRule::First, &mut r).unwrap();
        assert_eq!(submit_order(&mut book, &ev(2.0, 0, Side::Bid, 7.0), PriceRule::First, &mut r), Ok(None));
        assert_eq!(book.bids().len(), 1);
        assert_eq!(book.asks().len(), 1);
    }

    #[test]
    fn overwrite_replaces_prior_order() {
        let mut book = BookState::new();
        let mut r = rng();
        submit_order(&mut book, &ev(1.0, 0, Side::Bid, 5.0), PriceRule::First, &mut r).unwrap();
        submit_order(&mut book, &ev(2.0, 0, Side::Bid, 6.0), PriceRule::First, &mut r).unwrap();
        assert_eq!(book.bids().len(), 1);
        assert_eq!(book.best_bid().unwrap().price, 6.0);
    }

    #[test]
    fn equal_best_prices_go_to_earliest() {
        let mut book = BookState::new();
        let mut r = rng();
        submit_order(&mut book, &ev(1.0, 0, Side::Bid, 9.0), PriceRule::First, &mut r).unwrap();
        submit_order(&mut book, &ev(2.0, 1, Side::Bid, 9.0), PriceRule::First, &mut r).unwrap();
        let d = submit_order(&mut book, &ev(3.0, 2, Side::Ask, 9.0), PriceRule::First, &mut r)
            .unwrap()
            .unwrap();
        assert_eq!(d.buyer, TraderId(0));
    }

    #[test]
    fn settle_rules() {
        let mut r = rng();
        let s = settle_price(10.0, 8.0, 1.0, 2.0, PriceRule::First, &mut r).unwrap();
        assert_eq!(s.price, 10.0);
        let s = settle_price(10.0, 8.0, 3.0, 2.0, PriceRule::First, &mut r).unwrap();
        assert_eq!(s.price, 8.0);
        let s = settle_price(9.0, 9.0, 1.0, 2.0, PriceRule::Random, &mut r).unwrap();
        assert_eq!(s.price, 9.0);
        let s = settle_price(10.0, 8.0, 1.0, 2.0, PriceRule::Mmk, &mut r).unwrap();
        assert_eq!((s.price, s.buyer_price, s.seller_price), (9.0, 10.0, 8.0));
        for _ in 0..1000 {
            let s = settle_price(10.0, 8.0, 1.0, 2.0, PriceRule::Random, &mut r).unwrap();
            assert!((8.0..=10.0).contains(&s.price));
        }
        assert_eq!(
            settle_price(7.0, 8.0, 1.0, 2.0, PriceRule::First, &mut r),
            Err(SimError::NonCrossing { bid: 7.0, ask: 8.0 })
        );
    }

    #[test]
    fn zi_quotes_respect_constraints() {
        let mut r = rng();
        let mut sum = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let b = zi_quote(Side::Bid, 50.0, (1.0, 200.0), &mut r).unwrap();
            assert!((1.0..=50.0).contains(&b));
            sum += b;
            let a = zi_quote(Side::Ask, 30.0, (1.0, 200.0), &mut r).unwrap();
            assert!((30.0..=200.0).contains(&a));
        }
        let mean = sum / n as f64;
        assert!((mean - 25.5).abs() < 0.5, "mean {mean}");
        assert!(matches!(
            zi_quote(Side::Bid, 250.0, (1.0, 200.0), &mut r),
            Err(SimError::InfeasibleRange { .. })
        ));
    }

    #[test]
    fn run_market_is_deterministic() {
        let cfg = SimConfig { rng_seed: 42, rounds: 3, actions_per_round: 50, ..SimConfig::default() };
        assert_eq!(run_market(&cfg).unwrap(), run_market(&cfg).unwrap());
        let other = SimConfig { rng_stream: 1, ..cfg.clone() };
        assert_ne!(run_market(&cfg).unwrap(), run_market(&other).unwrap());
    }

    #[test]
    fn config_validation() {
        let cfg = SimConfig { actions_per_round: 5, ..SimConfig::default() };
        assert!(matches!(run_market(&cfg), Err(SimError::InvalidConfig(_))));
        let cfg = SimConfig { n_sellers: 0, ..SimConfig::default() };
        assert!(run_market(&cfg).is_err());
    }
}
