//! Inverse analysis of continuous double-auction markets.
//!
//! The crate is split along the pipeline:
//!
//! * [`market`] holds the domain types and the exact competitive-equilibrium
//!   solver (CE price bounds, maximal and realized gains of trade, allocative
//!   efficiency).
//! * [`sim`] is a single-unit continuous double auction with the `First`,
//!   `Random` and `MMK` price rules and zero-intelligence traders.
//! * [`features`] turns order streams into decile vectors with per-row IQR
//!   normalization.
//! * [`models`] fits and evaluates the predictors (EMH, CEMH, OB-RLM, GBT and
//!   the two simple CEP baselines) against either target.
//! * [`eval`] carries the evaluation protocol: splits, Median-APE, bucketed
//!   tables, signed-rank tests with Holm adjustment, ablations, diagnostics.
//!
//! Everything here is `no_std` and only needs `alloc`. File formats, the
//! command line and parallel fan-out live in the `cdainv` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod eval;
pub mod features;
pub mod market;
pub mod models;
pub mod num;
pub mod sim;

pub use features::{
    decile_vector, make_norm, snapshot_stream, Cadence, DecileVector, FeatureRow,
    NormalizationConstants, QuotePool,
};
pub use market::{
    compute_ce, compute_realized_got, sort_valuations, CeSolution, Deal, EfficiencyReport,
    FeedbackSetting, MarketLog, MarketSizeClass, OrderEvent, PriceRule, ReservationProfile,
    RoundLog, Side, Trader, TraderId, Treatment,
};
pub use models::{FeatureMask, FittedModel, ModelKind, TargetKind};
pub use sim::{run_market, simulate_corpus, CorpusConfig, SimConfig};
