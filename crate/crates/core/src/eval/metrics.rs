//! Absolute percentage error and the reporting buckets.

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::market::{FeedbackSetting, MarketSizeClass, PriceRule};

/// `|y - yhat| / |y|`. A zero target divides by the prediction instead, or
/// by one when the prediction is zero too.
pub fn ape(target: f64, prediction: f64) -> f64 {
    let err = (target - prediction).abs();
    if target != 0.0 {
        err / target.abs()
    } else if prediction != 0.0 {
        err / prediction.abs()
    } else {
        err
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoundClass {
    R1,
    R2plus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DealsClass {
    D0,
    D1plus,
}

/// Reporting cell. The optional fields are filled only when the bucket spec
/// asks for them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bucket {
    pub round_class: RoundClass,
    pub deals_class: DealsClass,
    pub size: Option<MarketSizeClass>,
    pub feedback: Option<FeedbackSetting>,
    pub price_rule: Option<PriceRule>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct BucketSpec {
    pub by_size: bool,
    pub by_feedback: bool,
    pub by_price_rule: bool,
}

impl BucketSpec {
    pub const BASIC: BucketSpec = BucketSpec { by_size: false, by_feedback: false, by_price_rule: false };
}

impl Bucket {
    pub fn of(
        round: u32,
        n_deals: u32,
        treatment: &crate::market::Treatment,
        spec: &BucketSpec,
    ) -> Bucket {
        Bucket {
            round_class: if round <= 1 { RoundClass::R1 } else { RoundClass::R2plus },
            deals_class: if n_deals == 0 { DealsClass::D0 } else { DealsClass::D1plus },
            size: spec.by_size.then_some(treatment.size),
            feedback: spec.by_feedback.then_some(treatment.feedback),
            price_rule: spec.by_price_rule.then_some(treatment.price_rule),
        }
    }

    /// The four basic cells in table order.
    pub fn basic() -> [Bucket; 4] {
        let b = |round_class, deals_class| Bucket { round_class, deals_class, size: None, feedback: None, price_rule: None };
        [
            b(RoundClass::R1, DealsClass::D0),
            b(RoundClass::R1, DealsClass::D1plus),
            b(RoundClass::R2plus, DealsClass::D0),
            b(RoundClass::R2plus, DealsClass::D1plus),
        ]
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = match self.round_class {
            RoundClass::R1 => "R1",
            RoundClass::R2plus => "R2+",
        };
        let d = match self.deals_class {
            DealsClass::D0 => "D0",
            DealsClass::D1plus => "D1+",
        };
        write!(f, "{r}/{d}")?;
        if let Some(s) = self.size {
            write!(f, "/{}", s.as_str())?;
        }
        if let Some(fb) = self.feedback {
            write!(f, "/{}", fb.as_str())?;
        }
        if let Some(pr) = self.price_rule {
            write!(f, "/{}", pr.as_str())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Treatment;

    #[test]
    fn ape_rules() {
        assert!((ape(100.0, 95.0) - 0.05).abs() < 1e-15);
        assert_eq!(ape(0.0, 0.5), 1.0);
        assert_eq!(ape(0.0, -0.5), 1.0);
        assert_eq!(ape(0.0, 0.0), 0.0);
        assert_eq!(ape(-2.0, -1.0), 0.5);
    }

    #[test]
    fn buckets() {
        let t = Treatment { feedback: FeedbackSetting::Same, price_rule: PriceRule::Mmk, size: MarketSizeClass::Large };
        let b = Bucket::of(1, 0, &t, &BucketSpec::BASIC);
        assert_eq!(b, Bucket::basic()[0]);
        let b = Bucket::of(3, 2, &t, &BucketSpec { by_size: true, by_feedback: true, by_price_rule: false });
        assert_eq!(alloc::string::ToString::to_string(&b), "R2+/D1+/Large/Same");
    }
}
