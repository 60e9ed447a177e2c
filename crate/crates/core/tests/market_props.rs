mod support;

use cdainv_core::{compute_ce, ReservationProfile};
use proptest::prelude::*;
use support::{brute_force_got_max, clearing_interval};

fn profile_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let side = prop::collection::vec((1u32..=100).prop_map(f64::from), 1..=10);
    (side.clone(), side)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ce_matches_oracles((buyers, sellers) in profile_strategy()) {
        let ce = compute_ce(&ReservationProfile::from_values(&buyers, &sellers));
        prop_assert_eq!(ce.got_max, brute_force_got_max(&buyers, &sellers));
        match clearing_interval(&buyers, &sellers) {
            Some((lo, hi)) if ce.k_star.is_some() => {
                prop_assert_eq!(ce.p_lower, Some(lo));
                prop_assert_eq!(ce.p_upper, Some(hi));
            }
            _ => prop_assert!(ce.k_star.is_none()),
        }
    }

    #[test]
    fn ce_is_scale_equivariant((buyers, sellers) in profile_strategy(), lambda in prop::sample::select(vec![0.01, 3.0, 250.0])) {
        let p = ReservationProfile::from_values(&buyers, &sellers);
        let a = compute_ce(&p);
        let b = compute_ce(&p.scaled(lambda));
        prop_assert_eq!(a.k_star, b.k_star);
        prop_assert!((b.got_max - lambda * a.got_max).abs() <= 1e-9 * (1.0 + b.got_max.abs()));
        if let (Some(x), Some(y)) = (a.p_mid, b.p_mid) {
            prop_assert!((y - lambda * x).abs() <= 1e-9 * y.abs());
        }
    }

    #[test]
    fn interval_is_ordered((buyers, sellers) in profile_strategy()) {
        let ce = compute_ce(&ReservationProfile::from_values(&buyers, &sellers));
        if let (Some(lo), Some(hi), Some(mid)) = (ce.p_lower, ce.p_upper, ce.p_mid) {
            prop_assert!(lo <= mid && mid <= hi);
            prop_assert!(ce.got_max >= 0.0);
        }
    }
}

#[test]
fn no_trade_when_every_buyer_is_below_every_seller() {
    let ce = compute_ce(&ReservationProfile::from_values(&[10.0, 20.0], &[30.0, 40.0]));
    assert_eq!(ce.k_star, None);
    assert_eq!(ce.got_max, 0.0);
    assert_eq!(brute_force_got_max(&[10.0, 20.0], &[30.0, 40.0]), 0.0);
    assert_eq!(clearing_interval(&[10.0, 20.0], &[30.0, 40.0]), Some((20.0, 30.0)));
}
