use cdainv::tables::{self, fmt_f64, CsvIn, Preamble};
use cdainv_core::eval::{make_splits, run_split, Variant};
use cdainv_core::features::FeatureRow;
use cdainv_core::models::{FitOptions, GbtGrid};
use cdainv_core::sim::simulate_corpus;
use cdainv_core::{snapshot_stream, Cadence, CorpusConfig, QuotePool};
use proptest::prelude::*;

fn rows() -> (Vec<cdainv_core::MarketLog>, Vec<FeatureRow>) {
    let cfg = CorpusConfig { markets: 6, seed: 11, rounds: 3, actions_per_round: 50, ..CorpusConfig::default() };
    let markets = simulate_corpus(&cfg).unwrap();
    let rows = markets.iter().flat_map(|m| snapshot_stream(m, Cadence::PerAction, QuotePool::LatestPerTrader)).collect();
    (markets, rows)
}

#[test]
fn features_round_trip_exactly() {
    let (_, rows) = rows();
    let p = Preamble::new("feedfacefeedface", 11);
    let text = tables::write_features(&rows, &p);
    assert!(text.starts_with(&p.line()));
    let header = tables::feature_header();
    let back = tables::read_features(
        &CsvIn::read("features.csv", text.as_bytes(), &header.iter().map(String::as_str).collect::<Vec<_>>()).unwrap(),
    )
    .unwrap();
    assert_eq!(back, rows);
    assert_eq!(tables::write_features(&back, &p), text);
}

#[test]
fn predictions_round_trip_exactly() {
    let (markets, rows) = rows();
    let plan = &make_splits(&markets, 1, 2).unwrap()[0];
    let opts = FitOptions { gbt_grid: Some(GbtGrid::single(3, 10, 0.1)), ..Default::default() };
    let out = run_split(plan, &rows, &cdainv_core::eval::default_roster(), &opts, Variant::Full).unwrap();
    assert!(out.records.iter().any(|r| r.prediction.is_none()));
    let p = Preamble::new("feedfacefeedface", 11);
    let text = tables::write_predictions(&out.records, &p);
    let back =
        tables::read_predictions(&CsvIn::read("predictions.csv", text.as_bytes(), &tables::PREDICTIONS_HEADER).unwrap())
            .unwrap();
    assert_eq!(back, out.records);
}

#[test]
fn wrong_header_is_rejected_with_its_line() {
    let text = "# schema_version=1 config_hash=0000000000000000 seed=0\nsplit_id,market\n";
    let err = CsvIn::read("x.csv", text.as_bytes(), &tables::PREDICTIONS_HEADER).err().unwrap();
    assert!(matches!(err, cdainv::error::AppError::Schema { line: 2, .. }), "{err}");
}

proptest! {
    #[test]
    fn float_text_reads_back(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        prop_assume!(v.is_finite());
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }
}
