use cdainv::error::AppError;
use cdainv::io::{export, ingest, Corpus, IngestReport, Source};
use cdainv::tables::Preamble;
use cdainv_core::sim::simulate_corpus;
use cdainv_core::CorpusConfig;

const TREATMENTS: &str = "market_id,feedback_setting,price_rule\nm1,Full,First\n";
const VALUATIONS: &str = "market_id,actor_id,side,reservation_value\n\
m1,b1,B,120\nm1,b2,B,90\nm1,s1,S,60\nm1,s2,S,100\n";
const EVENTS: &str = "market_id,round,time,actor_id,side,price\n\
m1,1,0.5,b1,B,80\nm1,1,1.0,s1,S,110\nm1,1,2.0,s1,S,85\nm1,1,3.0,b1,B,85\n";
const DEALS: &str = "market_id,round,time,buyer_id,seller_id,price,buyer_price,seller_price\n\
m1,1,3.0,b1,s1,85,85,85\n";

fn src(name: &str, text: &str) -> Source<std::io::Cursor<Vec<u8>>> {
    Source { name: name.into(), reader: std::io::Cursor::new(text.as_bytes().to_vec()) }
}

fn run(events: &str, deals: &str, valuations: Option<&str>, treatments: &str, strict: bool) -> Result<(Corpus, IngestReport), AppError> {
    ingest(
        src("events.csv", events),
        src("deals.csv", deals),
        valuations.map(|v| src("valuations.csv", v)),
        src("treatments.csv", treatments),
        strict,
    )
}

#[test]
fn minimal_market_is_accepted() {
    let (corpus, report) = run(EVENTS, DEALS, Some(VALUATIONS), TREATMENTS, true).unwrap();
    assert_eq!(report.total_skipped(), 0);
    assert_eq!(corpus.markets.len(), 1);
    let m = &corpus.markets[0];
    assert_eq!(m.traders.len(), 4);
    assert_eq!(m.rounds.len(), 1);
    assert_eq!(m.rounds[0].events.len(), 4);
    assert_eq!(m.rounds[0].deals.len(), 1);
    assert!(m.profile.is_some());
}

#[test]
fn export_then_ingest_is_byte_identical() {
    let cfg = CorpusConfig { markets: 6, seed: 3, actions_per_round: 40, ..CorpusConfig::default() };
    let markets = simulate_corpus(&cfg).unwrap();
    let corpus = Corpus { markets, provenance: cdainv::io::Provenance::Synthetic, schema_version: 1 };
    let preamble = Preamble::new("0123456789abcdef", 3);
    for p in [None, Some(&preamble)] {
        let a = export(&corpus, p);
        let (back, _) = run(&a.events, &a.deals, a.valuations.as_deref(), &a.treatments, true).unwrap();
        let b = export(&back, p);
        assert_eq!(a.events, b.events);
        assert_eq!(a.deals, b.deals);
        assert_eq!(a.valuations, b.valuations);
        assert_eq!(a.treatments, b.treatments);
    }
}

#[test]
fn unknown_buyer_names_the_deal_row() {
    let deals = format!("{DEALS}m1,1,3.5,ghost,s1,85,85,85\n");
    let err = run(EVENTS, &deals, Some(VALUATIONS), TREATMENTS, false).unwrap_err();
    match &err {
        AppError::Integrity { file, line, message } => {
            assert_eq!(file, "deals.csv");
            assert_eq!(*line, 3);
            assert!(message.contains("ghost"), "{message}");
        }
        other => panic!("expected integrity error, got {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn wrong_side_deal_party_is_rejected() {
    let deals = "market_id,round,time,buyer_id,seller_id,price,buyer_price,seller_price\nm1,1,3.0,s1,b1,85,85,85\n";
    assert!(matches!(run(EVENTS, deals, Some(VALUATIONS), TREATMENTS, false), Err(AppError::Integrity { line: 2, .. })));
}

#[test]
fn time_going_backwards_is_rejected() {
    let events = format!("{EVENTS}m1,1,2.5,b2,B,70\n");
    let err = run(&events, DEALS, Some(VALUATIONS), TREATMENTS, false).unwrap_err();
    assert!(matches!(&err, AppError::Integrity { file, line: 6, .. } if file == "events.csv"), "{err}");
}

#[test]
fn actor_on_both_sides_is_rejected() {
    let events = format!("{EVENTS}m1,1,4.0,b1,S,95\n");
    assert!(matches!(run(&events, DEALS, Some(VALUATIONS), TREATMENTS, false), Err(AppError::Integrity { line: 6, .. })));
}

#[test]
fn bad_header_is_a_schema_error() {
    let events = EVENTS.replacen("actor_id", "trader", 1);
    assert!(matches!(run(&events, DEALS, Some(VALUATIONS), TREATMENTS, false), Err(AppError::Schema { line: 1, .. })));
}

#[test]
fn unparsable_price_names_the_line() {
    let events = format!("{EVENTS}m1,1,4.0,b2,B,cheap\n");
    let err = run(&events, DEALS, Some(VALUATIONS), TREATMENTS, false).unwrap_err();
    assert!(matches!(&err, AppError::Schema { line: 6, message, .. } if message.contains("price")), "{err}");
}

#[test]
fn rows_of_unknown_markets_are_skipped_unless_strict() {
    let events = format!("{EVENTS}m9,1,0.1,x,B,50\nm9,1,0.2,y,S,60\n");
    let (corpus, report) = run(&events, DEALS, Some(VALUATIONS), TREATMENTS, false).unwrap();
    assert_eq!(corpus.markets.len(), 1);
    assert_eq!(report.skipped.get("events.csv"), Some(&2));
    let err = run(&events, DEALS, Some(VALUATIONS), TREATMENTS, true).unwrap_err();
    assert!(matches!(err, AppError::Data(_)), "{err}");
}

#[test]
fn duplicate_treatment_is_rejected() {
    let t = format!("{TREATMENTS}m1,BlackBox,Random\n");
    assert!(matches!(run(EVENTS, DEALS, Some(VALUATIONS), &t, false), Err(AppError::Integrity { line: 3, .. })));
}

#[test]
fn valuations_are_optional() {
    let (corpus, _) = run(EVENTS, DEALS, None, TREATMENTS, true).unwrap();
    assert!(!corpus.has_valuations());
    assert_eq!(corpus.markets[0].traders.len(), 2);
}

#[test]
fn preamble_lines_are_ignored() {
    let p = Preamble::new("0123456789abcdef", 1).line();
    let (a, _) = run(EVENTS, DEALS, Some(VALUATIONS), TREATMENTS, true).unwrap();
    let (b, _) = run(
        &format!("{p}{EVENTS}"),
        &format!("{p}{DEALS}"),
        Some(&format!("{p}{VALUATIONS}")),
        &format!("{p}{TREATMENTS}"),
        true,
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn line_numbers_count_comment_lines() {
    let p = Preamble::new("0123456789abcdef", 1).line();
    let deals = format!("{p}{DEALS}# note\nm1,1,3.5,ghost,s1,85,85,85\n");
    let err = run(EVENTS, &deals, Some(VALUATIONS), TREATMENTS, false).unwrap_err();
    assert!(matches!(err, AppError::Integrity { line: 5, .. }), "{err}");
    let events = format!("{p}{}", EVENTS.replacen("actor_id", "trader", 1));
    let err = run(&events, DEALS, Some(VALUATIONS), TREATMENTS, false).unwrap_err();
    assert!(matches!(err, AppError::Schema { line: 2, .. }), "{err}");
}
