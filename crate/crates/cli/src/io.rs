//! Corpus files: ingest with schema and integrity checks, canonical export.
//!
//! Four CSV files describe a corpus. Headers must match exactly; lines
//! starting with `#` are comments.
//!
//! * `events.csv`: `market_id,round,time,actor_id,side,price`
//! * `deals.csv`: `market_id,round,time,buyer_id,seller_id,price,buyer_price,seller_price`
//! * `valuations.csv` (optional): `market_id,actor_id,side,reservation_value`
//! * `treatments.csv`: `market_id,feedback_setting,price_rule`

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use cdainv_core::market::ParseEnumError;
use cdainv_core::{
    Deal, FeedbackSetting, MarketLog, MarketSizeClass, OrderEvent, PriceRule, ReservationProfile, RoundLog, Side,
    Trader, TraderId, Treatment,
};
use cdainv_core::market::Valuation;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::tables::{fmt_f64, read_records, Preamble};

pub const EVENTS_HEADER: [&str; 6] = ["market_id", "round", "time", "actor_id", "side", "price"];
pub const DEALS_HEADER: [&str; 8] =
    ["market_id", "round", "time", "buyer_id", "seller_id", "price", "buyer_price", "seller_price"];
pub const VALUATIONS_HEADER: [&str; 4] = ["market_id", "actor_id", "side", "reservation_value"];
pub const TREATMENTS_HEADER: [&str; 3] = ["market_id", "feedback_setting", "price_rule"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic,
    Ingested,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub markets: Vec<MarketLog>,
    pub provenance: Provenance,
    pub schema_version: u32,
}

impl Corpus {
    pub fn has_valuations(&self) -> bool {
        self.markets.iter().any(|m| m.profile.is_some())
    }
}

/// Rows left out of the corpus, per file. Only rows of markets without a
/// treatments entry are skipped; everything else is an error.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub skipped: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn total_skipped(&self) -> usize {
        self.skipped.values().sum()
    }
}

#[derive(Clone, Debug)]
pub struct CorpusPaths {
    pub events: PathBuf,
    pub deals: PathBuf,
    pub valuations: Option<PathBuf>,
    pub treatments: PathBuf,
}

impl CorpusPaths {
    /// The canonical file names inside `dir`; valuations only if present.
    pub fn in_dir(dir: &Path) -> Self {
        let valuations = dir.join("valuations.csv");
        CorpusPaths {
            events: dir.join("events.csv"),
            deals: dir.join("deals.csv"),
            valuations: valuations.exists().then_some(valuations),
            treatments: dir.join("treatments.csv"),
        }
    }
}

/// One CSV source: a display name for error messages and the reader.
pub struct Source<R> {
    pub name: String,
    pub reader: R,
}

struct Table {
    name: String,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read<R: Read>(src: Source<R>, header: &[&str]) -> Result<Table> {
        let (_, rows) = read_records(&src.name, src.reader, header)?;
        Ok(Table { name: src.name, rows })
    }

    fn schema(&self, line: u64, message: impl Into<String>) -> AppError {
        AppError::Schema { file: self.name.clone(), line, message: message.into() }
    }

    fn integrity(&self, line: u64, message: impl Into<String>) -> AppError {
        AppError::Integrity { file: self.name.clone(), line, message: message.into() }
    }

    fn field<T: std::str::FromStr>(&self, line: u64, rec: &csv::StringRecord, idx: usize, header: &[&str]) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = rec.get(idx).unwrap_or("");
        raw.parse::<T>().map_err(|e| self.schema(line, format!("column {}: cannot parse '{raw}': {e}", header[idx])))
    }

    fn money(&self, line: u64, rec: &csv::StringRecord, idx: usize, header: &[&str]) -> Result<f64> {
        let v: f64 = self.field(line, rec, idx, header)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(self.schema(line, format!("column {}: {v} is not a positive price", header[idx])));
        }
        Ok(v)
    }

    fn time(&self, line: u64, rec: &csv::StringRecord, idx: usize, header: &[&str]) -> Result<f64> {
        let v: f64 = self.field(line, rec, idx, header)?;
        if !v.is_finite() {
            return Err(self.schema(line, format!("column {}: time {v} is not finite", header[idx])));
        }
        Ok(v)
    }

    fn round(&self, line: u64, rec: &csv::StringRecord, idx: usize, header: &[&str]) -> Result<u32> {
        let r: u32 = self.field(line, rec, idx, header)?;
        if r == 0 {
            return Err(self.schema(line, "rounds are numbered from 1"));
        }
        Ok(r)
    }
}

fn enum_err(e: ParseEnumError) -> String {
    e.to_string()
}

struct MarketDraft {
    treatment_line: u64,
    feedback: FeedbackSetting,
    price_rule: PriceRule,
    /// Actor name -> (id, side).
    actors: BTreeMap<String, (TraderId, Side)>,
    traders: Vec<Trader>,
    values: Vec<Option<f64>>,
    has_valuations: bool,
    events: BTreeMap<u32, Vec<(u64, OrderEvent)>>,
    deals: BTreeMap<u32, Vec<(u64, Deal)>>,
}

impl MarketDraft {
    fn actor(&mut self, name: &str, side: Side) -> (TraderId, Side) {
        if let Some(&a) = self.actors.get(name) {
            return a;
        }
        let id = TraderId(self.traders.len() as u32);
        self.traders.push(Trader { name: name.into(), side });
        self.values.push(None);
        self.actors.insert(name.into(), (id, side));
        (id, side)
    }
}

/// Read and check a corpus. Markets come out sorted by id; rounds are in
/// order and rows keep their file order within a round.
pub fn ingest<R: Read>(
    events: Source<R>,
    deals: Source<R>,
    valuations: Option<Source<R>>,
    treatments: Source<R>,
    strict: bool,
) -> Result<(Corpus, IngestReport)> {
    let treatments = Table::read(treatments, &TREATMENTS_HEADER)?;
    let events = Table::read(events, &EVENTS_HEADER)?;
    let deals = Table::read(deals, &DEALS_HEADER)?;
    let valuations = valuations.map(|v| Table::read(v, &VALUATIONS_HEADER)).transpose()?;
    let mut report = IngestReport::default();

    let mut drafts: BTreeMap<String, MarketDraft> = BTreeMap::new();
    for (line, rec) in &treatments.rows {
        let id = rec[0].to_string();
        let feedback = rec[1].parse().map_err(|e| treatments.schema(*line, enum_err(e)))?;
        let price_rule = rec[2].parse().map_err(|e| treatments.schema(*line, enum_err(e)))?;
        if let Some(prev) = drafts.get(&id) {
            return Err(treatments.integrity(
                *line,
                format!("market {id} already defined on line {}", prev.treatment_line),
            ));
        }
        drafts.insert(
            id,
            MarketDraft {
                treatment_line: *line,
                feedback,
                price_rule,
                actors: BTreeMap::new(),
                traders: Vec::new(),
                values: Vec::new(),
                has_valuations: false,
                events: BTreeMap::new(),
                deals: BTreeMap::new(),
            },
        );
    }

    let skip = |report: &mut IngestReport, table: &Table| {
        *report.skipped.entry(table.name.clone()).or_default() += 1;
    };

    // valuations first so their order fixes trader ids
    if let Some(vt) = &valuations {
        for (line, rec) in &vt.rows {
            let Some(d) = drafts.get_mut(&rec[0]) else {
                skip(&mut report, vt);
                continue;
            };
            let side: Side = rec[2].parse().map_err(|e| vt.schema(*line, enum_err(e)))?;
            let value = vt.money(*line, rec, 3, &VALUATIONS_HEADER)?;
            if d.actors.contains_key(&rec[1]) {
                return Err(vt.integrity(*line, format!("actor {} listed twice in market {}", &rec[1], &rec[0])));
            }
            let (id, _) = d.actor(&rec[1], side);
            d.values[id.0 as usize] = Some(value);
            d.has_valuations = true;
        }
    }

    for (line, rec) in &events.rows {
        let Some(d) = drafts.get_mut(&rec[0]) else {
            skip(&mut report, &events);
            continue;
        };
        let round = events.round(*line, rec, 1, &EVENTS_HEADER)?;
        let time = events.time(*line, rec, 2, &EVENTS_HEADER)?;
        let side: Side = rec[4].parse().map_err(|e| events.schema(*line, enum_err(e)))?;
        let price = events.money(*line, rec, 5, &EVENTS_HEADER)?;
        let (actor, known_side) = d.actor(&rec[3], side);
        if known_side != side {
            return Err(events.integrity(*line, format!("actor {} acts on both sides", &rec[3])));
        }
        let list = d.events.entry(round).or_default();
        if let Some((prev_line, prev)) = list.last() {
            if time < prev.time {
                return Err(events.integrity(
                    *line,
                    format!("time {time} in round {round} precedes line {prev_line} (time {})", prev.time),
                ));
            }
        }
        list.push((*line, OrderEvent { time, round, actor, side, price }));
    }

    for (line, rec) in &deals.rows {
        let Some(d) = drafts.get_mut(&rec[0]) else {
            skip(&mut report, &deals);
            continue;
        };
        let round = deals.round(*line, rec, 1, &DEALS_HEADER)?;
        let time = deals.time(*line, rec, 2, &DEALS_HEADER)?;
        let party = |col: usize, side: Side| -> Result<TraderId> {
            let name = &rec[col];
            match d.actors.get(name) {
                Some(&(id, s)) if s == side => Ok(id),
                Some(_) => Err(deals.integrity(*line, format!("{} {name} is on the wrong side", DEALS_HEADER[col]))),
                None => Err(deals.integrity(
                    *line,
                    format!("{} {name} does not appear among the actors of market {}", DEALS_HEADER[col], &rec[0]),
                )),
            }
        };
        let buyer = party(3, Side::Bid)?;
        let seller = party(4, Side::Ask)?;
        let price = deals.money(*line, rec, 5, &DEALS_HEADER)?;
        let buyer_price = deals.money(*line, rec, 6, &DEALS_HEADER)?;
        let seller_price = deals.money(*line, rec, 7, &DEALS_HEADER)?;
        let list = d.deals.entry(round).or_default();
        if let Some((prev_line, prev)) = list.last() {
            if time < prev.time {
                return Err(deals.integrity(
                    *line,
                    format!("time {time} in round {round} precedes line {prev_line} (time {})", prev.time),
                ));
            }
        }
        list.push((*line, Deal { time, round, buyer, seller, price, buyer_price, seller_price }));
    }

    if strict && report.total_skipped() > 0 {
        let detail: Vec<String> = report.skipped.iter().map(|(f, n)| format!("{f}: {n}")).collect();
        return Err(AppError::Data(format!(
            "strict mode: {} row(s) reference markets missing from {} ({})",
            report.total_skipped(),
            treatments.name,
            detail.join(", ")
        )));
    }

    let mut markets = Vec::with_capacity(drafts.len());
    for (market_id, d) in drafts {
        markets.push(finish_market(market_id, d, &treatments, valuations.as_ref())?);
    }
    Ok((Corpus { markets, provenance: Provenance::Ingested, schema_version: crate::config::SCHEMA_VERSION }, report))
}

fn finish_market(market_id: String, d: MarketDraft, treatments: &Table, valuations: Option<&Table>) -> Result<MarketLog> {
    let profile = if d.has_valuations {
        let vt = valuations.expect("valuations table present");
        let mut p = ReservationProfile::default();
        for (i, t) in d.traders.iter().enumerate() {
            let Some(value) = d.values[i] else {
                return Err(vt.integrity(0, format!("market {market_id}: actor {} has no reservation value", t.name)));
            };
            let v = Valuation { trader: TraderId(i as u32), value };
            match t.side {
                Side::Bid => p.buyers.push(v),
                Side::Ask => p.sellers.push(v),
            }
        }
        Some(p)
    } else {
        None
    };
    let mut round_ids: Vec<u32> = d.events.keys().chain(d.deals.keys()).copied().collect();
    round_ids.sort_unstable();
    round_ids.dedup();
    let all: Vec<TraderId> = (0..d.traders.len() as u32).map(TraderId).collect();
    let mut events = d.events;
    let mut deals = d.deals;
    let rounds: Vec<RoundLog> = round_ids
        .into_iter()
        .map(|r| RoundLog {
            round: r,
            events: events.remove(&r).unwrap_or_default().into_iter().map(|(_, e)| e).collect(),
            deals: deals.remove(&r).unwrap_or_default().into_iter().map(|(_, x)| x).collect(),
            active_traders: all.clone(),
        })
        .collect();
    let log = MarketLog {
        market_id,
        treatment: Treatment {
            feedback: d.feedback,
            price_rule: d.price_rule,
            size: MarketSizeClass::from_trader_count(d.traders.len()),
        },
        traders: d.traders,
        rounds,
        profile,
    };
    log.validate().map_err(|e| treatments.integrity(d.treatment_line, format!("market {}: {e}", log.market_id)))?;
    Ok(log)
}

/// Read the four files from disk.
pub fn ingest_paths(paths: &CorpusPaths, strict: bool) -> Result<(Corpus, IngestReport)> {
    let open = |p: &Path| -> Result<Source<std::fs::File>> {
        let reader = std::fs::File::open(p).map_err(|e| AppError::io(p, e))?;
        Ok(Source { name: p.display().to_string(), reader })
    };
    ingest(
        open(&paths.events)?,
        open(&paths.deals)?,
        paths.valuations.as_deref().map(open).transpose()?,
        open(&paths.treatments)?,
        strict,
    )
}

/// The four files as strings, in canonical order. Valuations are `None`
/// when no market carries them.
pub struct CorpusFiles {
    pub events: String,
    pub deals: String,
    pub valuations: Option<String>,
    pub treatments: String,
}

fn writer(preamble: Option<&Preamble>, header: &[&str]) -> csv::Writer<Vec<u8>> {
    let mut buf = Vec::new();
    if let Some(p) = preamble {
        buf.extend_from_slice(p.line().as_bytes());
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf);
    w.write_record(header).expect("write to memory");
    w
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

pub fn export(corpus: &Corpus, preamble: Option<&Preamble>) -> CorpusFiles {
    let mut ev = writer(preamble, &EVENTS_HEADER);
    let mut de = writer(preamble, &DEALS_HEADER);
    let mut va = writer(preamble, &VALUATIONS_HEADER);
    let mut tr = writer(preamble, &TREATMENTS_HEADER);
    let mut sorted: Vec<&MarketLog> = corpus.markets.iter().collect();
    sorted.sort_by(|a, b| a.market_id.cmp(&b.market_id));
    let mut any_profile = false;
    for m in sorted {
        let name = |id: TraderId| m.trader(id).map_or_else(|| id.to_string(), |t| t.name.clone());
        tr.write_record([m.market_id.as_str(), m.treatment.feedback.as_str(), m.treatment.price_rule.as_str()])
            .expect("write to memory");
        if let Some(p) = &m.profile {
            any_profile = true;
            for (i, t) in m.traders.iter().enumerate() {
                if let Some((side, value)) = p.value_of(TraderId(i as u32)) {
                    va.write_record([m.market_id.as_str(), &t.name, side.code(), &fmt_f64(value)])
                        .expect("write to memory");
                }
            }
        }
        for r in &m.rounds {
            let round = r.round.to_string();
            for e in &r.events {
                ev.write_record([
                    m.market_id.as_str(),
                    &round,
                    &fmt_f64(e.time),
                    &name(e.actor),
                    e.side.code(),
                    &fmt_f64(e.price),
                ])
                .expect("write to memory");
            }
            for d in &r.deals {
                de.write_record([
                    m.market_id.as_str(),
                    &round,
                    &fmt_f64(d.time),
                    &name(d.buyer),
                    &name(d.seller),
                    &fmt_f64(d.price),
                    &fmt_f64(d.buyer_price),
                    &fmt_f64(d.seller_price),
                ])
                .expect("write to memory");
            }
        }
    }
    CorpusFiles {
        events: finish(ev),
        deals: finish(de),
        valuations: any_profile.then(|| finish(va)),
        treatments: finish(tr),
    }
}
