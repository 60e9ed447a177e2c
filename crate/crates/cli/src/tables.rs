//! Artifact CSV formats: feature rows, split plans, prediction records and
//! report tables. Every file opens with a `#` preamble line carrying the
//! schema version, config hash and seed.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use cdainv_core::eval::{
    AblationReport, Bucket, BucketCell, ComparisonRow, ImportanceRow, PdpCurve, PredictionRecord, ResidualSummary,
    SplitPlan, Variant,
};
use cdainv_core::features::{make_norm, DecileVector, FeatureRow, DECILES};
use cdainv_core::{MarketSizeClass, ModelKind, TargetKind, Treatment};

use crate::config::SCHEMA_VERSION;
use crate::error::{AppError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preamble {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

impl Preamble {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Preamble { schema_version: SCHEMA_VERSION, config_hash: config_hash.into(), seed }
    }

    pub fn line(&self) -> String {
        format!("# schema_version={} config_hash={} seed={}\n", self.schema_version, self.config_hash, self.seed)
    }

    /// Parse the first line of a file, if it is a preamble.
    pub fn parse(first_line: &str) -> Option<Preamble> {
        let rest = first_line.trim_end().strip_prefix("# ")?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for kv in rest.split(' ') {
            let (k, v) = kv.split_once('=')?;
            fields.insert(k, v);
        }
        Some(Preamble {
            schema_version: fields.get("schema_version")?.parse().ok()?,
            config_hash: (*fields.get("config_hash")?).to_string(),
            seed: fields.get("seed")?.parse().ok()?,
        })
    }
}

/// Shortest decimal that reads back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// In-memory CSV with a preamble.
pub struct CsvOut {
    w: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub fn new(preamble: &Preamble, header: &[&str]) -> Self {
        let buf = preamble.line().into_bytes();
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf);
        w.write_record(header).expect("write to memory");
        CsvOut { w }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).expect("write to memory");
    }

    pub fn finish(self) -> String {
        String::from_utf8(self.w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
    }
}

/// Parsed artifact: preamble plus rows addressable by column name.
pub struct CsvIn {
    pub name: String,
    pub preamble: Option<Preamble>,
    columns: BTreeMap<String, usize>,
    pub rows: Vec<(u64, csv::StringRecord)>,
}

/// Read a CSV with `#` comment lines and an exact header. Rows come back
/// with their physical line numbers.
pub fn read_records(name: &str, mut reader: impl Read, header: &[&str]) -> Result<(String, Vec<(u64, csv::StringRecord)>)> {
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|e| AppError::io(name, e))?;
    let mut kept = String::with_capacity(text.len());
    let mut physical = Vec::new();
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if !l.starts_with('#') {
            kept.push_str(l);
            physical.push(i as u64 + 1);
        }
    }
    let line = |p: Option<&csv::Position>| {
        p.and_then(|p| physical.get(p.line().saturating_sub(1) as usize).copied()).unwrap_or(0)
    };
    let schema = |line: u64, message: String| AppError::Schema { file: name.into(), line, message };
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(kept.as_bytes());
    let got = rdr.headers().map_err(|e| schema(line(e.position()), e.to_string()))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(schema(
            line(got.position()).max(1),
            format!("header must be '{}', found '{}'", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema(line(e.position()), e.to_string()))?;
        rows.push((line(rec.position()), rec));
    }
    Ok((text, rows))
}

impl CsvIn {
    pub fn read(name: &str, reader: impl Read, header: &[&str]) -> Result<CsvIn> {
        let (text, rows) = read_records(name, reader, header)?;
        let preamble = text.lines().next().and_then(Preamble::parse);
        let columns = header.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
        Ok(CsvIn { name: name.into(), preamble, columns, rows })
    }

    pub fn open(path: &Path, header: &[&str]) -> Result<CsvIn> {
        let f = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
        CsvIn::read(&path.display().to_string(), f, header)
    }

    fn raw<'a>(&self, rec: &'a csv::StringRecord, col: &str) -> &'a str {
        rec.get(self.columns[col]).unwrap_or("")
    }

    pub fn get<T: std::str::FromStr>(&self, line: u64, rec: &csv::StringRecord, col: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(rec, col);
        raw.parse().map_err(|e| AppError::Schema {
            file: self.name.clone(),
            line,
            message: format!("column {col}: cannot parse '{raw}': {e}"),
        })
    }

    pub fn opt<T: std::str::FromStr>(&self, line: u64, rec: &csv::StringRecord, col: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(rec, col).is_empty() {
            Ok(None)
        } else {
            self.get(line, rec, col).map(Some)
        }
    }

    pub fn text<'a>(&self, rec: &'a csv::StringRecord, col: &str) -> &'a str {
        self.raw(rec, col)
    }
}

fn size_from_str(s: &str) -> std::result::Result<MarketSizeClass, String> {
    match s {
        "Small" => Ok(MarketSizeClass::Small),
        "Large" => Ok(MarketSizeClass::Large),
        _ => Err(format!("unknown market size '{s}'")),
    }
}

fn treatment_of(t: &CsvIn, line: u64, rec: &csv::StringRecord) -> Result<Treatment> {
    Ok(Treatment {
        feedback: t.get(line, rec, "feedback_setting")?,
        price_rule: t.get(line, rec, "price_rule")?,
        size: size_from_str(t.text(rec, "size"))
            .map_err(|message| AppError::Schema { file: t.name.clone(), line, message })?,
    })
}

// ---- feature rows ----

pub fn feature_header() -> Vec<String> {
    let mut h: Vec<String> =
        ["market_id", "feedback_setting", "price_rule", "size", "round", "seq", "time"].map(String::from).to_vec();
    for side in ["bid", "ask"] {
        h.push(format!("{side}_count"));
        h.extend((0..DECILES).map(|k| format!("{side}_d{k}")));
    }
    h.extend(["norm_center", "norm_scale", "last_deal_price", "n_deals", "ae_round", "cep_mid"].map(String::from));
    h
}

pub fn write_features(rows: &[FeatureRow], preamble: &Preamble) -> String {
    let header = feature_header();
    let mut out = CsvOut::new(preamble, &header.iter().map(String::as_str).collect::<Vec<_>>());
    for r in rows {
        let mut f = vec![
            r.market_id.clone(),
            r.treatment.feedback.as_str().into(),
            r.treatment.price_rule.as_str().into(),
            r.treatment.size.as_str().into(),
            r.round.to_string(),
            r.seq.to_string(),
            fmt_f64(r.time),
        ];
        for side in [r.bids, r.asks] {
            match side {
                Some(d) => {
                    f.push(d.count.to_string());
                    f.extend(d.values.iter().map(|v| fmt_f64(*v)));
                }
                None => f.extend(std::iter::repeat_n(String::new(), DECILES + 1)),
            }
        }
        f.push(fmt_opt(r.norm.map(|n| n.center)));
        f.push(fmt_opt(r.norm.map(|n| n.scale)));
        f.push(fmt_opt(r.last_deal_price));
        f.push(r.n_deals.to_string());
        f.push(fmt_opt(r.ae_round));
        f.push(fmt_opt(r.cep_mid));
        out.row(&f);
    }
    out.finish()
}

pub fn read_features(input: &CsvIn) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::with_capacity(input.rows.len());
    for (line, rec) in &input.rows {
        let line = *line;
        let side = |name: &str| -> Result<Option<DecileVector>> {
            let Some(count) = input.opt::<usize>(line, rec, &format!("{name}_count"))? else {
                return Ok(None);
            };
            let mut values = [0.0; DECILES];
            for (k, v) in values.iter_mut().enumerate() {
                *v = input.get(line, rec, &format!("{name}_d{k}"))?;
            }
            Ok(Some(DecileVector { values, count }))
        };
        let bids = side("bid")?;
        let asks = side("ask")?;
        rows.push(FeatureRow {
            market_id: input.text(rec, "market_id").into(),
            treatment: treatment_of(input, line, rec)?,
            round: input.get(line, rec, "round")?,
            seq: input.get(line, rec, "seq")?,
            time: input.get(line, rec, "time")?,
            bids,
            asks,
            last_deal_price: input.opt(line, rec, "last_deal_price")?,
            n_deals: input.get(line, rec, "n_deals")?,
            norm: match (bids, asks) {
                (Some(b), Some(a)) => Some(make_norm(&b, &a)),
                _ => None,
            },
            ae_round: input.opt(line, rec, "ae_round")?,
            cep_mid: input.opt(line, rec, "cep_mid")?,
        });
    }
    Ok(rows)
}

// ---- split plans ----

pub const SPLITS_HEADER: [&str; 3] = ["split_id", "market_id", "role"];

pub fn write_splits(plans: &[SplitPlan], preamble: &Preamble) -> String {
    let mut out = CsvOut::new(preamble, &SPLITS_HEADER);
    for p in plans {
        let id = p.split_id.to_string();
        let mut all: Vec<(&String, &str)> =
            p.train.iter().map(|m| (m, "train")).chain(p.test.iter().map(|m| (m, "test"))).collect();
        all.sort();
        for (m, role) in all {
            out.row([id.as_str(), m.as_str(), role]);
        }
    }
    out.finish()
}

// ---- prediction records ----

pub const PREDICTIONS_HEADER: [&str; 15] = [
    "split_id",
    "market_id",
    "feedback_setting",
    "price_rule",
    "size",
    "round",
    "seq",
    "time",
    "n_deals",
    "model",
    "target",
    "variant",
    "prediction",
    "target_value",
    "ape",
];

pub fn write_predictions(records: &[PredictionRecord], preamble: &Preamble) -> String {
    let mut out = CsvOut::new(preamble, &PREDICTIONS_HEADER);
    for r in records {
        out.row([
            r.split_id.to_string(),
            r.market_id.clone(),
            r.treatment.feedback.as_str().into(),
            r.treatment.price_rule.as_str().into(),
            r.treatment.size.as_str().into(),
            r.round.to_string(),
            r.seq.to_string(),
            fmt_f64(r.time),
            r.n_deals.to_string(),
            r.model.as_str().into(),
            r.target.as_str().into(),
            r.variant.as_str().into(),
            fmt_opt(r.prediction),
            fmt_f64(r.target_value),
            fmt_opt(r.ape),
        ]);
    }
    out.finish()
}

pub fn read_predictions(input: &CsvIn) -> Result<Vec<PredictionRecord>> {
    input
        .rows
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            Ok(PredictionRecord {
                split_id: input.get(line, rec, "split_id")?,
                market_id: input.text(rec, "market_id").into(),
                treatment: treatment_of(input, line, rec)?,
                round: input.get(line, rec, "round")?,
                seq: input.get(line, rec, "seq")?,
                time: input.get(line, rec, "time")?,
                n_deals: input.get(line, rec, "n_deals")?,
                model: input.get::<ModelKind>(line, rec, "model")?,
                target: input.get::<TargetKind>(line, rec, "target")?,
                variant: input.get::<Variant>(line, rec, "variant")?,
                prediction: input.opt(line, rec, "prediction")?,
                target_value: input.get(line, rec, "target_value")?,
                ape: input.opt(line, rec, "ape")?,
            })
        })
        .collect()
}

// ---- report tables ----

fn bucket_fields(b: &Bucket) -> [String; 5] {
    let round = match b.round_class {
        cdainv_core::eval::RoundClass::R1 => "R1",
        cdainv_core::eval::RoundClass::R2plus => "R2+",
    };
    let deals = match b.deals_class {
        cdainv_core::eval::DealsClass::D0 => "D0",
        cdainv_core::eval::DealsClass::D1plus => "D1+",
    };
    [
        round.into(),
        deals.into(),
        b.size.map(|s| s.as_str().to_string()).unwrap_or_default(),
        b.feedback.map(|s| s.as_str().to_string()).unwrap_or_default(),
        b.price_rule.map(|s| s.as_str().to_string()).unwrap_or_default(),
    ]
}

const BUCKET_COLUMNS: [&str; 5] = ["round_class", "deals_class", "size", "feedback_setting", "price_rule"];

fn with_buckets(pre: &[&'static str], post: &[&'static str]) -> Vec<&'static str> {
    pre.iter().chain(BUCKET_COLUMNS.iter()).chain(post).copied().collect()
}

pub fn write_bucket_cells(cells: &[BucketCell], preamble: &Preamble) -> String {
    let mut out =
        CsvOut::new(preamble, &with_buckets(&["target", "model", "variant"], &["n_rows", "n_predicted", "median_ape"]));
    for c in cells {
        let mut f = vec![c.target.as_str().to_string(), c.model.as_str().into(), c.variant.as_str().into()];
        f.extend(bucket_fields(&c.bucket));
        f.extend([c.n_rows.to_string(), c.n_predicted.to_string(), fmt_opt(c.median_ape)]);
        out.row(&f);
    }
    out.finish()
}

/// Basic buckets in reporting order.
pub const WIDE_BUCKETS: [&str; 4] = ["R1/D0", "R1/D1+", "R2+/D0", "R2+/D1+"];

/// Model-by-bucket median APE for one target, basic buckets only. Cells
/// without predictions are `n/a`.
pub fn write_wide_table(cells: &[BucketCell], target: TargetKind, preamble: &Preamble) -> String {
    let mut header = vec!["model", "variant"];
    header.extend(WIDE_BUCKETS);
    let mut out = CsvOut::new(preamble, &header);
    let mut by_model: BTreeMap<(ModelKind, Variant), BTreeMap<String, Option<f64>>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.target == target) {
        by_model.entry((c.model, c.variant)).or_default().insert(c.bucket.to_string(), c.median_ape);
    }
    for ((model, variant), vals) in by_model {
        let mut f = vec![model.as_str().to_string(), variant.as_str().to_string()];
        for b in WIDE_BUCKETS {
            f.push(match vals.get(b) {
                Some(Some(v)) => format!("{v:.3}"),
                _ => "n/a".into(),
            });
        }
        out.row(&f);
    }
    out.finish()
}

pub fn write_comparisons(rows: &[ComparisonRow], preamble: &Preamble) -> String {
    let header = with_buckets(
        &["target"],
        &[
            "model_a",
            "model_b",
            "n_rows",
            "n_clusters",
            "median_difference",
            "row_alternative",
            "row_p",
            "row_p_holm",
            "aggregated_median_difference",
            "aggregated_p",
            "aggregated_p_holm",
            "clustered_p",
            "clustered_p_holm",
        ],
    );
    let mut out = CsvOut::new(preamble, &header);
    for r in rows {
        let mut f = vec![r.target.as_str().to_string()];
        f.extend(bucket_fields(&r.bucket));
        f.extend([
            r.model_a.as_str().into(),
            r.model_b.as_str().into(),
            r.n_rows.to_string(),
            r.n_clusters.to_string(),
            fmt_opt(r.median_difference),
            format!("{:?}", r.row_alternative),
            fmt_opt(r.row_p),
            fmt_opt(r.row_p_holm),
            fmt_opt(r.aggregated_median_difference),
            fmt_opt(r.aggregated_p),
            fmt_opt(r.aggregated_p_holm),
            fmt_opt(r.clustered_p),
            fmt_opt(r.clustered_p_holm),
        ]);
        out.row(&f);
    }
    out.finish()
}

pub fn write_ablation(report: &AblationReport, preamble: &Preamble) -> String {
    let mut out =
        CsvOut::new(preamble, &with_buckets(&["ablation", "target", "model"], &["n_rows", "original", "ablated"]));
    for c in &report.cells {
        let mut f =
            vec![report.ablation.as_str().to_string(), c.target.as_str().into(), c.model.as_str().into()];
        f.extend(bucket_fields(&c.bucket));
        f.extend([c.n_rows.to_string(), fmt_opt(c.original), fmt_opt(c.ablated)]);
        out.row(&f);
    }
    out.finish()
}

pub fn write_residuals(rows: &[ResidualSummary], preamble: &Preamble) -> String {
    let mut out = CsvOut::new(
        preamble,
        &with_buckets(&["target", "model"], &["n", "mean_residual", "std_residual", "median_ape"]),
    );
    for r in rows {
        let mut f = vec![r.target.as_str().to_string(), r.model.as_str().into()];
        f.extend(bucket_fields(&r.bucket));
        f.extend([r.n.to_string(), fmt_f64(r.mean_residual), fmt_f64(r.std_residual), fmt_f64(r.median_ape)]);
        out.row(&f);
    }
    out.finish()
}

pub fn write_importance(rows: &[ImportanceRow], preamble: &Preamble) -> String {
    let mut out = CsvOut::new(preamble, &["target", "feature", "importance"]);
    for r in rows {
        out.row([r.target.as_str().to_string(), r.feature.clone(), fmt_f64(r.importance)]);
    }
    out.finish()
}

pub fn write_pdp(curves: &[PdpCurve], preamble: &Preamble) -> String {
    let mut out =
        CsvOut::new(preamble, &["target", "feature", "point", "value", "mean_prediction", "centered_prediction"]);
    for c in curves {
        for (k, ((x, y), yc)) in c.grid.iter().zip(&c.mean_prediction).zip(c.centered()).enumerate() {
            out.row([
                c.target.as_str().to_string(),
                c.feature.clone(),
                k.to_string(),
                fmt_f64(*x),
                fmt_f64(*y),
                fmt_f64(yc),
            ]);
        }
    }
    out.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preamble_round_trip() {
        let p = Preamble::new("00ff00ff00ff00ff", 42);
        assert_eq!(p.line(), "# schema_version=1 config_hash=00ff00ff00ff00ff seed=42\n");
        assert_eq!(Preamble::parse(&p.line()), Some(p));
        assert_eq!(Preamble::parse("market_id,round"), None);
    }

    #[test]
    fn floats_read_back_exactly() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 123456789.12345679, 5e-324] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
