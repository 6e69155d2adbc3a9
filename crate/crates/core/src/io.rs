//! File formats: spectrum, QK and score-series inputs; JSON and CSV outputs.
//!
//! JSON documents carry `"schema_version": 1`; inputs without the field are
//! accepted as version 1. Floats are written in shortest round-trip form, so
//! reading a file back yields bit-identical values. CSV outputs always start
//! with a header row.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ProbeError, Result};
use crate::failure::{FailureReport, PairList, PositionSet, SweepOutput};
use crate::rope::{natural_context_limit, QKVectors, RopeConfig, Spectrum, ThresholdMode};
use crate::stats::{NormalApprox, WindowStats};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// From the file extension, `.csv` or `.json`.
    pub fn from_path(path: &Path) -> Result<Format> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Format::Csv),
            Some("json") => Ok(Format::Json),
            _ => Err(ProbeError::input(format!("cannot infer format of {}; use .csv or .json", path.display()))),
        }
    }
}

impl std::str::FromStr for Format {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Format> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(ProbeError::input(format!("unknown format `{other}`"))),
        }
    }
}

fn parse_error(path: &Path, message: impl std::fmt::Display) -> ProbeError {
    ProbeError::Parse { path: path.display().to_string(), message: message.to_string() }
}

/// Reads a JSON document, checks its schema version and deserializes it.
fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(v) = obj.remove("schema_version") {
            let found = v
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| parse_error(path, "field `schema_version` must be a non-negative integer"))?;
            if found != SCHEMA_VERSION {
                return Err(ProbeError::SchemaVersion { found, expected: SCHEMA_VERSION });
            }
            // non-object documents are wrapped as {"schema_version", "data"}
            if obj.len() == 1 {
                if let Some(data) = obj.remove("data") {
                    value = data;
                }
            }
        }
    }
    serde_json::from_value(value).map_err(|e| parse_error(path, e))
}

fn versioned_value<T: Serialize>(value: &T) -> Result<Value> {
    let mut v = serde_json::to_value(value).map_err(|e| ProbeError::input(e.to_string()))?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("schema_version".into(), SCHEMA_VERSION.into());
            Ok(v)
        }
        None => Ok(serde_json::json!({ "schema_version": SCHEMA_VERSION, "data": v })),
    }
}

/// Writes `value` as pretty JSON with a `schema_version` field.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &versioned_value(value)?).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    // headers are written explicitly so tuple and struct rows behave alike
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(File::create(path)?))
}

fn csv_error(e: csv::Error) -> ProbeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ProbeError::Io(io),
        other => ProbeError::input(format!("{other:?}")),
    }
}

fn write_csv_rows<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `header` then one serialized record per row. Row fields must be
/// in header order.
pub fn write_csv<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    write_csv_rows(path, header, rows)
}

#[derive(Serialize, Deserialize)]
struct SpectrumFile {
    h: usize,
    base: f64,
    context_limit: u64,
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Spectrum with the free-form metadata of its file.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumDocument {
    pub spectrum: Spectrum,
    pub meta: BTreeMap<String, String>,
}

pub fn load_spectrum_document(path: &Path) -> Result<SpectrumDocument> {
    let f: SpectrumFile = read_versioned(path)?;
    let config = RopeConfig::new(f.h, f.base, f.context_limit).map_err(|e| parse_error(path, e))?;
    let spectrum = Spectrum::new(config, f.amplitudes, f.phases).map_err(|e| parse_error(path, e))?;
    Ok(SpectrumDocument { spectrum, meta: f.meta })
}

pub fn load_spectrum(path: &Path) -> Result<Spectrum> {
    load_spectrum_document(path).map(|d| d.spectrum)
}

pub fn save_spectrum(path: &Path, s: &Spectrum, meta: &BTreeMap<String, String>) -> Result<()> {
    write_json(
        path,
        &SpectrumFile {
            h: s.half_dim(),
            base: s.config().base(),
            context_limit: s.config().context_limit(),
            amplitudes: s.amplitudes().to_vec(),
            phases: s.phases().to_vec(),
            meta: meta.clone(),
        },
    )
}

#[derive(Serialize, Deserialize)]
struct QkFile {
    d: usize,
    base: f64,
    q: Vec<f64>,
    k: Vec<f64>,
    /// Defaults to the largest context below `ceil(2 pi B)`.
    #[serde(default)]
    context_limit: Option<u64>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

pub fn load_qk(path: &Path) -> Result<QKVectors> {
    let f: QkFile = read_versioned(path)?;
    if f.d == 0 || !f.d.is_multiple_of(2) {
        return Err(parse_error(path, format!("field `d` must be a positive even integer, got {}", f.d)));
    }
    let limit = f.context_limit.unwrap_or_else(|| natural_context_limit(f.base).max(2.0) as u64 - 1);
    let config = RopeConfig::new(f.d / 2, f.base, limit).map_err(|e| parse_error(path, e))?;
    QKVectors::new(config, f.q, f.k).map_err(|e| parse_error(path, e))
}

pub fn save_qk(path: &Path, v: &QKVectors) -> Result<()> {
    write_json(
        path,
        &QkFile {
            d: v.config().head_dim(),
            base: v.config().base(),
            q: v.q().to_vec(),
            k: v.k().to_vec(),
            context_limit: Some(v.config().context_limit()),
            meta: BTreeMap::new(),
        },
    )
}

/// Scores `S(m_start), S(m_start + 1), ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    #[serde(default)]
    pub m_start: u64,
    pub scores: Vec<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct SeriesRow {
    m: u64,
    #[serde(rename = "S_m")]
    score: f64,
}

/// Reads a score series from JSON (`{"m_start", "scores"}`) or CSV with
/// consecutive `m,S_m` rows.
pub fn load_series(path: &Path) -> Result<ScoreSeries> {
    if Format::from_path(path)? == Format::Json {
        return read_versioned(path);
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_error(path, e))?;
    let mut m_start = None;
    let mut scores = Vec::new();
    for (i, row) in reader.deserialize::<SeriesRow>().enumerate() {
        let row = row.map_err(|e| parse_error(path, e))?;
        let start = *m_start.get_or_insert(row.m);
        if row.m != start + i as u64 {
            return Err(parse_error(
                path,
                format!("line {}: expected m = {}, found {}", i + 2, start + i as u64, row.m),
            ));
        }
        scores.push(row.score);
    }
    Ok(ScoreSeries { m_start: m_start.unwrap_or(0), scores, meta: BTreeMap::new() })
}

pub fn write_series(path: &Path, series: &ScoreSeries, format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(path, series),
        Format::Csv => write_csv_rows(
            path,
            &["m", "S_m"],
            series.scores.iter().enumerate().map(|(i, &score)| SeriesRow { m: series.m_start + i as u64, score }),
        ),
    }
}

/// Pair counts over a `bins_x x bins_y` grid covering `[0, M)^2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub bins_x: usize,
    pub bins_y: usize,
    pub context: u64,
    /// Row-major: `counts[x * bins_y + y]`.
    pub counts: Vec<u64>,
}

impl HeatmapGrid {
    pub fn get(&self, x: usize, y: usize) -> u64 {
        self.counts[x * self.bins_y + y]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Pair `(m1, m2)` lands in cell `(m1 * bins / M, m2 * bins / M)`.
pub fn bin_heatmap(pairs: &PairList, m: u64, bins: usize) -> Result<HeatmapGrid> {
    if bins == 0 {
        return Err(ProbeError::input("heatmap needs at least one bin"));
    }
    if m == 0 {
        return Err(ProbeError::range("heatmap needs M >= 1"));
    }
    let mut counts = vec![0u64; bins * bins];
    let cell = |pos: u64| (pos as u128 * bins as u128 / m as u128) as usize;
    for &(a, b) in &pairs.pairs {
        if a >= b || b >= m {
            return Err(ProbeError::input(format!("pair ({a}, {b}) is not an ordered pair inside [0, {m})")));
        }
        counts[cell(a) * bins + cell(b)] += 1;
    }
    Ok(HeatmapGrid { bins_x: bins, bins_y: bins, context: m, counts })
}

pub fn write_heatmap(path: &Path, grid: &HeatmapGrid, format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(path, grid),
        Format::Csv => write_csv_rows(
            path,
            &["bin_x", "bin_y", "count"],
            (0..grid.bins_x).flat_map(|x| (0..grid.bins_y).map(move |y| (x, y, grid.get(x, y)))),
        ),
    }
}

pub fn write_pairs(path: &Path, pairs: &PairList, format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(path, pairs),
        Format::Csv => write_csv_rows(path, &["m1", "m2"], pairs.pairs.iter().copied()),
    }
}

/// CSV columns `m,failed,cumulative_prob`; one row per position.
pub fn write_position_set(path: &Path, set: &PositionSet, format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(path, set),
        Format::Csv => {
            let mut hits = set.positions.iter().peekable();
            let rows = set.curve.iter().enumerate().map(move |(m, &p)| {
                let hit = hits.next_if_eq(&&(m as u64)).is_some();
                (m as u64, u8::from(hit), p)
            });
            write_csv_rows(path, &["m", "failed", "cumulative_prob"], rows)
        }
    }
}

#[derive(Serialize)]
struct WindowDocument<'a> {
    approx: &'a NormalApprox,
    stats: &'a WindowStats,
}

/// JSON holds both the normal model and the statistics; CSV holds the
/// histogram as `bin_lo,bin_hi,count`.
pub fn write_window_stats(path: &Path, approx: &NormalApprox, stats: &WindowStats, format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(path, &WindowDocument { approx, stats }),
        Format::Csv => {
            let h = &stats.histogram;
            let rows = h.counts.iter().enumerate().map(|(i, &c)| (h.edges[i], h.edges[i + 1], c));
            write_csv_rows(path, &["bin_lo", "bin_hi", "count"], rows)
        }
    }
}

const REPORT_HEADER: [&str; 20] = [
    "index",
    "mode",
    "h",
    "base",
    "context",
    "threshold_mode",
    "dtype",
    "dtype_bits",
    "analytic_prob",
    "analytic_prob_alt",
    "lower_bound",
    "empirical_prob",
    "mc_estimate",
    "mc_half_width",
    "count",
    "expected_count",
    "expected_std",
    "samples",
    "seed",
    "error",
];

/// Field order must match `REPORT_HEADER`.
#[derive(Serialize, Default)]
struct ReportRow<'a> {
    index: Option<u64>,
    mode: &'a str,
    h: usize,
    base: f64,
    context: u64,
    threshold_mode: Option<ThresholdMode>,
    dtype: Option<&'a str>,
    dtype_bits: Option<String>,
    analytic_prob: Option<f64>,
    analytic_prob_alt: Option<f64>,
    lower_bound: Option<f64>,
    empirical_prob: Option<f64>,
    mc_estimate: Option<f64>,
    mc_half_width: Option<f64>,
    count: Option<u64>,
    expected_count: Option<f64>,
    expected_std: Option<f64>,
    samples: Option<u64>,
    seed: Option<u64>,
    error: Option<&'a str>,
}

fn report_row(index: Option<u64>, r: &FailureReport) -> ReportRow<'_> {
    ReportRow {
        index,
        mode: r.mode.as_str(),
        h: r.config.half_dim(),
        base: r.config.base(),
        context: r.config.context_limit(),
        threshold_mode: r.threshold_mode,
        dtype: r.dtype.as_ref().map(|d| d.name.as_str()),
        dtype_bits: r.dtype.as_ref().map(|d| format!("{},{}", d.exponent_bits, d.fraction_bits)),
        analytic_prob: r.analytic_prob,
        analytic_prob_alt: r.analytic_prob_alt,
        lower_bound: r.lower_bound,
        empirical_prob: r.empirical_prob,
        mc_estimate: r.mc_estimate.map(|e| e.estimate),
        mc_half_width: r.mc_estimate.map(|e| e.half_width),
        count: r.count,
        expected_count: r.expected_count.map(|e| e.mean),
        expected_std: r.expected_count.map(|e| e.std),
        samples: Some(r.samples),
        seed: Some(r.seed),
        error: None,
    }
}

/// One CSV row per report, or a JSON array.
pub fn write_reports(path: &Path, reports: &[FailureReport], format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(path, &reports),
        Format::Csv => write_csv_rows(path, &REPORT_HEADER, reports.iter().map(|r| report_row(None, r))),
    }
}

/// CSV rows carry the cell index and any per-cell error; JSON also includes
/// the smallest-context table.
pub fn write_sweep(path: &Path, out: &SweepOutput, format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(path, out),
        Format::Csv => {
            let rows = out.rows.iter().map(|row| match &row.report {
                Some(r) => report_row(Some(row.cell.index), r),
                None => ReportRow {
                    index: Some(row.cell.index),
                    mode: row.cell.mode.as_str(),
                    h: row.cell.half_dim,
                    base: row.cell.base,
                    context: row.cell.context,
                    dtype: Some(row.cell.dtype.as_str()),
                    error: row.error.as_deref(),
                    ..ReportRow::default()
                },
            });
            write_csv_rows(path, &REPORT_HEADER, rows)
        }
    }
}

/// Reads any JSON document written by [`write_json`].
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    read_versioned(path)
}
