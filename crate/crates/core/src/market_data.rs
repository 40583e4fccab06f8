//! Daily OHLCV ingestion: CSV parsing, per-bar validation, and an indexed
//! in-memory price table keyed by (symbol, trading day).
//!
//! Trading days are numbered 1..=T in the order of the sorted union of all
//! dates seen in the file; position `p` in any calendar-aligned vector
//! corresponds to day `p + 1`.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header does not contain mapped column `{0}`")]
    MissingColumn(String),
    #[error("no valid rows in {0}")]
    NoValidRows(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
}

/// Column-name mapping for the input CSV. Defaults match the common public
/// daily-bars layout where the ticker column is named `Name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub date: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
    pub symbol: String,
    /// chrono format string for the date column.
    pub date_format: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
            symbol: "Name".into(),
            date_format: "%Y-%m-%d".into(),
        }
    }
}

/// One validated daily bar.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    /// Missing volume is kept as `None`; prices are mandatory.
    pub volume: Option<f64>,
    pub symbol: String,
}

impl PriceBar {
    /// low <= min(open, close) <= max(open, close) <= high, prices > 0,
    /// volume >= 0 when present.
    pub fn is_valid(&self) -> bool {
        let prices_pos =
            self.open > 0.0 && self.high > 0.0 && self.low > 0.0 && self.close > 0.0;
        let body_lo = self.open.min(self.close);
        let body_hi = self.open.max(self.close);
        let ordered = self.low <= body_lo && body_hi <= self.high;
        let vol_ok = self.volume.map_or(true, |v| v >= 0.0 && v.is_finite());
        let finite = [self.open, self.high, self.low, self.close]
            .iter()
            .all(|p| p.is_finite());
        prices_pos && ordered && vol_ok && finite
    }
}

/// Counters and span information produced by [`load_ohlcv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_dropped_invalid: usize,
    pub rows_dropped_duplicate: usize,
    pub symbol_count: usize,
    pub day_count: usize,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
}

/// All bars for one symbol, aligned to the table calendar; gaps stay `None`.
#[derive(Debug, Clone)]
pub struct PriceSeries {
    pub symbol: String,
    pub bars: Vec<Option<PriceBar>>,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<Option<f64>> {
        self.bars.iter().map(|b| b.as_ref().map(|b| b.close)).collect()
    }

    pub fn present_count(&self) -> usize {
        self.bars.iter().filter(|b| b.is_some()).count()
    }
}

/// Read-only after load; symbols and calendar are sorted ascending.
#[derive(Debug, Clone)]
pub struct PriceTable {
    symbols: Vec<String>,
    calendar: Vec<NaiveDate>,
    // bars[symbol_index][day_position]
    bars: Vec<Vec<Option<PriceBar>>>,
}

impl PriceTable {
    /// Builds a table from validated bars. Later duplicates of a
    /// (symbol, date) pair are rejected; the count is returned.
    pub fn from_bars(bars: Vec<PriceBar>) -> (Self, usize) {
        let mut by_key: BTreeMap<(String, NaiveDate), PriceBar> = BTreeMap::new();
        let mut duplicates = 0usize;
        for bar in bars {
            let key = (bar.symbol.clone(), bar.date);
            match by_key.entry(key) {
                std::collections::btree_map::Entry::Occupied(_) => duplicates += 1,
                std::collections::btree_map::Entry::Vacant(slot) => {
                    slot.insert(bar);
                }
            }
        }

        let mut symbols: Vec<String> = by_key.keys().map(|(s, _)| s.clone()).collect();
        symbols.dedup();
        let mut calendar: Vec<NaiveDate> = by_key.keys().map(|(_, d)| *d).collect();
        calendar.sort_unstable();
        calendar.dedup();

        let day_pos: BTreeMap<NaiveDate, usize> =
            calendar.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let sym_pos: BTreeMap<&str, usize> =
            symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

        let mut grid = vec![vec![None; calendar.len()]; symbols.len()];
        for ((sym, date), bar) in by_key {
            grid[sym_pos[sym.as_str()]][day_pos[&date]] = Some(bar);
        }

        (Self { symbols, calendar, bars: grid }, duplicates)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    /// Number of trading days T.
    pub fn day_count(&self) -> usize {
        self.calendar.len()
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.symbols.binary_search_by(|s| s.as_str().cmp(symbol)).ok()
    }

    pub fn bar(&self, symbol_idx: usize, day_pos: usize) -> Option<&PriceBar> {
        self.bars[symbol_idx][day_pos].as_ref()
    }

    /// Bars for `symbol` in calendar order with gaps marked `None`.
    pub fn get_series(&self, symbol: &str) -> Result<PriceSeries, MarketDataError> {
        let idx = self
            .symbol_index(symbol)
            .ok_or_else(|| MarketDataError::UnknownSymbol(symbol.to_string()))?;
        Ok(PriceSeries { symbol: symbol.to_string(), bars: self.bars[idx].clone() })
    }

    /// Epoch seconds at UTC midnight for the given day position.
    pub fn epoch_seconds(&self, day_pos: usize) -> u64 {
        self.calendar[day_pos]
            .and_hms_opt(0, 0, 0)
            .expect("midnight is always valid")
            .and_utc()
            .timestamp() as u64
    }
}

fn parse_price(field: &str) -> Option<f64> {
    let t = field.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads and validates a daily OHLCV CSV.
///
/// Rows with a missing or unparseable price field, or violating the bar
/// invariants, are dropped and counted. A missing volume field is kept as a
/// marker. Duplicate (symbol, date) rows keep the first occurrence.
pub fn load_ohlcv(
    path: &Path,
    schema: &CsvSchema,
) -> Result<(PriceTable, LoadReport), MarketDataError> {
    let file = std::fs::File::open(path).map_err(|source| MarketDataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);

    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, MarketDataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MarketDataError::MissingColumn(name.to_string()))
    };
    let c_date = col(&schema.date)?;
    let c_open = col(&schema.open)?;
    let c_high = col(&schema.high)?;
    let c_low = col(&schema.low)?;
    let c_close = col(&schema.close)?;
    let c_volume = col(&schema.volume)?;
    let c_symbol = col(&schema.symbol)?;

    let mut rows_read = 0usize;
    let mut rows_dropped_invalid = 0usize;
    let mut kept = Vec::new();

    for record in reader.records() {
        let record = record?;
        rows_read += 1;

        let field = |i: usize| record.get(i).unwrap_or("");
        let date = match NaiveDate::parse_from_str(field(c_date).trim(), &schema.date_format) {
            Ok(d) => d,
            Err(_) => {
                rows_dropped_invalid += 1;
                continue;
            }
        };
        let symbol = field(c_symbol).trim();
        if symbol.is_empty() {
            rows_dropped_invalid += 1;
            continue;
        }
        let (open, high, low, close) = match (
            parse_price(field(c_open)),
            parse_price(field(c_high)),
            parse_price(field(c_low)),
            parse_price(field(c_close)),
        ) {
            (Some(o), Some(h), Some(l), Some(c)) => (o, h, l, c),
            _ => {
                rows_dropped_invalid += 1;
                continue;
            }
        };
        // Empty volume is a marker, garbage is a dropped row.
        let vol_field = field(c_volume).trim();
        let volume = if vol_field.is_empty() {
            None
        } else {
            match vol_field.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    rows_dropped_invalid += 1;
                    continue;
                }
            }
        };

        let bar = PriceBar {
            date,
            open,
            high,
            low,
            close,
            volume,
            symbol: symbol.to_string(),
        };
        if !bar.is_valid() {
            rows_dropped_invalid += 1;
            continue;
        }
        kept.push(bar);
    }

    let (table, duplicates) = PriceTable::from_bars(kept);
    let rows_kept = rows_read - rows_dropped_invalid - duplicates;
    if rows_kept == 0 {
        return Err(MarketDataError::NoValidRows(path.display().to_string()));
    }

    let report = LoadReport {
        rows_read,
        rows_kept,
        rows_dropped_invalid,
        rows_dropped_duplicate: duplicates,
        symbol_count: table.symbols.len(),
        day_count: table.calendar.len(),
        first_date: table.calendar.first().copied(),
        last_date: table.calendar.last().copied(),
    };
    if duplicates > 0 {
        log::warn!("{} duplicate (symbol, date) rows rejected", duplicates);
    }
    Ok((table, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "date,open,high,low,close,volume,Name\n";

    #[test]
    fn two_symbols_three_days() {
        let mut csv = String::from(HEADER);
        for day in ["2020-01-02", "2020-01-03", "2020-01-06"] {
            csv.push_str(&format!("{day},10,11,9,10.5,1000,AAA\n"));
            csv.push_str(&format!("{day},20,22,19,21,2000,BBB\n"));
        }
        let f = write_csv(&csv);
        let (table, report) = load_ohlcv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(table.day_count(), 3);
        assert_eq!(table.symbols(), &["AAA".to_string(), "BBB".to_string()]);
        assert_eq!(report.rows_read, 6);
        assert_eq!(report.rows_kept, 6);
        assert_eq!(report.rows_dropped_invalid, 0);
    }

    #[test]
    fn high_below_low_row_is_dropped() {
        let csv = format!(
            "{HEADER}2020-01-02,10,9,11,10,1000,AAA\n2020-01-03,10,11,9,10,1000,AAA\n"
        );
        let f = write_csv(&csv);
        let (table, report) = load_ohlcv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(report.rows_dropped_invalid, 1);
        assert_eq!(report.rows_kept, 1);
        assert_eq!(table.day_count(), 1);
    }

    #[test]
    fn duplicate_rows_flagged_against_raw_scan() {
        let csv = format!(
            "{HEADER}2020-01-02,10,11,9,10,1000,AAA\n\
             2020-01-03,10,11,9,10,1000,AAA\n\
             2020-01-02,12,13,11,12,1500,AAA\n\
             2020-01-02,20,22,19,21,2000,BBB\n"
        );
        let f = write_csv(&csv);

        // Independent oracle: set-based duplicate scan of the raw rows.
        let mut seen = HashSet::new();
        let mut expected_dups = 0;
        for line in csv.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            if !seen.insert((parts[6].to_string(), parts[0].to_string())) {
                expected_dups += 1;
            }
        }

        let (table, report) = load_ohlcv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(report.rows_dropped_duplicate, expected_dups);
        assert_eq!(expected_dups, 1);
        // First occurrence wins.
        let idx = table.symbol_index("AAA").unwrap();
        let day0 = table.bar(idx, 0).unwrap();
        assert_eq!(day0.open, 10.0);
    }

    #[test]
    fn missing_price_drops_row_missing_volume_kept() {
        let csv = format!(
            "{HEADER}2020-01-02,,11,9,10,1000,AAA\n2020-01-03,10,11,9,10,,AAA\n"
        );
        let f = write_csv(&csv);
        let (table, report) = load_ohlcv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(report.rows_dropped_invalid, 1);
        assert_eq!(report.rows_kept, 1);
        let idx = table.symbol_index("AAA").unwrap();
        assert_eq!(table.bar(idx, 0).unwrap().volume, None);
    }

    #[test]
    fn missing_file_and_bad_header_and_empty() {
        assert!(matches!(
            load_ohlcv(Path::new("/nonexistent/x.csv"), &CsvSchema::default()),
            Err(MarketDataError::Io { .. })
        ));

        let f = write_csv("foo,bar\n1,2\n");
        assert!(matches!(
            load_ohlcv(f.path(), &CsvSchema::default()),
            Err(MarketDataError::MissingColumn(_))
        ));

        let f = write_csv(&format!("{HEADER}2020-01-02,0,0,0,0,0,AAA\n"));
        assert!(matches!(
            load_ohlcv(f.path(), &CsvSchema::default()),
            Err(MarketDataError::NoValidRows(_))
        ));
    }

    #[test]
    fn series_marks_calendar_gaps() {
        // BBB covers the middle day so the calendar has 4 entries while AAA
        // only trades on three of them.
        let csv = format!(
            "{HEADER}2020-01-02,10,11,9,10,100,AAA\n\
             2020-01-03,10,11,9,10,100,AAA\n\
             2020-01-07,10,11,9,10,100,AAA\n\
             2020-01-06,20,22,19,21,200,BBB\n"
        );
        let f = write_csv(&csv);
        let (table, _) = load_ohlcv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(table.day_count(), 4);

        let series = table.get_series("AAA").unwrap();
        assert_eq!(series.len(), 4);
        assert!(series.bars[0].is_some());
        assert!(series.bars[1].is_some());
        assert!(series.bars[2].is_none());
        assert!(series.bars[3].is_some());

        let full = table.get_series("BBB").unwrap();
        assert_eq!(full.present_count(), 1);

        assert!(matches!(
            table.get_series("ZZZZ"),
            Err(MarketDataError::UnknownSymbol(_))
        ));
    }

    #[test]
    fn loading_is_deterministic() {
        let csv = format!(
            "{HEADER}2020-01-03,10,11,9,10,100,AAA\n\
             2020-01-02,20,22,19,21,200,BBB\n\
             2020-01-02,10,11,9,10,100,AAA\n"
        );
        let f = write_csv(&csv);
        let (a, ra) = load_ohlcv(f.path(), &CsvSchema::default()).unwrap();
        let (b, rb) = load_ohlcv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.symbols(), b.symbols());
        assert_eq!(a.calendar(), b.calendar());
        for s in 0..a.symbols().len() {
            for d in 0..a.day_count() {
                assert_eq!(a.bar(s, d), b.bar(s, d));
            }
        }
    }

    #[test]
    fn custom_schema_mapping() {
        let csv = "Date,O,H,L,C,Vol,symbol\n2020-01-02,10,11,9,10,100,AAA\n";
        let f = write_csv(csv);
        let schema = CsvSchema {
            date: "Date".into(),
            open: "O".into(),
            high: "H".into(),
            low: "L".into(),
            close: "C".into(),
            volume: "Vol".into(),
            symbol: "symbol".into(),
            date_format: "%Y-%m-%d".into(),
        };
        let (table, _) = load_ohlcv(f.path(), &schema).unwrap();
        assert_eq!(table.symbols(), &["AAA".to_string()]);
    }
}
