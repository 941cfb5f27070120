//! Market data: per-asset OHLCV CSV ingestion, date alignment, simple returns
//! and train/trade splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];
pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Rows prepended to a trade slice so every indicator is defined on its first day.
pub const DEFAULT_WARMUP: usize = 60;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing data file for asset {asset}: {}", path.display())]
    MissingAsset { asset: String, path: PathBuf },
    #[error("{}:{line}: {message}", file.display())]
    MalformedRow {
        file: PathBuf,
        line: u64,
        message: String,
    },
    #[error("assets share no common trading dates")]
    EmptyIntersection,
    #[error("{asset} on {date}: {message}")]
    InvariantViolation {
        asset: String,
        date: NaiveDate,
        message: String,
    },
    #[error("series too short: {len} rows, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("{slice} range selects no rows")]
    EmptySlice { slice: &'static str },
    #[error("invalid universe: {0}")]
    InvalidUniverse(String),
    #[error("panel shape mismatch: {0}")]
    Shape(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Inclusive calendar date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseSpec {
    pub existing: Vec<String>,
    pub extended: Vec<String>,
    pub train_range: DateRange,
    pub trade_range: DateRange,
}

impl UniverseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.existing.is_empty() {
            return Err(DataError::InvalidUniverse("existing universe is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for a in self.existing.iter().chain(&self.extended) {
            if !seen.insert(a.as_str()) {
                return Err(DataError::InvalidUniverse(format!(
                    "asset {a} listed more than once (existing and extended must be disjoint)"
                )));
            }
        }
        if self.train_range.start > self.train_range.end || self.trade_range.start > self.trade_range.end
        {
            return Err(DataError::InvalidUniverse("date range with start after end".into()));
        }
        if self.train_range.end >= self.trade_range.start {
            return Err(DataError::InvalidUniverse(
                "train range must end strictly before the trade range begins".into(),
            ));
        }
        Ok(())
    }
}

/// Aligned OHLCV prices. Each field matrix is row-major `[T x n_assets]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub open: Vec<f64>,
    pub high: Vec<f64>,
    pub low: Vec<f64>,
    pub close: Vec<f64>,
    pub volume: Vec<f64>,
}

impl PricePanel {
    /// Builds a panel and checks every invariant.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        open: Vec<f64>,
        high: Vec<f64>,
        low: Vec<f64>,
        close: Vec<f64>,
        volume: Vec<f64>,
    ) -> Result<Self> {
        let panel = Self {
            dates,
            assets,
            open,
            high,
            low,
            close,
            volume,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    #[inline]
    fn idx(&self, t: usize, i: usize) -> usize {
        t * self.assets.len() + i
    }

    pub fn close_at(&self, t: usize, i: usize) -> f64 {
        self.close[self.idx(t, i)]
    }

    /// `[open, high, low, close, volume]` of asset `i` at row `t`.
    pub fn bar(&self, t: usize, i: usize) -> [f64; 5] {
        let k = self.idx(t, i);
        [self.open[k], self.high[k], self.low[k], self.close[k], self.volume[k]]
    }

    fn column(field: &[f64], n: usize, i: usize) -> Vec<f64> {
        field.iter().skip(i).step_by(n).copied().collect()
    }

    pub fn close_series(&self, i: usize) -> Vec<f64> {
        Self::column(&self.close, self.n_assets(), i)
    }

    pub fn high_series(&self, i: usize) -> Vec<f64> {
        Self::column(&self.high, self.n_assets(), i)
    }

    pub fn low_series(&self, i: usize) -> Vec<f64> {
        Self::column(&self.low, self.n_assets(), i)
    }

    /// Rows `[start, end)` as a new panel.
    pub fn rows(&self, start: usize, end: usize) -> PricePanel {
        let n = self.n_assets();
        let cut = |v: &Vec<f64>| v[start * n..end * n].to_vec();
        PricePanel {
            dates: self.dates[start..end].to_vec(),
            assets: self.assets.clone(),
            open: cut(&self.open),
            high: cut(&self.high),
            low: cut(&self.low),
            close: cut(&self.close),
            volume: cut(&self.volume),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.dates.len() * self.assets.len();
        for (name, field) in [
            ("open", &self.open),
            ("high", &self.high),
            ("low", &self.low),
            ("close", &self.close),
            ("volume", &self.volume),
        ] {
            if field.len() != cells {
                return Err(DataError::Shape(format!(
                    "{name} has {} cells, expected {cells}",
                    field.len()
                )));
            }
        }
        for w in self.dates.windows(2) {
            if w[1] <= w[0] {
                return Err(DataError::InvariantViolation {
                    asset: self.assets.first().cloned().unwrap_or_default(),
                    date: w[1],
                    message: "dates not strictly increasing".into(),
                });
            }
        }
        for t in 0..self.len() {
            for (i, asset) in self.assets.iter().enumerate() {
                check_bar(asset, self.dates[t], self.bar(t, i))?;
            }
        }
        Ok(())
    }
}

fn check_bar(asset: &str, date: NaiveDate, [o, h, l, c, v]: [f64; 5]) -> Result<()> {
    let fail = |message: String| {
        Err(DataError::InvariantViolation {
            asset: asset.to_string(),
            date,
            message,
        })
    };
    if ![o, h, l, c, v].iter().all(|x| x.is_finite()) {
        return fail("non-finite value".into());
    }
    if o <= 0.0 || h <= 0.0 || l <= 0.0 || c <= 0.0 {
        return fail("prices must be positive".into());
    }
    if v < 0.0 {
        return fail(format!("negative volume {v}"));
    }
    if l > o.min(c) {
        return fail(format!("low {l} above min(open, close)"));
    }
    if h < o.max(c) {
        return fail(format!("high {h} below max(open, close)"));
    }
    if h < l {
        return fail(format!("high {h} below low {l}"));
    }
    Ok(())
}

/// Simple returns of consecutive closes, dated by the later date of each pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    /// Row-major `[T-1 x n_assets]`.
    pub returns: Vec<f64>,
}

impl ReturnPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Return row `k`: the move from price row `k` to price row `k + 1`.
    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.n_assets();
        &self.returns[k * n..(k + 1) * n]
    }

    pub fn at(&self, k: usize, i: usize) -> f64 {
        self.returns[k * self.n_assets() + i]
    }
}

pub fn compute_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    if panel.len() < 2 {
        return Err(DataError::TooShort {
            len: panel.len(),
            needed: 2,
        });
    }
    let n = panel.n_assets();
    let mut returns = Vec::with_capacity((panel.len() - 1) * n);
    for t in 0..panel.len() - 1 {
        for i in 0..n {
            returns.push(panel.close_at(t + 1, i) / panel.close_at(t, i) - 1.0);
        }
    }
    Ok(ReturnPanel {
        dates: panel.dates[1..].to_vec(),
        assets: panel.assets.clone(),
        returns,
    })
}

type Bar = [f64; 5];

struct AssetFile {
    /// `None` marks a row with at least one missing field.
    rows: BTreeMap<NaiveDate, Option<Bar>>,
}

fn asset_path(dir: &Path, asset: &str) -> PathBuf {
    dir.join(format!("{asset}.csv"))
}

fn read_asset(dir: &Path, asset: &str) -> Result<AssetFile> {
    let path = asset_path(dir, asset);
    if !path.is_file() {
        return Err(DataError::MissingAsset {
            asset: asset.to_string(),
            path,
        });
    }
    let text = fs::read_to_string(&path).map_err(|source| DataError::Io {
        path: path.clone(),
        source,
    })?;
    let malformed = |line: u64, message: String| DataError::MalformedRow {
        file: path.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(malformed(
            1,
            format!("expected header {}", CSV_HEADER.join(",")),
        ));
    }
    let mut rows = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT)
            .map_err(|e| malformed(line, format!("bad date {:?}: {e}", &record[0])))?;
        let mut bar = [0.0; 5];
        let mut complete = true;
        for (k, slot) in bar.iter_mut().enumerate() {
            let field = &record[k + 1];
            if field.is_empty() {
                complete = false;
                continue;
            }
            *slot = field.parse::<f64>().map_err(|_| {
                malformed(line, format!("cannot parse {} value {field:?}", CSV_HEADER[k + 1]))
            })?;
        }
        if rows.insert(date, complete.then_some(bar)).is_some() {
            return Err(DataError::InvariantViolation {
                asset: asset.to_string(),
                date,
                message: "duplicate date".into(),
            });
        }
    }
    Ok(AssetFile { rows })
}

/// Loads several groups of assets and inner-joins all of them on the dates where
/// every asset has a complete row. Returns one panel per group, in order.
pub fn load_groups(dir: &Path, groups: &[&[String]]) -> Result<Vec<PricePanel>> {
    let mut files: Vec<Vec<AssetFile>> = Vec::with_capacity(groups.len());
    for group in groups {
        files.push(
            group
                .iter()
                .map(|a| read_asset(dir, a))
                .collect::<Result<_>>()?,
        );
    }
    let all: Vec<&AssetFile> = files.iter().flatten().collect();
    let Some(first) = all.first() else {
        return Err(DataError::EmptyIntersection);
    };
    let dates: Vec<NaiveDate> = first
        .rows
        .keys()
        .copied()
        .filter(|d| {
            all.iter()
                .all(|f| matches!(f.rows.get(d), Some(Some(_))))
        })
        .collect();
    if dates.is_empty() {
        return Err(DataError::EmptyIntersection);
    }
    groups
        .iter()
        .zip(&files)
        .map(|(names, group_files)| {
            let n = names.len();
            let mut fields = vec![Vec::with_capacity(dates.len() * n); 5];
            for d in &dates {
                for f in group_files {
                    let bar = f.rows[d].expect("joined dates are complete");
                    for (field, v) in fields.iter_mut().zip(bar) {
                        field.push(v);
                    }
                }
            }
            let mut it = fields.into_iter();
            let mut next = || it.next().unwrap_or_default();
            PricePanel::new(
                dates.clone(),
                names.to_vec(),
                next(),
                next(),
                next(),
                next(),
                next(),
            )
        })
        .collect()
}

/// Loads the existing and extended universes, aligned on their common dates.
pub fn load_panel(dir: &Path, spec: &UniverseSpec) -> Result<(PricePanel, PricePanel)> {
    spec.validate()?;
    let mut panels = load_groups(dir, &[&spec.existing, &spec.extended])?;
    let extended = panels.pop().expect("two groups");
    let existing = panels.pop().expect("two groups");
    Ok((existing, extended))
}

/// Writes one CSV per asset in the loader's format. Values use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_panel(dir: &Path, panel: &PricePanel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (i, asset) in panel.assets.iter().enumerate() {
        let path = asset_path(dir, asset);
        let mut out = String::from("date,open,high,low,close,volume\n");
        for t in 0..panel.len() {
            let [o, h, l, c, v] = panel.bar(t, i);
            out.push_str(&format!(
                "{},{o},{h},{l},{c},{v}\n",
                panel.dates[t].format(DATE_FORMAT)
            ));
        }
        fs::write(&path, out).map_err(|source| DataError::Io { path, source })?;
    }
    Ok(())
}

/// Rows whose date falls inside `range`.
pub fn slice_range(panel: &PricePanel, range: &DateRange, slice: &'static str) -> Result<PricePanel> {
    let start = panel.dates.partition_point(|d| *d < range.start);
    let end = panel.dates.partition_point(|d| *d <= range.end);
    if start >= end {
        return Err(DataError::EmptySlice { slice });
    }
    Ok(panel.rows(start, end))
}

/// A trade slice with its warm-up prefix. Rows before `measured_from` only feed
/// indicators and are excluded from performance measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeSlice {
    pub panel: PricePanel,
    pub measured_from: usize,
}

/// Partitions `panel` into the train slice and the trade slice. The trade slice
/// is prefixed with up to `warmup` rows taken from the end of the train slice.
pub fn split(panel: &PricePanel, spec: &UniverseSpec, warmup: usize) -> Result<(PricePanel, TradeSlice)> {
    let train = slice_range(panel, &spec.train_range, "train")?;
    let trade_start = panel.dates.partition_point(|d| *d < spec.trade_range.start);
    let trade_end = panel.dates.partition_point(|d| *d <= spec.trade_range.end);
    if trade_start >= trade_end {
        return Err(DataError::EmptySlice { slice: "trade" });
    }
    let train_end = panel.dates.partition_point(|d| *d <= spec.train_range.end);
    let prefix = warmup.min(train.len());
    let warm_start = train_end - prefix;
    let mut trade = panel.rows(warm_start, train_end);
    let body = panel.rows(trade_start, trade_end);
    append_rows(&mut trade, &body);
    Ok((
        train,
        TradeSlice {
            panel: trade,
            measured_from: prefix,
        },
    ))
}

fn append_rows(dst: &mut PricePanel, src: &PricePanel) {
    dst.dates.extend_from_slice(&src.dates);
    dst.open.extend_from_slice(&src.open);
    dst.high.extend_from_slice(&src.high);
    dst.low.extend_from_slice(&src.low);
    dst.close.extend_from_slice(&src.close);
    dst.volume.extend_from_slice(&src.volume);
}

/// The same row selection applied to a second panel that shares the date index.
pub fn align_rows(reference: &PricePanel, other: &PricePanel) -> Result<PricePanel> {
    let mut idx = Vec::with_capacity(reference.len());
    for d in &reference.dates {
        match other.dates.binary_search(d) {
            Ok(k) => idx.push(k),
            Err(_) => {
                return Err(DataError::Shape(format!(
                    "date {d} missing from panel {:?}",
                    other.assets
                )))
            }
        }
    }
    let n = other.n_assets();
    let pick = |v: &Vec<f64>| {
        idx.iter()
            .flat_map(|&k| v[k * n..(k + 1) * n].iter().copied())
            .collect::<Vec<_>>()
    };
    Ok(PricePanel {
        dates: reference.dates.clone(),
        assets: other.assets.clone(),
        open: pick(&other.open),
        high: pick(&other.high),
        low: pick(&other.low),
        close: pick(&other.close),
        volume: pick(&other.volume),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
    }

    fn write(dir: &Path, asset: &str, body: &str) {
        fs::write(
            dir.join(format!("{asset}.csv")),
            format!("date,open,high,low,close,volume\n{body}"),
        )
        .unwrap();
    }

    fn rows(dates: &[&str]) -> String {
        dates
            .iter()
            .map(|x| format!("{x},10,11,9,10.5,1000\n"))
            .collect()
    }

    fn spec(existing: &[&str], extended: &[&str]) -> UniverseSpec {
        UniverseSpec {
            existing: existing.iter().map(|s| s.to_string()).collect(),
            extended: extended.iter().map(|s| s.to_string()).collect(),
            train_range: DateRange::new(d("2020-01-01"), d("2020-01-03")),
            trade_range: DateRange::new(d("2020-01-04"), d("2020-12-31")),
        }
    }

    const FIVE: [&str; 5] = ["2020-01-01", "2020-01-02", "2020-01-03", "2020-01-06", "2020-01-07"];

    #[test]
    fn identical_dates_align_to_full_length() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "A", &rows(&FIVE));
        write(dir.path(), "B", &rows(&FIVE));
        let (ex, ext) = load_panel(dir.path(), &spec(&["A"], &["B"])).unwrap();
        assert_eq!(ex.len(), 5);
        assert_eq!(ext.len(), 5);
    }

    #[test]
    fn alignment_is_an_intersection() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "A", &rows(&FIVE));
        write(dir.path(), "B", &rows(&FIVE[1..]));
        let (ex, _) = load_panel(dir.path(), &spec(&["A", "B"], &[])).unwrap();
        assert_eq!(ex.len(), 4);
        assert_eq!(ex.dates[0], d("2020-01-02"));
    }

    #[test]
    fn rows_with_missing_fields_are_dropped_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = rows(&FIVE);
        a = a.replace("2020-01-03,10,11,9,10.5,1000", "2020-01-03,10,,9,10.5,1000");
        write(dir.path(), "A", &a);
        write(dir.path(), "B", &rows(&FIVE));
        let (ex, ext) = load_panel(dir.path(), &spec(&["A"], &["B"])).unwrap();
        assert_eq!(ex.len(), 4);
        assert!(!ext.dates.contains(&d("2020-01-03")));
    }

    #[test]
    fn high_below_low_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "A", "2020-01-01,9.5,9,10,9.5,100\n");
        match load_panel(dir.path(), &spec(&["A"], &[])) {
            Err(DataError::InvariantViolation { asset, date, .. }) => {
                assert_eq!(asset, "A");
                assert_eq!(date, d("2020-01-01"));
            }
            other => panic!("expected InvariantViolation, got {other:?}"),
        }
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_panel(dir.path(), &spec(&["A"], &[])),
            Err(DataError::MissingAsset { .. })
        ));
        write(dir.path(), "A", "2020-01-01,10,11,9,abc,100\n");
        match load_panel(dir.path(), &spec(&["A"], &[])) {
            Err(DataError::MalformedRow { line, file, .. }) => {
                assert_eq!(line, 2);
                assert!(file.ends_with("A.csv"));
            }
            other => panic!("{other:?}"),
        }
        write(dir.path(), "A", &rows(&FIVE[..2]));
        write(dir.path(), "B", &rows(&FIVE[3..]));
        assert!(matches!(
            load_panel(dir.path(), &spec(&["A"], &["B"])),
            Err(DataError::EmptyIntersection)
        ));
    }

    #[test]
    fn overlapping_universes_rejected() {
        let s = spec(&["A"], &["A"]);
        assert!(matches!(s.validate(), Err(DataError::InvalidUniverse(_))));
    }

    fn closes_panel(closes: &[f64]) -> PricePanel {
        let dates: Vec<NaiveDate> = (0..closes.len())
            .map(|k| d("2020-01-01") + chrono::Days::new(k as u64))
            .collect();
        PricePanel::new(
            dates,
            vec!["A".into()],
            closes.to_vec(),
            closes.to_vec(),
            closes.to_vec(),
            closes.to_vec(),
            vec![1.0; closes.len()],
        )
        .unwrap()
    }

    #[test]
    fn returns_examples() {
        let r = compute_returns(&closes_panel(&[100.0, 110.0])).unwrap();
        assert!((r.returns[0] - 0.10).abs() < 1e-15);
        let r = compute_returns(&closes_panel(&[50.0, 50.0, 50.0])).unwrap();
        assert_eq!(r.returns, vec![0.0, 0.0]);
        let r = compute_returns(&closes_panel(&[100.0, 90.0, 99.0])).unwrap();
        // 90/100 - 1 and 99/90 - 1 by hand
        assert!((r.returns[0] + 0.10).abs() < 1e-15);
        assert!((r.returns[1] - 0.10).abs() < 1e-15);
        assert_eq!(r.dates[0], d("2020-01-02"));
        assert!(matches!(
            compute_returns(&closes_panel(&[1.0])),
            Err(DataError::TooShort { .. })
        ));
    }

    fn hundred_panel() -> PricePanel {
        closes_panel(&(0..100).map(|k| 100.0 + k as f64).collect::<Vec<_>>())
    }

    #[test]
    fn split_prepends_warmup() {
        let p = hundred_panel();
        let s = UniverseSpec {
            existing: vec!["A".into()],
            extended: vec![],
            train_range: DateRange::new(p.dates[0], p.dates[69]),
            trade_range: DateRange::new(p.dates[70], p.dates[99]),
        };
        let (train, trade) = split(&p, &s, 60).unwrap();
        assert_eq!(train.len(), 70);
        assert_eq!(trade.panel.len(), 90);
        assert_eq!(trade.measured_from, 60);
        assert_eq!(trade.panel.len() - trade.measured_from, 30);
        assert_eq!(trade.panel.dates[0], p.dates[10]);
    }

    #[test]
    fn split_empty_slices() {
        let p = hundred_panel();
        let last = p.dates[99];
        let s = UniverseSpec {
            existing: vec!["A".into()],
            extended: vec![],
            train_range: DateRange::new(p.dates[0], last),
            trade_range: DateRange::new(last + chrono::Days::new(1), last + chrono::Days::new(30)),
        };
        assert_eq!(slice_range(&p, &s.train_range, "train").unwrap(), p);
        assert!(matches!(
            split(&p, &s, 60),
            Err(DataError::EmptySlice { slice: "trade" })
        ));
    }
}
