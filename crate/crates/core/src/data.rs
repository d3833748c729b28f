//! Price ingestion, simple returns, date splits, market-cap portfolios and
//! synthetic markets.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::ops::Range;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base level synthetic price paths start from.
pub const SYNTH_BASE_PRICE: f64 = 100.0;

/// Floor applied to synthetic simple returns so that rebuilt prices stay positive.
const SYNTH_MIN_RETURN: f64 = -0.99;

/// Dense date × ticker table of adjusted closes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    prices: Vec<f64>,
}

impl PriceTable {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, prices: Vec<f64>) -> Result<Self> {
        check_dates(&dates)?;
        check_tickers(&tickers)?;
        if prices.len() != dates.len() * tickers.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len() * tickers.len(),
                actual: prices.len(),
            });
        }
        for (k, &p) in prices.iter().enumerate() {
            if !p.is_finite() || p <= 0.0 {
                let (t, i) = (k / tickers.len(), k % tickers.len());
                return Err(Error::NonPositivePrice {
                    line: 0,
                    date: dates[t],
                    ticker: tickers[i].clone(),
                    price: p,
                });
            }
        }
        Ok(Self {
            dates,
            tickers,
            prices,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn price(&self, t: usize, i: usize) -> f64 {
        self.prices[t * self.tickers.len() + i]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.tickers.len();
        &self.prices[t * n..(t + 1) * n]
    }
}

/// Simple returns; row `t` holds the return realized on `dates[t]`, i.e. the
/// move from the previous price date into this one.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    returns: Vec<f64>,
}

impl ReturnMatrix {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, returns: Vec<f64>) -> Result<Self> {
        check_dates(&dates)?;
        check_tickers(&tickers)?;
        if returns.len() != dates.len() * tickers.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len() * tickers.len(),
                actual: returns.len(),
            });
        }
        let n = tickers.len().max(1);
        for (k, &r) in returns.iter().enumerate() {
            if r.is_nan() {
                return Err(Error::NonFiniteReturn {
                    row: k / n,
                    asset: k % n,
                });
            }
            if r <= -1.0 || !r.is_finite() {
                return Err(Error::OutOfRange(format!(
                    "return {r} at row {}, asset {} must be finite and > -1",
                    k / n,
                    k % n
                )));
            }
        }
        Ok(Self {
            dates,
            tickers,
            returns,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.returns[t * self.tickers.len() + i]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.tickers.len();
        &self.returns[t * n..(t + 1) * n]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|t| self.get(t, i)).collect()
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    /// Contiguous row slice.
    pub fn slice_rows(&self, rows: Range<usize>) -> Result<Self> {
        if rows.start >= rows.end || rows.end > self.n_rows() {
            return Err(Error::OutOfRange(format!(
                "rows {rows:?} of {}",
                self.n_rows()
            )));
        }
        let n = self.n_assets();
        Ok(Self {
            dates: self.dates[rows.clone()].to_vec(),
            tickers: self.tickers.clone(),
            returns: self.returns[rows.start * n..rows.end * n].to_vec(),
        })
    }

    /// Rows whose dates fall inside `range`, preceded by up to `lookback`
    /// earlier rows so that a policy with a `lookback`-day window can act on
    /// the first in-range date.
    pub fn slice_with_lookback(&self, range: DateRange, lookback: usize) -> Result<Self> {
        let rows = self.rows_in(range);
        if rows.is_empty() {
            return Err(Error::EmptySlice("backtest"));
        }
        if rows.start < lookback {
            return Err(Error::InsufficientData(format!(
                "need {lookback} rows of history before {}, have {}",
                range.start, rows.start
            )));
        }
        self.slice_rows(rows.start - lookback..rows.end)
    }

    /// Column subset in the order given.
    pub fn select_tickers(&self, tickers: &[String]) -> Result<Self> {
        let idx = tickers
            .iter()
            .map(|t| {
                self.ticker_index(t)
                    .ok_or_else(|| Error::OutOfRange(format!("unknown ticker {t}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut returns = Vec::with_capacity(self.n_rows() * idx.len());
        for t in 0..self.n_rows() {
            returns.extend(idx.iter().map(|&i| self.get(t, i)));
        }
        Self::new(self.dates.clone(), tickers.to_vec(), returns)
    }

    fn rows_in(&self, range: DateRange) -> Range<usize> {
        let start = self.dates.partition_point(|d| *d < range.start);
        let end = self.dates.partition_point(|d| *d <= range.end);
        start..end.max(start)
    }
}

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!(
            "dates must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn check_tickers(tickers: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for t in tickers {
        if !seen.insert(t.as_str()) {
            return Err(Error::DuplicateTicker(t.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    date: String,
    ticker: String,
    close: String,
}

/// Reads `date,ticker,close` rows into a dense table. Dates and tickers come
/// out sorted; every (date, ticker) pair must be present exactly once.
pub fn load_prices<R: Read>(source: R) -> Result<PriceTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["date", "ticker", "close"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `date,ticker,close`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut cells: HashMap<(NaiveDate, String), f64> = HashMap::new();
    let mut dates = BTreeSet::new();
    let mut tickers = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: PriceRow = record.deserialize(None).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let date: NaiveDate = row.date.parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{}`: {e}", row.date),
        })?;
        let price: f64 = row.close.parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad price `{}`: {e}", row.close),
        })?;
        if !price.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite price `{}`", row.close),
            });
        }
        if price <= 0.0 {
            return Err(Error::NonPositivePrice {
                line,
                date,
                ticker: row.ticker,
                price,
            });
        }
        if row.ticker.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty ticker".into(),
            });
        }
        dates.insert(date);
        tickers.insert(row.ticker.clone());
        if cells.insert((date, row.ticker.clone()), price).is_some() {
            return Err(Error::DuplicateCell {
                date,
                ticker: row.ticker,
            });
        }
    }

    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let tickers: Vec<String> = tickers.into_iter().collect();
    let mut prices = Vec::with_capacity(dates.len() * tickers.len());
    for &date in &dates {
        for ticker in &tickers {
            match cells.get(&(date, ticker.clone())) {
                Some(&p) => prices.push(p),
                None => {
                    return Err(Error::MissingCell {
                        date,
                        ticker: ticker.clone(),
                    })
                }
            }
        }
    }
    PriceTable::new(dates, tickers, prices)
}

/// Writes the table in the loader's format, date-major.
pub fn write_prices<W: Write>(table: &PriceTable, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["date", "ticker", "close"]).map_err(csv_err)?;
    for (t, date) in table.dates.iter().enumerate() {
        let date = date.to_string();
        for (i, ticker) in table.tickers.iter().enumerate() {
            w.write_record([date.as_str(), ticker.as_str(), &table.price(t, i).to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CapRow {
    ticker: String,
    cap: f64,
}

/// Reads a `ticker,cap` file.
pub fn load_caps<R: Read>(source: R) -> Result<BTreeMap<String, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut caps = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: CapRow = record.deserialize(None).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if !row.cap.is_finite() || row.cap <= 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("market cap for {} must be positive", row.ticker),
            });
        }
        if caps.insert(row.ticker.clone(), row.cap).is_some() {
            return Err(Error::DuplicateTicker(row.ticker));
        }
    }
    Ok(caps)
}

pub fn write_caps<W: Write>(caps: &BTreeMap<String, f64>, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["ticker", "cap"]).map_err(csv_err)?;
    for (ticker, cap) in caps {
        w.write_record([ticker.as_str(), &cap.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `returns[t,i] = prices[t+1,i] / prices[t,i] - 1`, dated at `t+1`.
pub fn compute_returns(p: &PriceTable) -> Result<ReturnMatrix> {
    if p.n_dates() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 dates to compute returns, have {}",
            p.n_dates()
        )));
    }
    let n = p.n_assets();
    let mut returns = Vec::with_capacity((p.n_dates() - 1) * n);
    for t in 0..p.n_dates() - 1 {
        let (now, next) = (p.row(t), p.row(t + 1));
        returns.extend(now.iter().zip(next).map(|(a, b)| b / a - 1.0));
    }
    ReturnMatrix::new(p.dates[1..].to_vec(), p.tickers.clone(), returns)
}

/// Inclusive calendar interval.
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("train", self.train),
            ("validation", self.validation),
            ("test", self.test),
        ] {
            if r.start > r.end {
                return Err(Error::InvalidSplit(format!(
                    "{name} range starts after it ends"
                )));
            }
        }
        if self.train.end >= self.validation.start || self.validation.end >= self.test.start {
            return Err(Error::InvalidSplit(
                "ranges must be disjoint and ordered train < validation < test".into(),
            ));
        }
        Ok(())
    }
}

/// Cuts `r` into train / validation / test row slices by date.
pub fn split(r: &ReturnMatrix, s: &SplitSpec) -> Result<(ReturnMatrix, ReturnMatrix, ReturnMatrix)> {
    s.validate()?;
    let slice = |range: DateRange, name: &'static str| {
        let rows = r.rows_in(range);
        if rows.is_empty() {
            return Err(Error::EmptySlice(name));
        }
        r.slice_rows(rows)
    };
    Ok((
        slice(s.train, "train")?,
        slice(s.validation, "validation")?,
        slice(s.test, "test")?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortfolioKind {
    Big,
    Random,
    Small,
    All,
}

impl PortfolioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PortfolioKind::Big => "big",
            PortfolioKind::Random => "random",
            PortfolioKind::Small => "small",
            PortfolioKind::All => "all",
        }
    }
}

impl std::fmt::Display for PortfolioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PortfolioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "big" => Ok(Self::Big),
            "random" => Ok(Self::Random),
            "small" => Ok(Self::Small),
            "all" => Ok(Self::All),
            other => Err(Error::InvalidConfig(format!("unknown portfolio kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub size: usize,
    pub kind: PortfolioKind,
    pub tickers: Vec<String>,
    pub seed: u64,
}

/// Forms a portfolio from a market-cap universe. Equal caps are ordered by
/// ticker so that selections are total.
pub fn group_by_cap(
    caps: &BTreeMap<String, f64>,
    size: usize,
    kind: PortfolioKind,
    seed: u64,
) -> Result<PortfolioSpec> {
    let universe = caps.len();
    if size > universe {
        return Err(Error::PortfolioTooLarge { size, universe });
    }
    if size == 0 {
        return Err(Error::InvalidConfig("portfolio size must be positive".into()));
    }
    let mut by_cap: Vec<(&String, f64)> = caps.iter().map(|(t, &c)| (t, c)).collect();
    by_cap.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let tickers: Vec<String> = match kind {
        PortfolioKind::Big => by_cap[..size].iter().map(|(t, _)| (*t).clone()).collect(),
        PortfolioKind::Small => by_cap[universe - size..]
            .iter()
            .rev()
            .map(|(t, _)| (*t).clone())
            .collect(),
        PortfolioKind::Random => {
            let names: Vec<&String> = caps.keys().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = index::sample(&mut rng, universe, size).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|k| names[k].clone()).collect()
        }
        PortfolioKind::All => {
            if size != universe {
                return Err(Error::InvalidConfig(format!(
                    "kind `all` needs size equal to the universe ({universe}), got {size}"
                )));
            }
            caps.keys().cloned().collect()
        }
    };
    Ok(PortfolioSpec {
        size,
        kind,
        tickers,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthModel {
    /// Log-price random walk.
    Gbm,
    /// Next-day mean return is `+signal` after an up day and `-signal` otherwise.
    SignFollow,
}

impl std::str::FromStr for SynthModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbm" => Ok(Self::Gbm),
            "sign_follow" => Ok(Self::SignFollow),
            other => Err(Error::InvalidConfig(format!("unknown synthetic model `{other}`"))),
        }
    }
}

/// Parameters of a synthetic market. `drift` and `volatility` drive the gbm
/// log-returns and, for sign_follow, the draw of each asset's first return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub model: SynthModel,
    pub n_assets: usize,
    pub n_days: usize,
    pub drift: f64,
    pub volatility: f64,
    pub signal_strength: f64,
    pub noise_scale: f64,
    pub start: NaiveDate,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            model: SynthModel::SignFollow,
            n_assets: 4,
            n_days: 600,
            drift: 0.0,
            volatility: 0.01,
            signal_strength: 0.01,
            noise_scale: 0.0,
            start: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_assets < 2 {
            return Err(Error::InvalidConfig(format!(
                "need ≥ 2 assets, got {}",
                self.n_assets
            )));
        }
        if self.n_days < 2 {
            return Err(Error::InvalidConfig(format!(
                "need ≥ 2 days, got {}",
                self.n_days
            )));
        }
        let finite = [self.drift, self.volatility, self.signal_strength, self.noise_scale]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("synthetic parameters must be finite".into()));
        }
        if self.volatility < 0.0 || self.noise_scale < 0.0 {
            return Err(Error::InvalidConfig(
                "volatility and noise_scale must be ≥ 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.signal_strength) {
            return Err(Error::InvalidConfig(
                "signal_strength must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn tickers(&self) -> Vec<String> {
        (0..self.n_assets).map(|i| format!("S{i:03}")).collect()
    }
}

/// Consecutive weekdays starting at `start` (rolled forward off a weekend).
pub fn weekday_calendar(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Generates a price table on a weekday calendar. Identical `(spec, seed)`
/// pairs produce bit-identical tables.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<PriceTable> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_assets;
    let steps = spec.n_days - 1;
    let mut returns = vec![0.0; steps * n];

    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    match spec.model {
        SynthModel::Gbm => {
            for r in returns.iter_mut() {
                let log_ret = spec.drift + spec.volatility * normal();
                *r = log_ret.exp_m1();
            }
        }
        SynthModel::SignFollow => {
            for i in 0..n {
                returns[i] = spec.drift + spec.volatility * normal();
            }
            for t in 1..steps {
                for i in 0..n {
                    let prev = returns[(t - 1) * n + i];
                    let mean = if prev > 0.0 {
                        spec.signal_strength
                    } else {
                        -spec.signal_strength
                    };
                    returns[t * n + i] = mean + spec.noise_scale * normal();
                }
            }
        }
    }

    let mut prices = Vec::with_capacity(spec.n_days * n);
    prices.extend(std::iter::repeat_n(SYNTH_BASE_PRICE, n));
    for t in 0..steps {
        for i in 0..n {
            let r = returns[t * n + i].max(SYNTH_MIN_RETURN);
            let next = prices[t * n + i] * (1.0 + r);
            prices.push(next);
        }
    }
    PriceTable::new(weekday_calendar(spec.start, spec.n_days), spec.tickers(), prices)
}

/// Log-normally distributed market caps for a synthetic universe.
pub fn synthetic_caps(tickers: &[String], seed: u64) -> BTreeMap<String, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6361_7073);
    tickers
        .iter()
        .map(|t| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (t.clone(), (23.0 + 1.5 * z).exp().round().max(1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn loads_minimal_table() {
        let csv = "date,ticker,close\n2020-01-02,A,100\n2020-01-03,A,110\n";
        let p = load_prices(csv.as_bytes()).unwrap();
        assert_eq!(p.n_dates(), 2);
        assert_eq!(p.n_assets(), 1);
        assert_eq!(p.price(1, 0), 110.0);
    }

    #[test]
    fn loader_sorts_unordered_rows() {
        let csv = "date,ticker,close\n2020-01-03,B,2\n2020-01-02,A,1\n2020-01-03,A,3\n2020-01-02,B,4\n";
        let p = load_prices(csv.as_bytes()).unwrap();
        assert_eq!(p.dates(), &[d("2020-01-02"), d("2020-01-03")]);
        assert_eq!(p.tickers(), &["A".to_string(), "B".to_string()]);
        assert_eq!(p.row(0), &[1.0, 4.0]);
        assert_eq!(p.row(1), &[3.0, 2.0]);
    }

    #[test]
    fn rejects_non_positive_price() {
        let csv = "date,ticker,close\n2020-01-02,A,100\n2020-01-03,A,-5\n";
        let err = load_prices(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::NonPositivePrice { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("non-positive price"));
    }

    #[test]
    fn rejects_missing_cell() {
        let csv = "date,ticker,close\n\
                   2020-01-02,A,1\n2020-01-02,B,1\n\
                   2020-01-03,A,1\n\
                   2020-01-06,A,1\n2020-01-06,B,1\n";
        match load_prices(csv.as_bytes()).unwrap_err() {
            Error::MissingCell { date, ticker } => {
                assert_eq!(date, d("2020-01-03"));
                assert_eq!(ticker, "B");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_duplicate_cell() {
        let csv = "date,ticker,close\n2020-01-02,A,1\n2020-01-02,A,2\n";
        assert!(matches!(
            load_prices(csv.as_bytes()).unwrap_err(),
            Error::DuplicateCell { .. }
        ));
    }

    #[test]
    fn reports_line_of_unparseable_row() {
        let csv = "date,ticker,close\n2020-01-02,A,1\n2020-13-02,A,2\n";
        let err = load_prices(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let csv = "date,ticker,close\n2020-01-02,A,1\n2020-01-03,A,abc\n";
        assert!(matches!(
            load_prices(csv.as_bytes()).unwrap_err(),
            Error::Parse { line: 3, .. }
        ));
    }

    #[test]
    fn rejects_wrong_header() {
        let csv = "day,ticker,close\n2020-01-02,A,1\n";
        assert!(matches!(
            load_prices(csv.as_bytes()).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    fn single_column(prices: &[f64]) -> PriceTable {
        let dates = weekday_calendar(d("2020-01-01"), prices.len());
        PriceTable::new(dates, vec!["A".into()], prices.to_vec()).unwrap()
    }

    #[test]
    fn simple_returns() {
        let r = compute_returns(&single_column(&[100.0, 110.0, 99.0])).unwrap();
        assert_eq!(r.n_rows(), 2);
        assert!((r.get(0, 0) - 0.10).abs() < 1e-15);
        assert!((r.get(1, 0) + 0.10).abs() < 1e-15);

        let r = compute_returns(&single_column(&[50.0, 50.0, 50.0])).unwrap();
        assert_eq!(r.column(0), vec![0.0, 0.0]);
    }

    #[test]
    fn returns_need_two_dates() {
        assert!(matches!(
            compute_returns(&single_column(&[100.0])).unwrap_err(),
            Error::InsufficientData(_)
        ));
    }

    fn ten_rows() -> ReturnMatrix {
        let dates = weekday_calendar(d("2021-03-01"), 10);
        ReturnMatrix::new(dates, vec!["A".into()], (0..10).map(|k| k as f64 / 100.0).collect())
            .unwrap()
    }

    #[test]
    fn split_sizes() {
        let r = ten_rows();
        let ds = r.dates().to_vec();
        let s = SplitSpec {
            train: DateRange::new(ds[0], ds[5]),
            validation: DateRange::new(ds[6], ds[7]),
            test: DateRange::new(ds[8], ds[9]),
        };
        let (a, b, c) = split(&r, &s).unwrap();
        assert_eq!((a.n_rows(), b.n_rows(), c.n_rows()), (6, 2, 2));
        assert_eq!(c.get(1, 0), 0.09);
    }

    #[test]
    fn split_outside_data_is_empty() {
        let r = ten_rows();
        let ds = r.dates().to_vec();
        let s = SplitSpec {
            train: DateRange::new(ds[0], ds[5]),
            validation: DateRange::new(ds[6], ds[9]),
            test: DateRange::new(d("2030-01-01"), d("2030-12-31")),
        };
        assert!(matches!(split(&r, &s).unwrap_err(), Error::EmptySlice("test")));
    }

    #[test]
    fn split_rejects_overlap() {
        let r = ten_rows();
        let ds = r.dates().to_vec();
        let s = SplitSpec {
            train: DateRange::new(ds[0], ds[6]),
            validation: DateRange::new(ds[6], ds[7]),
            test: DateRange::new(ds[8], ds[9]),
        };
        assert!(matches!(split(&r, &s).unwrap_err(), Error::InvalidSplit(_)));
    }

    fn caps() -> BTreeMap<String, f64> {
        [("A", 5.0), ("B", 1.0), ("C", 9.0), ("D", 3.0)]
            .into_iter()
            .map(|(t, c)| (t.to_string(), c))
            .collect()
    }

    #[test]
    fn cap_groups() {
        let big = group_by_cap(&caps(), 2, PortfolioKind::Big, 0).unwrap();
        assert_eq!(big.tickers, vec!["C", "A"]);
        let small = group_by_cap(&caps(), 2, PortfolioKind::Small, 0).unwrap();
        assert_eq!(small.tickers, vec!["B", "D"]);
        let all = group_by_cap(&caps(), 4, PortfolioKind::All, 0).unwrap();
        assert_eq!(all.tickers.len(), 4);
        assert!(group_by_cap(&caps(), 3, PortfolioKind::All, 0).is_err());
        assert!(matches!(
            group_by_cap(&caps(), 5, PortfolioKind::Big, 0).unwrap_err(),
            Error::PortfolioTooLarge { size: 5, universe: 4 }
        ));
    }

    #[test]
    fn random_group_is_seed_deterministic() {
        let a = group_by_cap(&caps(), 2, PortfolioKind::Random, 17).unwrap();
        let b = group_by_cap(&caps(), 2, PortfolioKind::Random, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tickers.len(), 2);
        assert!(a.tickers.iter().all(|t| caps().contains_key(t)));
    }

    #[test]
    fn noiseless_sign_follow_keeps_sign() {
        let spec = SynthSpec {
            n_assets: 5,
            n_days: 200,
            ..SynthSpec::default()
        };
        let r = compute_returns(&gen_synthetic(&spec, 3).unwrap()).unwrap();
        for i in 0..r.n_assets() {
            for t in 1..r.n_rows() {
                assert_eq!(r.get(t, i) > 0.0, r.get(t - 1, i) > 0.0);
                assert!((r.get(t, i).abs() - 0.01).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_volatility_gbm_is_pure_drift() {
        let spec = SynthSpec {
            model: SynthModel::Gbm,
            drift: 0.002,
            volatility: 0.0,
            n_days: 50,
            ..SynthSpec::default()
        };
        let r = compute_returns(&gen_synthetic(&spec, 1).unwrap()).unwrap();
        let expected = 0.002f64.exp() - 1.0;
        for t in 0..r.n_rows() {
            for i in 0..r.n_assets() {
                assert!((r.get(t, i) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synth_rejects_single_asset() {
        let spec = SynthSpec {
            n_assets: 1,
            ..SynthSpec::default()
        };
        let err = gen_synthetic(&spec, 0).unwrap_err();
        assert!(err.to_string().contains("need ≥ 2 assets"));
    }

    #[test]
    fn calendar_skips_weekends() {
        let cal = weekday_calendar(d("2021-06-26"), 3);
        assert_eq!(cal, vec![d("2021-06-28"), d("2021-06-29"), d("2021-06-30")]);
    }

    #[test]
    fn select_and_lookback_slices() {
        let dates = weekday_calendar(d("2020-01-01"), 6);
        let r = ReturnMatrix::new(
            dates.clone(),
            vec!["A".into(), "B".into()],
            (0..12).map(|k| k as f64 / 100.0).collect(),
        )
        .unwrap();
        let b = r.select_tickers(&["B".to_string()]).unwrap();
        assert_eq!(b.column(0), vec![0.01, 0.03, 0.05, 0.07, 0.09, 0.11]);
        let s = r
            .slice_with_lookback(DateRange::new(dates[3], dates[5]), 2)
            .unwrap();
        assert_eq!(s.dates(), &dates[1..]);
        assert!(r
            .slice_with_lookback(DateRange::new(dates[1], dates[5]), 2)
            .is_err());
    }
}
