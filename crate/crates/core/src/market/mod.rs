//! OHLC bars, fixed-length windows and the eight candlestick pattern labels.
//!
//! Real bars come in through [`load_ohlc_csv`]; labeled synthetic windows
//! come from [`generate`]. The rule predicates that define each pattern live
//! in [`patterns`].

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod generate;
pub mod patterns;

pub use generate::{
    build_dataset, generate_pattern, read_archive, write_archive, Dataset, GeneratorConfig,
};
pub use patterns::validate_pattern;

/// Default window length in bars.
pub const WINDOW_LEN: usize = 10;

/// One candlestick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OhlcBar {
    pub timestamp: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcBar {
    pub fn new(timestamp: i64, open: f64, high: f64, low: f64, close: f64) -> Result<Self> {
        let bar = OhlcBar {
            timestamp,
            open,
            high,
            low,
            close,
        };
        match bar.violation() {
            Some(reason) => Err(Error::InvariantViolation { row: 0, reason }),
            None => Ok(bar),
        }
    }

    /// Describes the first broken bar invariant, if any.
    pub fn violation(&self) -> Option<String> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Some(format!("prices must be finite and positive: {prices:?}"));
        }
        if self.low > self.high {
            return Some(format!("low {} above high {}", self.low, self.high));
        }
        if self.low > self.open.min(self.close) {
            return Some(format!("low {} above body bottom", self.low));
        }
        if self.high < self.open.max(self.close) {
            return Some(format!("high {} below body top", self.high));
        }
        None
    }

    pub fn body(&self) -> f64 {
        (self.close - self.open).abs()
    }

    pub fn body_top(&self) -> f64 {
        self.open.max(self.close)
    }

    pub fn body_bottom(&self) -> f64 {
        self.open.min(self.close)
    }

    pub fn body_mid(&self) -> f64 {
        0.5 * (self.open + self.close)
    }

    pub fn upper_shadow(&self) -> f64 {
        self.high - self.body_top()
    }

    pub fn lower_shadow(&self) -> f64 {
        self.body_bottom() - self.low
    }

    /// Rising candle.
    pub fn is_white(&self) -> bool {
        self.close > self.open
    }

    /// Falling candle.
    pub fn is_black(&self) -> bool {
        self.close < self.open
    }
}

/// Consecutive bars with strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    bars: Vec<OhlcBar>,
}

impl Window {
    pub fn new(bars: Vec<OhlcBar>) -> Result<Self> {
        if bars.is_empty() {
            return Err(Error::InvalidWindow("no bars".into()));
        }
        for (i, bar) in bars.iter().enumerate() {
            if let Some(reason) = bar.violation() {
                return Err(Error::InvalidWindow(format!("bar {i}: {reason}")));
            }
        }
        if let Some(i) = bars
            .windows(2)
            .position(|p| p[1].timestamp <= p[0].timestamp)
        {
            return Err(Error::InvalidWindow(format!(
                "timestamps not strictly increasing at bar {}",
                i + 1
            )));
        }
        Ok(Window { bars })
    }

    /// Like [`Window::new`] but also requires exactly `len` bars.
    pub fn with_len(bars: Vec<OhlcBar>, len: usize) -> Result<Self> {
        if bars.len() != len {
            return Err(Error::InvalidWindow(format!(
                "expected {len} bars, got {}",
                bars.len()
            )));
        }
        Window::new(bars)
    }

    pub fn bars(&self) -> &[OhlcBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn opens(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.open).collect()
    }

    pub fn highs(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.high).collect()
    }

    pub fn lows(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.low).collect()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    /// The four price series in channel order: open, high, low, close.
    pub fn series(&self) -> [Vec<f64>; 4] {
        [self.opens(), self.highs(), self.lows(), self.closes()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternClass {
    MorningStar,
    EveningStar,
    BullishEngulfing,
    BearishEngulfing,
    ShootingStar,
    InvertedHammer,
    BullishHarami,
    BearishHarami,
}

pub const NUM_CLASSES: usize = 8;

impl PatternClass {
    pub const ALL: [PatternClass; NUM_CLASSES] = [
        PatternClass::MorningStar,
        PatternClass::EveningStar,
        PatternClass::BullishEngulfing,
        PatternClass::BearishEngulfing,
        PatternClass::ShootingStar,
        PatternClass::InvertedHammer,
        PatternClass::BullishHarami,
        PatternClass::BearishHarami,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PatternClass::MorningStar => "morning_star",
            PatternClass::EveningStar => "evening_star",
            PatternClass::BullishEngulfing => "bullish_engulfing",
            PatternClass::BearishEngulfing => "bearish_engulfing",
            PatternClass::ShootingStar => "shooting_star",
            PatternClass::InvertedHammer => "inverted_hammer",
            PatternClass::BullishHarami => "bullish_harami",
            PatternClass::BearishHarami => "bearish_harami",
        }
    }

    /// The same shape read in the opposite trend direction.
    pub fn directional_twin(self) -> Self {
        match self {
            PatternClass::MorningStar => PatternClass::EveningStar,
            PatternClass::EveningStar => PatternClass::MorningStar,
            PatternClass::BullishEngulfing => PatternClass::BearishEngulfing,
            PatternClass::BearishEngulfing => PatternClass::BullishEngulfing,
            PatternClass::ShootingStar => PatternClass::InvertedHammer,
            PatternClass::InvertedHammer => PatternClass::ShootingStar,
            PatternClass::BullishHarami => PatternClass::BearishHarami,
            PatternClass::BearishHarami => PatternClass::BullishHarami,
        }
    }

    /// Number of trailing signal bars the rule inspects.
    pub fn signal_len(self) -> usize {
        match self {
            PatternClass::MorningStar | PatternClass::EveningStar => 3,
            PatternClass::BullishEngulfing
            | PatternClass::BearishEngulfing
            | PatternClass::BullishHarami
            | PatternClass::BearishHarami => 2,
            PatternClass::ShootingStar | PatternClass::InvertedHammer => 1,
        }
    }
}

impl fmt::Display for PatternClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown pattern class {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub window: Window,
    pub label: PatternClass,
}

pub const OHLC_HEADER: [&str; 5] = ["timestamp", "open", "high", "low", "close"];

pub fn load_ohlc_csv(path: impl AsRef<Path>) -> Result<Vec<OhlcBar>> {
    read_ohlc_csv(File::open(path)?)
}

/// Parses `timestamp,open,high,low,close` rows. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn read_ohlc_csv<R: Read>(reader: R) -> Result<Vec<OhlcBar>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 5 || headers.iter().take(5).ne(OHLC_HEADER.iter().copied()) {
        return Err(Error::MalformedRow {
            row: 0,
            reason: format!("expected header {}", OHLC_HEADER.join(",")),
        });
    }
    let mut bars = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if record.len() < 5 {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected 5 fields, got {}", record.len()),
            });
        }
        let timestamp: i64 = record[0].parse().map_err(|_| Error::MalformedRow {
            row,
            reason: format!("bad timestamp {:?}", &record[0]),
        })?;
        let mut prices = [0.0f64; 4];
        for (k, p) in prices.iter_mut().enumerate() {
            let field = &record[k + 1];
            *p = field.parse().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("bad {} {:?}", OHLC_HEADER[k + 1], field),
            })?;
        }
        let bar = OhlcBar {
            timestamp,
            open: prices[0],
            high: prices[1],
            low: prices[2],
            close: prices[3],
        };
        if let Some(reason) = bar.violation() {
            return Err(Error::InvariantViolation { row, reason });
        }
        bars.push((row, bar));
    }
    bars.sort_by_key(|(_, b)| b.timestamp);
    if let Some(pair) = bars
        .windows(2)
        .find(|p| p[0].1.timestamp == p[1].1.timestamp)
    {
        return Err(Error::InvariantViolation {
            row: pair[1].0,
            reason: format!("duplicate timestamp {}", pair[1].1.timestamp),
        });
    }
    Ok(bars.into_iter().map(|(_, b)| b).collect())
}

pub fn write_ohlc_csv(path: impl AsRef<Path>, bars: &[OhlcBar]) -> Result<()> {
    let mut file = File::create(path)?;
    write_ohlc(&mut file, bars)
}

pub fn write_ohlc<W: Write>(writer: W, bars: &[OhlcBar]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(OHLC_HEADER)?;
    for b in bars {
        wtr.write_record([
            b.timestamp.to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Slides a `len`-bar window over `bars` with the given stride, dropping
/// windows whose prices are all identical (zero range).
pub fn extract_windows(bars: &[OhlcBar], len: usize, stride: usize) -> Result<Vec<Window>> {
    if len == 0 || stride == 0 {
        return Err(Error::ConfigInvalid("window length and stride must be positive".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= bars.len() {
        let slice = &bars[start..start + len];
        let lo = slice.iter().map(|b| b.low).fold(f64::INFINITY, f64::min);
        let hi = slice.iter().map(|b| b.high).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            out.push(Window::new(slice.to_vec())?);
        }
        start += stride;
    }
    Ok(out)
}

/// Labels real windows with the rule predicates, keeping those that match
/// exactly one pattern.
pub fn label_windows(windows: Vec<Window>) -> Vec<LabeledWindow> {
    windows
        .into_iter()
        .filter_map(|window| {
            let mut hits = PatternClass::ALL
                .iter()
                .copied()
                .filter(|&c| validate_pattern(&window, c));
            match (hits.next(), hits.next()) {
                (Some(label), None) => Some(LabeledWindow { window, label }),
                _ => None,
            }
        })
        .collect()
}
