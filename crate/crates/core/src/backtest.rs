//! Replays regime signals against prices and scores regime predictions.
//!
//! Signals follow the trading convention used throughout: 0 exits or shorts,
//! 1 holds, 2 goes long. Equity is measured in price units and starts at the
//! first price (one unit of the commodity).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::Month;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BacktestError>;

pub const SIGNAL_EXIT: usize = 0;
pub const SIGNAL_HOLD: usize = 1;
pub const SIGNAL_LONG: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub direct_error: f64,
    /// Mismatch rate when `real[i]` is compared with `pred[(i + 1) % n]`.
    pub lag1_error: f64,
    /// `confusion[real][pred]` over the aligned comparison.
    pub confusion: Vec<Vec<u64>>,
}

/// Direct and one-step-rotated mismatch rates of predicted against realized labels.
pub fn regime_error(real: &[usize], pred: &[usize]) -> Result<ErrorReport> {
    if real.len() != pred.len() || real.is_empty() {
        return Err(BacktestError::InvalidArgument(format!(
            "need equal non-empty label series, got {} and {}",
            real.len(),
            pred.len()
        )));
    }
    let n = real.len();
    let k = real.iter().chain(pred).max().map_or(0, |&m| m + 1).max(3);
    let mut confusion = vec![vec![0u64; k]; k];
    for (&r, &p) in real.iter().zip(pred) {
        confusion[r][p] += 1;
    }
    let direct = real.iter().zip(pred).filter(|(r, p)| r != p).count();
    let lag1 = (0..n).filter(|&i| real[i] != pred[(i + 1) % n]).count();
    Ok(ErrorReport {
        direct_error: direct as f64 / n as f64,
        lag1_error: lag1 as f64 / n as f64,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BacktestMode {
    /// Replays the original loop, in which a long position is never closed.
    #[default]
    Paper,
    /// Exit signals close a long position.
    Corrected,
}

impl FromStr for BacktestMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "paper" => Ok(Self::Paper),
            "corrected" => Ok(Self::Corrected),
            other => Err(format!("unknown backtest mode `{other}` (expected paper or corrected)")),
        }
    }
}

impl fmt::Display for BacktestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Paper => "paper",
            Self::Corrected => "corrected",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeLedger {
    pub dates: Vec<Month>,
    pub prices: Vec<f64>,
    pub signals: Vec<usize>,
    pub equity: Vec<f64>,
    pub long: Vec<bool>,
}

impl TradeLedger {
    pub fn len(&self) -> usize {
        self.equity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equity.is_empty()
    }

    /// Writes `date,equity,position,signal,price` rows.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "equity", "position", "signal", "price"])?;
        for i in 0..self.len() {
            w.write_record([
                self.dates[i].to_string(),
                self.equity[i].to_string(),
                if self.long[i] { "long" } else { "flat" }.to_string(),
                self.signals[i].to_string(),
                self.prices[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_inputs(dates: &[Month], prices: &[f64], signals: &[usize], min_len: usize) -> Result<()> {
    if prices.len() != signals.len() || prices.len() != dates.len() {
        return Err(BacktestError::InvalidArgument(format!(
            "{} dates, {} prices, {} signals",
            dates.len(),
            prices.len(),
            signals.len()
        )));
    }
    if prices.len() < min_len {
        return Err(BacktestError::InvalidArgument(format!(
            "need at least {min_len} points, got {}",
            prices.len()
        )));
    }
    if let Some(s) = signals.iter().find(|&&s| s > SIGNAL_LONG) {
        return Err(BacktestError::InvalidArgument(format!("signal {s} is not 0, 1 or 2")));
    }
    Ok(())
}

/// Step `i -> i + 1` acts on `signals[i + 1]` and marks to `prices[i + 1]`;
/// `signals[0]` is never read. Entering a long carries equity forward, holding
/// a long marks equity to the price, and anything while flat carries equity.
fn simulate(dates: &[Month], prices: &[f64], signals: &[usize], exits: bool) -> Result<TradeLedger> {
    check_inputs(dates, prices, signals, 2)?;
    let mut equity = vec![prices[0]];
    let mut long = vec![false];
    let mut position = false;
    for i in 0..prices.len() - 1 {
        let prev = equity[i];
        let next = match signals[i + 1] {
            SIGNAL_EXIT => {
                if exits {
                    position = false;
                }
                prev
            }
            SIGNAL_LONG if !position => {
                position = true;
                prev
            }
            _ if position => prices[i + 1],
            _ => prev,
        };
        equity.push(next);
        long.push(position);
    }
    Ok(TradeLedger {
        dates: dates.to_vec(),
        prices: prices.to_vec(),
        signals: signals.to_vec(),
        equity,
        long,
    })
}

/// The original trading loop, kept bit-for-bit: once long, the position is never closed.
pub fn simulate_paper(dates: &[Month], prices: &[f64], signals: &[usize]) -> Result<TradeLedger> {
    simulate(dates, prices, signals, false)
}

/// Like [`simulate_paper`], except an exit signal closes a long position and
/// freezes equity until the next long entry.
pub fn simulate_corrected(dates: &[Month], prices: &[f64], signals: &[usize]) -> Result<TradeLedger> {
    simulate(dates, prices, signals, true)
}

pub fn simulate_mode(
    mode: BacktestMode,
    dates: &[Month],
    prices: &[f64],
    signals: &[usize],
) -> Result<TradeLedger> {
    match mode {
        BacktestMode::Paper => simulate_paper(dates, prices, signals),
        BacktestMode::Corrected => simulate_corrected(dates, prices, signals),
    }
}

/// Holding one unit throughout: equity is the price itself.
pub fn buy_and_hold(dates: &[Month], prices: &[f64]) -> Result<TradeLedger> {
    let signals = vec![SIGNAL_LONG; prices.len()];
    check_inputs(dates, prices, &signals, 1)?;
    Ok(TradeLedger {
        dates: dates.to_vec(),
        prices: prices.to_vec(),
        signals,
        equity: prices.to_vec(),
        long: vec![true; prices.len()],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerSummary {
    pub final_equity: f64,
    pub total_return: f64,
    /// Largest peak-to-trough decline as a fraction of the peak.
    pub max_drawdown: f64,
}

pub fn summarize(ledger: &TradeLedger) -> Result<LedgerSummary> {
    let (Some(&first), Some(&last)) = (ledger.equity.first(), ledger.equity.last()) else {
        return Err(BacktestError::InvalidArgument("empty ledger".into()));
    };
    let mut peak = f64::NEG_INFINITY;
    let mut max_drawdown: f64 = 0.0;
    for &e in &ledger.equity {
        peak = peak.max(e);
        if peak > 0.0 {
            max_drawdown = max_drawdown.max((peak - e) / peak);
        }
    }
    Ok(LedgerSummary {
        final_equity: last,
        total_return: last / first - 1.0,
        max_drawdown,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub mode: BacktestMode,
    pub strategy: LedgerSummary,
    pub buy_and_hold: LedgerSummary,
}

/// Summaries of a strategy ledger and its benchmark over identical dates.
pub fn compare(strategy: &TradeLedger, benchmark: &TradeLedger, mode: BacktestMode) -> Result<Comparison> {
    if strategy.dates != benchmark.dates {
        return Err(BacktestError::InvalidArgument("ledgers cover different dates".into()));
    }
    Ok(Comparison {
        mode,
        strategy: summarize(strategy)?,
        buy_and_hold: summarize(benchmark)?,
    })
}

/// Side-by-side `date,price,equity,buy_and_hold,reference` rows. Reference
/// values are matched on month; months without one are left blank.
pub fn write_side_by_side(
    ledger: &TradeLedger,
    reference: &[(Month, f64)],
    writer: impl Write,
) -> Result<()> {
    let lookup: std::collections::HashMap<Month, f64> = reference.iter().copied().collect();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "price", "equity", "buy_and_hold", "reference"])?;
    for i in 0..ledger.len() {
        let d = ledger.dates[i];
        w.write_record([
            d.to_string(),
            ledger.prices[i].to_string(),
            ledger.equity[i].to_string(),
            ledger.prices[i].to_string(),
            lookup.get(&d).map(f64::to_string).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
