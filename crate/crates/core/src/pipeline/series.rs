use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};

/// Placeholder written for absent values in raw series files.
pub const MISSING_TOKEN: &str = "-";

/// A calendar month, stored as its first day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month(NaiveDate);

impl Month {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, 1).map(Month)
    }

    pub fn year(self) -> i32 {
        self.0.year()
    }

    pub fn month(self) -> u32 {
        self.0.month()
    }

    pub fn succ(self) -> Self {
        match self.month() {
            12 => Month::new(self.year() + 1, 1),
            m => Month::new(self.year(), m + 1),
        }
        .expect("month arithmetic stays in range")
    }
}

/// Accepts `YYYYMM`, `YYYY-MM` and `YYYY-MM-DD`; any day collapses to the month.
impl FromStr for Month {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || PipelineError::InvalidRecord(format!("unparseable date `{s}`"));
        let date = if t.len() == 6 && t.bytes().all(|b| b.is_ascii_digit()) {
            NaiveDate::parse_from_str(&format!("{t}01"), "%Y%m%d")
        } else if t.len() == 7 {
            NaiveDate::parse_from_str(&format!("{t}-01"), "%Y-%m-%d")
        } else {
            NaiveDate::parse_from_str(t, "%Y-%m-%d")
        }
        .map_err(|_| bad())?;
        Month::new(date.year(), date.month()).ok_or_else(bad)
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d"))
    }
}

impl Serialize for Month {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One observation as delivered by a source, before any parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub date: String,
    pub value: String,
}

impl RawRecord {
    pub fn new(date: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            date: date.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub id: String,
    pub dates: Vec<Month>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

fn parse_value(token: &str) -> Option<f64> {
    token.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses and sorts raw records, then fills holes forward and, at the head, backward.
/// Tokens that are not finite numbers (`-`, `.`, blanks, text) count as missing.
pub fn clean_series(id: &str, records: &[RawRecord]) -> Result<TimeSeries> {
    if records.is_empty() {
        return Err(PipelineError::UnusableSeries(id.to_string()));
    }
    let mut rows: Vec<(Month, Option<f64>)> = records
        .iter()
        .map(|r| Ok((r.date.parse::<Month>()?, parse_value(&r.value))))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(PipelineError::InvalidRecord(format!(
            "series `{id}` repeats month {}",
            w[0].0
        )));
    }
    let first = rows
        .iter()
        .find_map(|r| r.1)
        .ok_or_else(|| PipelineError::UnusableSeries(id.to_string()))?;
    let mut last = first;
    let values = rows
        .iter()
        .map(|r| {
            if let Some(v) = r.1 {
                last = v;
            }
            last
        })
        .collect();
    Ok(TimeSeries {
        id: id.to_string(),
        dates: rows.into_iter().map(|r| r.0).collect(),
        values,
    })
}

/// Reads a `date,value` CSV into raw records, keeping tokens verbatim.
pub fn read_raw_csv(reader: impl Read) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "value" {
        return Err(PipelineError::InvalidRecord(format!(
            "expected header `date,value`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize().map(|r| r.map_err(Into::into)).collect()
}

pub fn write_raw_csv(records: &[RawRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(pairs: &[(&str, &str)]) -> Vec<RawRecord> {
        pairs.iter().map(|(d, v)| RawRecord::new(*d, *v)).collect()
    }

    #[test]
    fn forward_fill() {
        let s = clean_series("x", &recs(&[("200001", "10"), ("200002", "-"), ("200003", "12")])).unwrap();
        assert_eq!(s.values, vec![10.0, 10.0, 12.0]);
    }

    #[test]
    fn back_fill_at_head() {
        let s = clean_series("x", &recs(&[("200002", "-"), ("200003", "5")])).unwrap();
        assert_eq!(s.values, vec![5.0, 5.0]);
    }

    #[test]
    fn date_formats_agree() {
        let a: Month = "200001".parse().unwrap();
        let b: Month = "2000-01-01".parse().unwrap();
        let c: Month = "2000-01-17".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        assert_eq!(a.to_string(), "2000-01-01");
        assert_eq!(Month::new(1999, 12).unwrap().succ(), a);
    }

    #[test]
    fn output_is_sorted() {
        let s = clean_series("x", &recs(&[("200003", "3"), ("200001", "1"), ("200002", ".")])).unwrap();
        assert_eq!(s.values, vec![1.0, 1.0, 3.0]);
        assert_eq!(s.dates[0].to_string(), "2000-01-01");
    }

    #[test]
    fn errors() {
        assert!(matches!(
            clean_series("x", &recs(&[("200001", "-"), ("200002", "n/a")])),
            Err(PipelineError::UnusableSeries(_))
        ));
        let err = clean_series("x", &recs(&[("2000x1", "1")])).unwrap_err();
        assert!(err.to_string().contains("2000x1"));
        assert!(clean_series("x", &recs(&[("200001", "1"), ("2000-01-01", "2")])).is_err());
        assert!(clean_series("x", &[]).is_err());
    }

    #[test]
    fn raw_csv_round_trip() {
        let r = recs(&[("200001", "10"), ("200002", "-")]);
        let mut buf = Vec::new();
        write_raw_csv(&r, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "date,value\n200001,10\n200002,-\n");
        assert_eq!(read_raw_csv(buf.as_slice()).unwrap(), r);
        assert!(read_raw_csv("when,what\n1,2\n".as_bytes()).is_err());
    }
}
