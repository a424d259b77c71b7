use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::series::{Month, TimeSeries};
use super::{PipelineError, Result};
use crate::dataset::DiscreteDataset;

/// Real-valued columns over a shared month index.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub dates: Vec<Month>,
    pub ids: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Panel {
    pub fn new(dates: Vec<Month>, ids: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != columns.len() {
            return Err(PipelineError::InvalidArgument(format!(
                "{} ids for {} columns",
                ids.len(),
                columns.len()
            )));
        }
        if let Some(c) = columns.iter().position(|c| c.len() != dates.len()) {
            return Err(PipelineError::InvalidArgument(format!(
                "column `{}` has {} rows for {} dates",
                ids[c],
                columns[c].len(),
                dates.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PipelineError::InvalidArgument("dates must strictly increase".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(PipelineError::InvalidArgument(format!("duplicate column `{dup}`")));
        }
        Ok(Self { dates, ids, columns })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|c| c == id)
    }

    pub fn column(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.columns[i].as_slice())
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            dates: self.dates[start..end].to_vec(),
            ids: self.ids.clone(),
            columns: self.columns.iter().map(|c| c[start..end].to_vec()).collect(),
        }
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(std::iter::once("date").chain(self.ids.iter().map(String::as_str)))?;
        for (r, d) in self.dates.iter().enumerate() {
            let row = std::iter::once(d.to_string()).chain(self.columns.iter().map(|c| c[r].to_string()));
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let (dates, ids, cells) = read_table(reader)?;
        let columns = cells
            .into_iter()
            .zip(&ids)
            .map(|(col, id)| {
                col.iter()
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| {
                            PipelineError::InvalidRecord(format!("column `{id}` holds `{t}`"))
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Self::new(dates, ids, columns)
    }
}

type Table = (Vec<Month>, Vec<String>, Vec<Vec<String>>);

fn read_table(reader: impl Read) -> Result<Table> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("date") {
        return Err(PipelineError::InvalidRecord("first column must be `date`".into()));
    }
    let ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut cells = vec![Vec::new(); ids.len()];
    for rec in rdr.records() {
        let rec = rec?;
        dates.push(rec[0].parse()?);
        for (c, cell) in cells.iter_mut().enumerate() {
            cell.push(rec[c + 1].to_string());
        }
    }
    Ok((dates, ids, cells))
}

/// Inner join on months; column order follows the input order.
pub fn align(series: &[TimeSeries]) -> Result<Panel> {
    let Some(first) = series.first() else {
        return Err(PipelineError::InvalidArgument("no series to align".into()));
    };
    let mut common: BTreeSet<Month> = first.dates.iter().copied().collect();
    for s in &series[1..] {
        let other: BTreeSet<Month> = s.dates.iter().copied().collect();
        common = common.intersection(&other).copied().collect();
    }
    if common.is_empty() {
        let ranges: Vec<String> = series
            .iter()
            .map(|s| match (s.dates.first(), s.dates.last()) {
                (Some(a), Some(b)) => format!("{} {a}..{b}", s.id),
                _ => format!("{} empty", s.id),
            })
            .collect();
        return Err(PipelineError::NoOverlap(ranges.join("; ")));
    }
    let dates: Vec<Month> = common.into_iter().collect();
    let columns = series
        .iter()
        .map(|s| {
            s.dates
                .iter()
                .zip(&s.values)
                .filter(|(d, _)| dates.binary_search(d).is_ok())
                .map(|(_, &v)| v)
                .collect()
        })
        .collect();
    Panel::new(dates, series.iter().map(|s| s.id.clone()).collect(), columns)
}

/// Appends `forecast[t] = price[t + 1]` and drops the final row, whose target is unknown.
pub fn add_targets(panel: &Panel, price_id: &str) -> Result<Panel> {
    let price = panel
        .column(price_id)
        .ok_or_else(|| PipelineError::InvalidArgument(format!("no price column `{price_id}`")))?;
    if panel.index_of(super::FORECAST_COLUMN).is_some() {
        return Err(PipelineError::InvalidArgument("panel already has a forecast column".into()));
    }
    let n = panel.len().saturating_sub(1);
    if n == 0 {
        log::warn!("panel of {} rows leaves no rows with a known target", panel.len());
    }
    let forecast = price.iter().skip(1).copied().collect();
    let mut out = panel.slice(0, n);
    out.ids.push(super::FORECAST_COLUMN.to_string());
    out.columns.push(forecast);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub vald_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            vald_frac: 0.1,
            test_frac: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train_frac, self.vald_frac, self.test_frac];
        if parts.iter().any(|&f| !(f > 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PipelineError::InvalidArgument(format!(
                "split fractions must be positive and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Contiguous train/validation/test slices cut at `floor(n·train)` and `floor(n·(train+vald))`.
pub fn split(panel: &Panel, spec: &SplitSpec) -> Result<(Panel, Panel, Panel)> {
    spec.validate()?;
    let n = panel.len();
    if n < 10 {
        return Err(PipelineError::InvalidArgument(format!(
            "panel has {n} rows; at least 10 are needed to split"
        )));
    }
    let a = (n as f64 * spec.train_frac).floor() as usize;
    let b = ((n as f64 * (spec.train_frac + spec.vald_frac)).floor() as usize).max(a);
    Ok((panel.slice(0, a), panel.slice(a, b), panel.slice(b, n)))
}

/// Regime labels over a month index.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePanel {
    pub dates: Vec<Month>,
    pub data: DiscreteDataset,
}

impl RegimePanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn column(&self, id: &str) -> Option<&[usize]> {
        self.data.index_of(id).map(|i| self.data.column(i))
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(std::iter::once("date").chain(self.data.names().iter().map(String::as_str)))?;
        for (r, d) in self.dates.iter().enumerate() {
            let row = std::iter::once(d.to_string())
                .chain((0..self.data.n_vars()).map(|c| self.data.column(c)[r].to_string()));
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads labels written by [`RegimePanel::write_csv`]; every column gets `n_states` states.
    pub fn read_csv(reader: impl Read, n_states: usize) -> Result<Self> {
        let (dates, ids, cells) = read_table(reader)?;
        let columns = cells
            .into_iter()
            .zip(&ids)
            .map(|(col, id)| {
                col.iter()
                    .map(|t| {
                        t.parse::<usize>().map_err(|_| {
                            PipelineError::InvalidRecord(format!("column `{id}` holds `{t}`"))
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let cards = vec![n_states; ids.len()];
        Ok(Self {
            dates,
            data: DiscreteDataset::new(ids, cards, columns)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn months(start: i32, n: usize) -> Vec<Month> {
        std::iter::successors(Month::new(start, 1), |m| Some(m.succ()))
            .take(n)
            .collect()
    }

    fn ts(id: &str, start: i32, n: usize) -> TimeSeries {
        TimeSeries {
            id: id.into(),
            dates: months(start, n),
            values: (0..n).map(|i| i as f64).collect(),
        }
    }

    #[test]
    fn align_intersects() {
        let p = align(&[ts("a", 2000, 132), ts("b", 2005, 132)]).unwrap();
        assert_eq!(p.dates.first().unwrap().to_string(), "2005-01-01");
        assert_eq!(p.dates.last().unwrap().to_string(), "2010-12-01");
        assert_eq!(p.ids, vec!["a", "b"]);
        assert_eq!(p.columns[0][0], 60.0);
        assert_eq!(p.columns[1][0], 0.0);
    }

    #[test]
    fn empty_triple_intersection_fails() {
        let err = align(&[ts("a", 2000, 24), ts("b", 2001, 24), ts("c", 2002, 12)]).unwrap_err();
        assert!(matches!(err, PipelineError::NoOverlap(ref m) if m.contains("a 2000-01-01")));
    }

    #[test]
    fn targets_shift_price() {
        let p = Panel::new(months(2000, 3), vec!["p".into()], vec![vec![1.0, 2.0, 3.0]]).unwrap();
        let t = add_targets(&p, "p").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.column("forecast").unwrap(), &[2.0, 3.0]);
        let one = add_targets(&p.slice(0, 1), "p").unwrap();
        assert!(one.is_empty());
        assert!(add_targets(&p, "q").is_err());
    }

    #[test]
    fn split_uses_floor_boundaries() {
        let p = Panel::new(months(2000, 103), vec!["p".into()], vec![vec![0.0; 103]]).unwrap();
        let (a, b, c) = split(&p, &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (82, 10, 11));
        assert!(a.dates.last() < b.dates.first() && b.dates.last() < c.dates.first());
        assert!(split(&p.slice(0, 9), &SplitSpec::default()).is_err());
        let bad = SplitSpec { train_frac: 0.9, vald_frac: 0.1, test_frac: 0.1 };
        assert!(split(&p, &bad).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let p = Panel::new(months(2000, 2), vec!["a".into(), "b.c".into()], vec![vec![0.1, 2.0], vec![-3.5, 1e-9]]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("date,a,b.c\n2000-01-01,0.1,-3.5\n"));
        assert_eq!(Panel::read_csv(buf.as_slice()).unwrap(), p);

        let data = DiscreteDataset::new(vec!["x".into()], vec![3], vec![vec![2, 0]]).unwrap();
        let r = RegimePanel { dates: months(2000, 2), data };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(RegimePanel::read_csv(buf.as_slice(), 3).unwrap(), r);
        assert!(RegimePanel::read_csv(buf.as_slice(), 2).is_err());
    }
}
