//! Column-major table of discrete observations.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("unknown column `{0}`")]
    MissingColumn(String),
}

/// Named discrete columns of equal length. Column `i` takes values in `0..cards[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDataset {
    names: Vec<String>,
    cards: Vec<usize>,
    columns: Vec<Vec<usize>>,
}

impl DiscreteDataset {
    pub fn new(
        names: Vec<String>,
        cards: Vec<usize>,
        columns: Vec<Vec<usize>>,
    ) -> Result<Self, DataError> {
        if names.len() != cards.len() || names.len() != columns.len() {
            return Err(DataError::Invalid(format!(
                "{} names, {} cardinalities, {} columns",
                names.len(),
                cards.len(),
                columns.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(DataError::Invalid(format!("duplicate column `{n}`")));
            }
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        for ((name, &card), col) in names.iter().zip(&cards).zip(&columns) {
            if card == 0 {
                return Err(DataError::Invalid(format!("column `{name}` has zero cardinality")));
            }
            if col.len() != n_rows {
                return Err(DataError::Invalid(format!(
                    "column `{name}` has {} rows, expected {n_rows}",
                    col.len()
                )));
            }
            if let Some(&v) = col.iter().find(|&&v| v >= card) {
                return Err(DataError::Invalid(format!(
                    "column `{name}` holds state {v} but has cardinality {card}"
                )));
            }
        }
        Ok(Self {
            names,
            cards,
            columns,
        })
    }

    /// Builds a dataset from arbitrary integer-coded columns, mapping each column's
    /// distinct values (in ascending order) onto `0..k`.
    pub fn from_raw_columns(names: Vec<String>, raw: Vec<Vec<i64>>) -> Result<Self, DataError> {
        let mut cards = Vec::with_capacity(raw.len());
        let mut columns = Vec::with_capacity(raw.len());
        for col in raw {
            let levels: BTreeMap<i64, usize> = col
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .enumerate()
                .map(|(i, v)| (v, i))
                .collect();
            cards.push(levels.len().max(1));
            columns.push(col.iter().map(|v| levels[v]).collect());
        }
        Self::new(names, cards, columns)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn card(&self, var: usize) -> usize {
        self.cards[var]
    }

    pub fn column(&self, var: usize) -> &[usize] {
        &self.columns[var]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, DataError> {
        self.index_of(name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    /// Contiguous row slice `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            names: self.names.clone(),
            cards: self.cards.clone(),
            columns: self.columns.iter().map(|c| c[start..end].to_vec()).collect(),
        }
    }

    /// Copy without the named column (no-op when absent).
    pub fn without_column(&self, name: &str) -> Self {
        let mut out = self.clone();
        if let Some(i) = self.index_of(name) {
            out.names.remove(i);
            out.cards.remove(i);
            out.columns.remove(i);
        }
        out
    }

    pub fn row(&self, r: usize) -> Vec<usize> {
        self.columns.iter().map(|c| c[r]).collect()
    }
}
