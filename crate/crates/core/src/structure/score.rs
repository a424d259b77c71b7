//! Decomposable network scores: BIC and the Bayesian-Dirichlet family (K2, BDeu).

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{Result, StructureError};
use crate::bayesnet::{family_counts, DirichletPrior};
use crate::dag::Dag;
use crate::dataset::DiscreteDataset;

/// Multiplier applied to the parameter dimension in BIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    /// `(ln n / 2) * k`
    #[default]
    Bic,
    /// `k / 2`, with no sample-size factor
    HalfK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreFn {
    Bic {
        #[serde(default)]
        penalty: Penalty,
    },
    K2,
    Bdeu {
        ess: f64,
    },
}

impl ScoreFn {
    pub const BIC: ScoreFn = ScoreFn::Bic {
        penalty: Penalty::Bic,
    };

    pub fn bdeu_default() -> Self {
        ScoreFn::Bdeu { ess: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredFamily {
    pub child: usize,
    /// Sorted ascending.
    pub parents: Vec<usize>,
    pub score: f64,
    /// Free parameters: `(card(child) - 1) * prod(card(parents))`.
    pub k: usize,
}

/// Non-empty parent configurations in ascending index order, each with the
/// child's state counts.
fn grouped_counts(data: &DiscreteDataset, child: usize, parents: &[usize]) -> Vec<Vec<u64>> {
    let card = data.card(child);
    let n_configs = parents
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(data.card(p)));
    match n_configs {
        Some(nc) if nc.saturating_mul(card) <= 1 << 20 => family_counts(data, child, parents)
            .chunks(card)
            .filter(|row| row.iter().any(|&c| c > 0))
            .map(<[u64]>::to_vec)
            .collect(),
        _ => {
            // too many configurations for a dense table: sort rows by configuration key
            let cols: Vec<&[usize]> = parents.iter().map(|&p| data.column(p)).collect();
            let mut keyed: Vec<(Vec<usize>, usize)> = (0..data.n_rows())
                .map(|r| (cols.iter().map(|c| c[r]).collect(), data.column(child)[r]))
                .collect();
            keyed.sort();
            let mut out: Vec<Vec<u64>> = Vec::new();
            let mut last: Option<&Vec<usize>> = None;
            for (key, s) in &keyed {
                if last != Some(key) {
                    out.push(vec![0; card]);
                    last = Some(key);
                }
                out.last_mut().expect("pushed")[*s] += 1;
            }
            out
        }
    }
}

fn check_family(data: &DiscreteDataset, child: usize, parents: &[usize]) -> Result<Vec<usize>> {
    let n = data.n_vars();
    if child >= n || parents.iter().any(|&p| p >= n) {
        return Err(StructureError::InvalidArgument(format!(
            "family references a column outside 0..{n}"
        )));
    }
    let mut sorted = parents.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.contains(&child) {
        return Err(StructureError::InvalidArgument(
            "a variable cannot be its own parent".into(),
        ));
    }
    Ok(sorted)
}

fn parameter_dimension(data: &DiscreteDataset, child: usize, parents: &[usize]) -> usize {
    (data.card(child) - 1)
        * parents
            .iter()
            .map(|&p| data.card(p))
            .fold(1usize, usize::saturating_mul)
}

/// BIC with the standard `(ln n / 2) * k` penalty.
pub fn bic_family_score(
    data: &DiscreteDataset,
    child: usize,
    parents: &[usize],
) -> Result<ScoredFamily> {
    bic_family_score_with(data, child, parents, Penalty::Bic)
}

/// Maximized log-likelihood of the family under relative-frequency estimates, minus the penalty.
pub fn bic_family_score_with(
    data: &DiscreteDataset,
    child: usize,
    parents: &[usize],
    penalty: Penalty,
) -> Result<ScoredFamily> {
    let parents = check_family(data, child, parents)?;
    let n = data.n_rows();
    if n == 0 {
        return Err(StructureError::InvalidArgument(
            "BIC needs at least one row".into(),
        ));
    }
    let mut loglik = 0.0;
    for row in grouped_counts(data, child, &parents) {
        let total: u64 = row.iter().sum();
        let ln_total = (total as f64).ln();
        for &c in row.iter().filter(|&&c| c > 0) {
            loglik += c as f64 * ((c as f64).ln() - ln_total);
        }
    }
    let k = parameter_dimension(data, child, &parents);
    let factor = match penalty {
        Penalty::Bic => (n as f64).ln() / 2.0,
        Penalty::HalfK => 0.5,
    };
    Ok(ScoredFamily {
        child,
        parents,
        score: loglik - factor * k as f64,
        k,
    })
}

/// Log marginal likelihood of the family under a Dirichlet prior.
pub fn bd_family_score(
    data: &DiscreteDataset,
    child: usize,
    parents: &[usize],
    prior: DirichletPrior,
) -> Result<ScoredFamily> {
    let parents = check_family(data, child, parents)?;
    let card = data.card(child);
    let n_configs = parents
        .iter()
        .map(|&p| data.card(p))
        .fold(1usize, usize::saturating_mul);
    let alpha = prior.pseudo_count(card, n_configs)?;
    let alpha_cfg = alpha * card as f64;
    let ln_gamma_alpha = ln_gamma(alpha);
    let ln_gamma_alpha_cfg = ln_gamma(alpha_cfg);
    let mut score = 0.0;
    for row in grouped_counts(data, child, &parents) {
        let total: u64 = row.iter().sum();
        score += ln_gamma_alpha_cfg - ln_gamma(alpha_cfg + total as f64);
        for &c in row.iter().filter(|&&c| c > 0) {
            score += ln_gamma(alpha + c as f64) - ln_gamma_alpha;
        }
    }
    Ok(ScoredFamily {
        child,
        k: parameter_dimension(data, child, &parents),
        parents,
        score,
    })
}

pub fn family_score(
    data: &DiscreteDataset,
    child: usize,
    parents: &[usize],
    score_fn: ScoreFn,
) -> Result<ScoredFamily> {
    match score_fn {
        ScoreFn::Bic { penalty } => bic_family_score_with(data, child, parents, penalty),
        ScoreFn::K2 => bd_family_score(data, child, parents, DirichletPrior::K2),
        ScoreFn::Bdeu { ess } => bd_family_score(data, child, parents, DirichletPrior::Bdeu { ess }),
    }
}

/// Maps each DAG node to its data column by name.
pub fn column_map(data: &DiscreteDataset, dag: &Dag) -> Result<Vec<usize>> {
    dag.names()
        .iter()
        .map(|n| data.require(n).map_err(StructureError::from))
        .collect()
}

/// Sum of family scores over every node of `dag`, in node order.
pub fn network_score(data: &DiscreteDataset, dag: &Dag, score_fn: ScoreFn) -> Result<f64> {
    let cols = column_map(data, dag)?;
    let mut total = 0.0;
    for v in 0..dag.len() {
        let parents: Vec<usize> = dag.parents(v).iter().map(|&p| cols[p]).collect();
        total += family_score(data, cols[v], &parents, score_fn)?.score;
    }
    Ok(total)
}

/// Memo of family scores keyed by (child, sorted parent set). Safe for concurrent readers.
#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: RwLock<HashMap<(usize, Vec<usize>), ScoredFamily>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, child: usize, parents: &[usize]) -> Option<ScoredFamily> {
        self.entries
            .read()
            .expect("score cache poisoned")
            .get(&(child, parents.to_vec()))
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("score cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    fn get_or_insert_with(
        &self,
        child: usize,
        parents: Vec<usize>,
        compute: impl FnOnce(&[usize]) -> Result<ScoredFamily>,
    ) -> Result<f64> {
        if let Some(f) = self
            .entries
            .read()
            .expect("score cache poisoned")
            .get(&(child, parents.clone()))
        {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(f.score);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let fam = compute(&parents)?;
        let score = fam.score;
        self.entries
            .write()
            .expect("score cache poisoned")
            .insert((child, parents), fam);
        Ok(score)
    }
}

/// Cached family scorer over one dataset and score function.
#[derive(Debug)]
pub struct Scorer<'a> {
    data: &'a DiscreteDataset,
    score_fn: ScoreFn,
    cache: ScoreCache,
}

impl<'a> Scorer<'a> {
    pub fn new(data: &'a DiscreteDataset, score_fn: ScoreFn) -> Self {
        Self {
            data,
            score_fn,
            cache: ScoreCache::new(),
        }
    }

    pub fn data(&self) -> &DiscreteDataset {
        self.data
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    /// Score of `child` given `parents` (data column indices, any order).
    pub fn family(&self, child: usize, parents: &[usize]) -> Result<f64> {
        let mut key = parents.to_vec();
        key.sort_unstable();
        self.cache.get_or_insert_with(child, key, |ps| {
            family_score(self.data, child, ps, self.score_fn)
        })
    }
}
