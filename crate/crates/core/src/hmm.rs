//! Discrete-time hidden Markov models.
//!
//! A [`DtHmm`] holds the initial distribution, the state transition matrix and
//! the per-state emission distributions over a finite alphabet. All lattice
//! recursions run in the log domain so monthly series with thousands of points
//! (and repeated EM passes over them) never underflow.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{argmax, log_sum_exp, normalize_or_uniform};

/// Tolerance used when checking that a probability vector sums to one.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Default absolute log-likelihood improvement below which EM stops.
pub const DEFAULT_EM_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum HmmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HmmError>;

/// Hidden state indices, one per observed symbol.
pub type StatePath = Vec<usize>;

/// Observed symbol indices.
pub type EmissionSequence = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtHmm {
    n_states: usize,
    n_symbols: usize,
    pi: Vec<f64>,
    trans: Vec<Vec<f64>>,
    emit: Vec<Vec<f64>>,
}

/// Log-domain forward variables, `log_alpha[t][i] = log p(o_1..o_t, q_t = i)`.
#[derive(Debug, Clone)]
pub struct ForwardLattice {
    pub log_alpha: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

/// Log-domain backward variables, `log_beta[t][i] = log p(o_{t+1}..o_T | q_t = i)`.
#[derive(Debug, Clone)]
pub struct BackwardLattice {
    pub log_beta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub log_prob: f64,
    pub states: StatePath,
}

/// State and transition posteriors for one sequence.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// `gamma[t][i] = p(q_t = i | O)`
    pub gamma: Vec<Vec<f64>>,
    /// `xi[t][i][j] = p(q_t = i, q_{t+1} = j | O)` for `t < T - 1`
    pub xi: Vec<Vec<Vec<f64>>>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Total log-likelihood of the initial model followed by the model after each update.
    pub log_likelihood_per_iteration: Vec<f64>,
    pub iterations_run: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaumWelchConfig {
    pub max_iters: usize,
    /// Stop once an update improves the total log-likelihood by less than this.
    /// `None` runs exactly `max_iters` updates.
    pub tolerance: Option<f64>,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tolerance: Some(DEFAULT_EM_TOLERANCE),
        }
    }
}

impl DtHmm {
    /// Builds a model after checking dimensions and that every distribution is stochastic.
    pub fn new(pi: Vec<f64>, trans: Vec<Vec<f64>>, emit: Vec<Vec<f64>>) -> Result<Self> {
        let model = Self {
            n_states: pi.len(),
            n_symbols: emit.first().map_or(0, Vec::len),
            pi,
            trans,
            emit,
        };
        model.validate().map_err(HmmError::InvalidArgument)?;
        Ok(model)
    }

    /// A model whose rows are drawn uniformly from their probability simplex.
    pub fn random(n_states: usize, n_symbols: usize, seed: u64) -> Result<Self> {
        if n_states == 0 || n_symbols == 0 {
            return Err(HmmError::InvalidArgument(format!(
                "n_states and n_symbols must be positive (got {n_states}, {n_symbols})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut simplex = |len: usize| -> Vec<f64> {
            let mut row: Vec<f64> = (0..len).map(|_| Exp1.sample(&mut rng)).collect();
            normalize_or_uniform(&mut row);
            row
        };
        let pi = simplex(n_states);
        let trans = (0..n_states).map(|_| simplex(n_states)).collect();
        let emit = (0..n_states).map(|_| simplex(n_symbols)).collect();
        Ok(Self {
            n_states,
            n_symbols,
            pi,
            trans,
            emit,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn trans(&self) -> &[Vec<f64>] {
        &self.trans
    }

    pub fn emit(&self) -> &[Vec<f64>] {
        &self.emit
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.n_states == 0 || self.n_symbols == 0 {
            return Err("model needs at least one state and one symbol".into());
        }
        check_distribution("pi", &self.pi, self.n_states)?;
        if self.trans.len() != self.n_states {
            return Err(format!(
                "trans has {} rows, expected {}",
                self.trans.len(),
                self.n_states
            ));
        }
        for (i, row) in self.trans.iter().enumerate() {
            check_distribution(&format!("trans[{i}]"), row, self.n_states)?;
        }
        if self.emit.len() != self.n_states {
            return Err(format!(
                "emit has {} rows, expected {}",
                self.emit.len(),
                self.n_states
            ));
        }
        for (i, row) in self.emit.iter().enumerate() {
            check_distribution(&format!("emit[{i}]"), row, self.n_symbols)?;
        }
        Ok(())
    }

    fn check_obs(&self, obs: &[usize]) -> Result<()> {
        if obs.is_empty() {
            return Err(HmmError::InvalidArgument("empty emission sequence".into()));
        }
        if let Some((t, &o)) = obs.iter().enumerate().find(|(_, &o)| o >= self.n_symbols) {
            return Err(HmmError::InvalidArgument(format!(
                "symbol {o} at position {t} is outside the alphabet of size {}",
                self.n_symbols
            )));
        }
        Ok(())
    }

    fn log_params(&self) -> LogParams {
        let ln = |row: &Vec<f64>| row.iter().map(|p| p.ln()).collect::<Vec<_>>();
        LogParams {
            pi: ln(&self.pi),
            trans: self.trans.iter().map(ln).collect(),
            emit: self.emit.iter().map(ln).collect(),
        }
    }

    pub fn forward(&self, obs: &[usize]) -> Result<ForwardLattice> {
        self.check_obs(obs)?;
        Ok(forward_unchecked(&self.log_params(), obs))
    }

    pub fn backward(&self, obs: &[usize]) -> Result<BackwardLattice> {
        self.check_obs(obs)?;
        Ok(backward_unchecked(&self.log_params(), obs))
    }

    pub fn log_likelihood(&self, obs: &[usize]) -> Result<f64> {
        Ok(self.forward(obs)?.log_likelihood)
    }

    /// Most probable state path. Ties resolve to the lower state index at every decision.
    pub fn viterbi(&self, obs: &[usize]) -> Result<ViterbiPath> {
        self.check_obs(obs)?;
        let lp = self.log_params();
        let n = self.n_states;
        let t_len = obs.len();
        let mut delta: Vec<f64> = (0..n).map(|i| lp.pi[i] + lp.emit[i][obs[0]]).collect();
        let mut back = vec![vec![0usize; n]; t_len];
        let mut next = vec![0.0; n];
        for t in 1..t_len {
            for j in 0..n {
                let mut best_i = 0;
                let mut best = delta[0] + lp.trans[0][j];
                for i in 1..n {
                    let cand = delta[i] + lp.trans[i][j];
                    if cand > best {
                        best = cand;
                        best_i = i;
                    }
                }
                back[t][j] = best_i;
                next[j] = best + lp.emit[j][obs[t]];
            }
            std::mem::swap(&mut delta, &mut next);
        }
        let last = argmax(&delta);
        let log_prob = delta[last];
        let mut states = vec![0; t_len];
        states[t_len - 1] = last;
        for t in (1..t_len).rev() {
            states[t - 1] = back[t][states[t]];
        }
        Ok(ViterbiPath { log_prob, states })
    }

    /// State posteriors (gamma) and transition posteriors (xi) from the forward/backward lattices.
    pub fn posteriors(&self, obs: &[usize]) -> Result<Posteriors> {
        self.check_obs(obs)?;
        let lp = self.log_params();
        let fwd = forward_unchecked(&lp, obs);
        let bwd = backward_unchecked(&lp, obs);
        let ll = fwd.log_likelihood;
        if !ll.is_finite() {
            return Err(HmmError::InvalidArgument(
                "sequence has zero probability under the model".into(),
            ));
        }
        let n = self.n_states;
        let gamma = (0..obs.len())
            .map(|t| {
                (0..n)
                    .map(|i| (fwd.log_alpha[t][i] + bwd.log_beta[t][i] - ll).exp())
                    .collect()
            })
            .collect();
        let xi = (0..obs.len().saturating_sub(1))
            .map(|t| {
                (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                (fwd.log_alpha[t][i]
                                    + lp.trans[i][j]
                                    + lp.emit[j][obs[t + 1]]
                                    + bwd.log_beta[t + 1][j]
                                    - ll)
                                    .exp()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Posteriors {
            gamma,
            xi,
            log_likelihood: ll,
        })
    }

    /// Samples a state path from `pi`/`trans` and one symbol per state from `emit`.
    pub fn generate(&self, length: usize, seed: u64) -> Result<(StatePath, EmissionSequence)> {
        if length == 0 {
            return Err(HmmError::InvalidArgument("length must be positive".into()));
        }
        let dist = |row: &[f64]| WeightedIndex::new(row).expect("validated distribution");
        let init = dist(&self.pi);
        let trans: Vec<_> = self.trans.iter().map(|r| dist(r)).collect();
        let emit: Vec<_> = self.emit.iter().map(|r| dist(r)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = Vec::with_capacity(length);
        let mut symbols = Vec::with_capacity(length);
        let mut q = init.sample(&mut rng);
        for t in 0..length {
            if t > 0 {
                q = trans[q].sample(&mut rng);
            }
            states.push(q);
            symbols.push(emit[q].sample(&mut rng));
        }
        Ok((states, symbols))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| HmmError::InvalidArgument(e.to_string()))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: DtHmm =
            serde_json::from_str(text).map_err(|e| HmmError::CorruptModel(e.to_string()))?;
        if model.pi.len() != model.n_states {
            return Err(HmmError::CorruptModel(format!(
                "pi has {} entries but n_states is {}",
                model.pi.len(),
                model.n_states
            )));
        }
        model.validate().map_err(HmmError::CorruptModel)?;
        Ok(model)
    }
}

fn check_distribution(name: &str, row: &[f64], len: usize) -> std::result::Result<(), String> {
    if row.len() != len {
        return Err(format!("{name} has {} entries, expected {len}", row.len()));
    }
    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("{name} has entry {p} outside [0, 1]"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(format!("{name} sums to {total}, not 1"));
    }
    Ok(())
}

struct LogParams {
    pi: Vec<f64>,
    trans: Vec<Vec<f64>>,
    emit: Vec<Vec<f64>>,
}

fn forward_unchecked(lp: &LogParams, obs: &[usize]) -> ForwardLattice {
    let n = lp.pi.len();
    let mut log_alpha = Vec::with_capacity(obs.len());
    log_alpha.push((0..n).map(|i| lp.pi[i] + lp.emit[i][obs[0]]).collect::<Vec<_>>());
    let mut terms = vec![0.0; n];
    for t in 1..obs.len() {
        let prev = &log_alpha[t - 1];
        let row: Vec<f64> = (0..n)
            .map(|j| {
                for i in 0..n {
                    terms[i] = prev[i] + lp.trans[i][j];
                }
                log_sum_exp(&terms) + lp.emit[j][obs[t]]
            })
            .collect();
        log_alpha.push(row);
    }
    let log_likelihood = log_sum_exp(log_alpha.last().expect("non-empty"));
    ForwardLattice {
        log_alpha,
        log_likelihood,
    }
}

fn backward_unchecked(lp: &LogParams, obs: &[usize]) -> BackwardLattice {
    let n = lp.pi.len();
    let t_len = obs.len();
    let mut log_beta = vec![vec![0.0; n]; t_len];
    let mut terms = vec![0.0; n];
    for t in (0..t_len - 1).rev() {
        for i in 0..n {
            for j in 0..n {
                terms[j] = lp.trans[i][j] + lp.emit[j][obs[t + 1]] + log_beta[t + 1][j];
            }
            log_beta[t][i] = log_sum_exp(&terms);
        }
    }
    BackwardLattice { log_beta }
}

/// Expected counts accumulated over one or more sequences.
struct ExpectedCounts {
    pi: Vec<f64>,
    trans: Vec<Vec<f64>>,
    emit: Vec<Vec<f64>>,
    log_likelihood: f64,
}

impl ExpectedCounts {
    fn zeros(n: usize, m: usize) -> Self {
        Self {
            pi: vec![0.0; n],
            trans: vec![vec![0.0; n]; n],
            emit: vec![vec![0.0; m]; n],
            log_likelihood: 0.0,
        }
    }

    fn merge(&mut self, other: &Self) {
        add_into(&mut self.pi, &other.pi);
        for (a, b) in self.trans.iter_mut().zip(&other.trans) {
            add_into(a, b);
        }
        for (a, b) in self.emit.iter_mut().zip(&other.emit) {
            add_into(a, b);
        }
        self.log_likelihood += other.log_likelihood;
    }

    fn into_model(self) -> DtHmm {
        let n_states = self.pi.len();
        let n_symbols = self.emit[0].len();
        let mut pi = self.pi;
        normalize_or_uniform(&mut pi);
        let mut trans = self.trans;
        trans.iter_mut().for_each(|r| normalize_or_uniform(r));
        let mut emit = self.emit;
        emit.iter_mut().for_each(|r| normalize_or_uniform(r));
        DtHmm {
            n_states,
            n_symbols,
            pi,
            trans,
            emit,
        }
    }
}

fn add_into(acc: &mut [f64], xs: &[f64]) {
    acc.iter_mut().zip(xs).for_each(|(a, x)| *a += x);
}

fn expected_counts(lp: &LogParams, m: usize, obs: &[usize]) -> Result<ExpectedCounts> {
    let n = lp.pi.len();
    let fwd = forward_unchecked(lp, obs);
    let bwd = backward_unchecked(lp, obs);
    let ll = fwd.log_likelihood;
    if !ll.is_finite() {
        return Err(HmmError::InvalidArgument(
            "sequence has zero probability under the current model".into(),
        ));
    }
    let mut acc = ExpectedCounts::zeros(n, m);
    acc.log_likelihood = ll;
    for (t, &o) in obs.iter().enumerate() {
        for i in 0..n {
            let gamma = (fwd.log_alpha[t][i] + bwd.log_beta[t][i] - ll).exp();
            if t == 0 {
                acc.pi[i] += gamma;
            }
            acc.emit[i][o] += gamma;
            if t + 1 < obs.len() {
                let next = obs[t + 1];
                for j in 0..n {
                    acc.trans[i][j] += (fwd.log_alpha[t][i]
                        + lp.trans[i][j]
                        + lp.emit[j][next]
                        + bwd.log_beta[t + 1][j]
                        - ll)
                        .exp();
                }
            }
        }
    }
    Ok(acc)
}

fn e_step(model: &DtHmm, sequences: &[Vec<usize>]) -> Result<ExpectedCounts> {
    let lp = model.log_params();
    let per_seq: Vec<ExpectedCounts> = sequences
        .par_iter()
        .map(|s| expected_counts(&lp, model.n_symbols, s))
        .collect::<Result<_>>()?;
    // sequential merge keeps the floating-point reduction order fixed
    let mut total = ExpectedCounts::zeros(model.n_states, model.n_symbols);
    for c in &per_seq {
        total.merge(c);
    }
    Ok(total)
}

/// Baum-Welch with the default convergence tolerance.
pub fn baum_welch(
    model: &DtHmm,
    sequences: &[Vec<usize>],
    max_iters: usize,
) -> Result<(DtHmm, TrainReport)> {
    baum_welch_with(
        model,
        sequences,
        &BaumWelchConfig {
            max_iters,
            ..Default::default()
        },
    )
}

/// Re-estimates `model` from the expected counts of all `sequences` pooled together.
pub fn baum_welch_with(
    model: &DtHmm,
    sequences: &[Vec<usize>],
    config: &BaumWelchConfig,
) -> Result<(DtHmm, TrainReport)> {
    if sequences.is_empty() {
        return Err(HmmError::InvalidArgument("no training sequences".into()));
    }
    for s in sequences {
        model.check_obs(s)?;
    }
    let mut current = model.clone();
    let mut counts = e_step(&current, sequences)?;
    let mut lls = vec![counts.log_likelihood];
    let mut iterations_run = 0;
    for _ in 0..config.max_iters {
        let prev_ll = counts.log_likelihood;
        let updated = counts.into_model();
        counts = e_step(&updated, sequences)?;
        current = updated;
        iterations_run += 1;
        lls.push(counts.log_likelihood);
        if let Some(tol) = config.tolerance {
            if counts.log_likelihood - prev_ll < tol {
                break;
            }
        }
    }
    Ok((
        current,
        TrainReport {
            log_likelihood_per_iteration: lls,
            iterations_run,
        },
    ))
}

/// Runs Baum-Welch from `restarts` random initial models and keeps the fit with
/// the highest final training log-likelihood (the earliest on ties). Restart `k`
/// starts from `DtHmm::random(n_states, n_symbols, seed + k)`.
pub fn baum_welch_restarts(
    n_states: usize,
    n_symbols: usize,
    sequences: &[Vec<usize>],
    restarts: usize,
    seed: u64,
    config: &BaumWelchConfig,
) -> Result<(DtHmm, TrainReport)> {
    if restarts == 0 {
        return Err(HmmError::InvalidArgument("restarts must be at least 1".into()));
    }
    let fits: Vec<Result<(DtHmm, TrainReport)>> = (0..restarts as u64)
        .into_par_iter()
        .map(|k| {
            let init = DtHmm::random(n_states, n_symbols, seed.wrapping_add(k))?;
            baum_welch_with(&init, sequences, config)
        })
        .collect();
    let mut best: Option<(DtHmm, TrainReport)> = None;
    for fit in fits {
        let fit = fit?;
        let ll = |f: &(DtHmm, TrainReport)| *f.1.log_likelihood_per_iteration.last().expect("initial entry");
        if best.as_ref().is_none_or(|b| ll(&fit) > ll(b)) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Splits a sequence into `sections` nearly equal contiguous pieces, longer pieces first.
/// Empty pieces are dropped.
pub fn split_sections(seq: &[usize], sections: usize) -> Vec<Vec<usize>> {
    if sections <= 1 || seq.is_empty() {
        return vec![seq.to_vec()];
    }
    let base = seq.len() / sections;
    let extra = seq.len() % sections;
    let mut out = Vec::with_capacity(sections);
    let mut start = 0;
    for k in 0..sections {
        let len = base + usize::from(k < extra);
        if len > 0 {
            out.push(seq[start..start + len].to_vec());
        }
        start += len;
    }
    out
}
