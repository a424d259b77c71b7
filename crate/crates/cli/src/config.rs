//! Run configuration. Paths are resolved against the directory holding the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use regimenet_core::backtest::BacktestMode;
use regimenet_core::pipeline::{store_stem, DiscretizeSettings, SplitSpec, FORECAST_COLUMN};
use regimenet_core::structure::{Penalty, ScoreFn};
use regimenet_core::DirichletPrior;
use regimenet_data::{Endpoints, Source, SourceSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const EIA_SERIES: [&str; 14] = [
    "STEO.RGDPQ_NONOECD.M",
    "STEO.RGDPQ_OECD.M",
    "STEO.PAPR_NONOPEC.M",
    "STEO.PAPR_OPEC.M",
    "STEO.PATC_OECD.M",
    "STEO.PATC_NON_OECD.M",
    "STEO.COPRPUS.M",
    "STEO.CORIPUS.M",
    "STEO.FOREX_WORLD.M",
    "STEO.PASC_OECD_T3.M",
    "STEO.COPS_OPEC.M",
    "STEO.COPC_OPEC.M",
    "STEO.T3_STCHANGE_OOECD.M",
    "STEO.T3_STCHANGE_NOECD.M",
];

pub const FRED_SERIES: [&str; 8] = [
    "CPIENGSL",
    "CAPG211S",
    "CAPUTLG211S",
    "IPG211S",
    "IPG211111CN",
    "INDPRO",
    "IPN213111N",
    "PCU211211",
];

pub const PRICE_SERIES: &str = "WTISPLC";

pub const EXPERT_EDGES: [(&str, &str); 6] = [
    ("STEO.PAPR_NONOPEC.M", "WTISPLC"),
    ("STEO.PAPR_OPEC.M", "WTISPLC"),
    ("STEO.PATC_OECD.M", "WTISPLC"),
    ("STEO.PATC_NON_OECD.M", "WTISPLC"),
    ("STEO.RGDPQ_OECD.M", "STEO.PATC_OECD.M"),
    ("STEO.RGDPQ_NONOECD.M", "STEO.PATC_NON_OECD.M"),
];

pub fn default_datasets() -> Vec<SourceSpec> {
    EIA_SERIES
        .iter()
        .map(|id| SourceSpec::new(Source::Eia, *id))
        .chain(FRED_SERIES.iter().map(|id| SourceSpec::new(Source::Fred, *id)))
        .chain(std::iter::once(SourceSpec::new(Source::Fred, PRICE_SERIES)))
        .collect()
}

fn default_out_dir() -> PathBuf {
    "out".into()
}

fn default_cache_dir() -> PathBuf {
    "cache".into()
}

fn default_price_id() -> String {
    PRICE_SERIES.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_name: String,
    /// Global seed. Required so every run is reproducible.
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub fixtures_dir: Option<PathBuf>,
    #[serde(default)]
    pub endpoints: EndpointConfig,
    #[serde(default = "default_price_id")]
    pub price_id: String,
    #[serde(default = "default_datasets")]
    pub datasets: Vec<SourceSpec>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub hmm: DiscretizeSettings,
    #[serde(default)]
    pub search: SearchSettings,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub backtest: BacktestSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    #[serde(default)]
    pub eia: Option<String>,
    #[serde(default)]
    pub fred: Option<String>,
}

impl EndpointConfig {
    pub fn resolve(&self) -> Endpoints {
        let d = Endpoints::default();
        Endpoints {
            eia: self.eia.clone().unwrap_or(d.eia),
            fred: self.fred.clone().unwrap_or(d.fred),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreName {
    #[default]
    K2,
    Bic,
    Bdeu,
}

fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    pub score: ScoreName,
    /// BIC only.
    pub penalty: Penalty,
    /// BDeu only.
    #[serde(default = "ten")]
    pub ess: f64,
    /// Starting structure for the climb.
    pub expert_edges: Vec<(String, String)>,
    pub forbidden_edges: Vec<(String, String)>,
    pub tabu_size: usize,
    pub max_iters: usize,
    pub random_ops: usize,
    pub restarts: usize,
    pub max_parents: Option<usize>,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            score: ScoreName::K2,
            penalty: Penalty::Bic,
            ess: 10.0,
            expert_edges: EXPERT_EDGES.iter().map(|&(a, b)| (a.into(), b.into())).collect(),
            forbidden_edges: Vec::new(),
            tabu_size: 100,
            max_iters: 1_000_000,
            random_ops: 5,
            restarts: 0,
            max_parents: Some(4),
        }
    }
}

impl SearchSettings {
    pub fn score_fn(&self) -> ScoreFn {
        match self.score {
            ScoreName::K2 => ScoreFn::K2,
            ScoreName::Bic => ScoreFn::Bic { penalty: self.penalty },
            ScoreName::Bdeu => ScoreFn::Bdeu { ess: self.ess },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorName {
    #[default]
    K2,
    Bdeu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    pub prior: PriorName,
    pub ess: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            prior: PriorName::K2,
            ess: 10.0,
        }
    }
}

impl FitSettings {
    pub fn prior(&self) -> DirichletPrior {
        match self.prior {
            PriorName::K2 => DirichletPrior::K2,
            PriorName::Bdeu => DirichletPrior::Bdeu { ess: self.ess },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSettings {
    pub mode: BacktestMode,
    /// Optional `date,value` file (e.g. a published forecast) shown next to the ledger.
    pub reference_csv: Option<PathBuf>,
}

/// Drops whole-line `//` comments so sample configs can be annotated.
fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|l| if l.trim_start().starts_with("//") { "" } else { l })
        .collect::<Vec<_>>()
        .join("\n")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(&strip_comments(text)).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates `path`; relative paths inside become relative to its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.cache_dir);
        if let Some(p) = self.fixtures_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.backtest.reference_csv.as_mut() {
            fix(p);
        }
        for d in &mut self.datasets {
            if let Some(p) = d.path.as_mut() {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) || self.run_name.starts_with('.') {
            return bad(format!("run_name `{}` must be a plain directory name", self.run_name));
        }
        if self.datasets.is_empty() {
            return bad("datasets is empty".into());
        }
        let mut ids = BTreeSet::new();
        let mut stems = BTreeSet::new();
        for d in &self.datasets {
            if d.series_id.is_empty() || d.series_id.contains(['/', '\\']) {
                return bad(format!("invalid series id `{}`", d.series_id));
            }
            if d.series_id == FORECAST_COLUMN {
                return bad(format!("`{FORECAST_COLUMN}` is reserved for the target column"));
            }
            if !ids.insert(d.series_id.as_str()) {
                return bad(format!("series `{}` is listed twice", d.series_id));
            }
            if !stems.insert(store_stem(&d.series_id)) {
                return bad(format!("series `{}` collides with another after `.` → `_`", d.series_id));
            }
        }
        if !ids.contains(self.price_id.as_str()) {
            return bad(format!("price_id `{}` is not among the datasets", self.price_id));
        }
        self.split
            .validate()
            .or_else(|e| bad(format!("split: {e}")))?;
        let h = &self.hmm;
        if h.n_states < 2 || h.bw_iters == 0 || h.restarts == 0 || h.chunk == Some(0) {
            return bad("hmm: n_states ≥ 2, bw_iters ≥ 1, restarts ≥ 1 and chunk ≥ 1 are required".into());
        }
        let known = |n: &str| ids.contains(n) || n == FORECAST_COLUMN;
        let s = &self.search;
        for (a, b) in s.expert_edges.iter().chain(&s.forbidden_edges) {
            if !known(a) || !known(b) || a == b {
                return bad(format!("search edge {a} -> {b} does not join two distinct series"));
            }
        }
        if s.max_parents == Some(0) && !s.expert_edges.is_empty() {
            return bad("search: max_parents 0 forbids the expert edges".into());
        }
        if !(s.ess > 0.0) || !(self.fit.ess > 0.0) {
            return bad("ess must be positive".into());
        }
        Ok(())
    }
}
