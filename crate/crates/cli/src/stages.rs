use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use regimenet_core::backtest::{
    buy_and_hold, compare, regime_error, simulate_mode, write_side_by_side, BacktestMode, ErrorReport,
};
use regimenet_core::pipeline::{
    add_targets, align, clean_series, discretize_apply, discretize_train, read_raw_csv, save_models, split,
    store_stem, Month, Panel, RegimePanel, FORECAST_COLUMN,
};
use regimenet_core::structure::{hill_climb, write_trace_csv, SearchConfig};
use regimenet_core::{fit_bayesian, map_predict, BayesianNetwork, Dag};
use regimenet_data::{ApiKeys, Fetcher, HttpTransport, Origin, Transport};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const SPLITS: [&str; 3] = ["train", "validation", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Fetch,
    Ingest,
    Discretize,
    Learn,
    Fit,
    Predict,
    Backtest,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [
        Stage::Fetch,
        Stage::Ingest,
        Stage::Discretize,
        Stage::Learn,
        Stage::Fit,
        Stage::Predict,
        Stage::Backtest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Fetch => "fetch",
            Stage::Ingest => "ingest",
            Stage::Discretize => "discretize",
            Stage::Learn => "learn",
            Stage::Fit => "fit",
            Stage::Predict => "predict",
            Stage::Backtest => "backtest",
        }
    }
}

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub offline: bool,
    pub seed: Option<u64>,
    pub raw_labels: bool,
    pub chunk: Option<usize>,
    pub backtest_mode: Option<BacktestMode>,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.raw_labels {
            cfg.hmm.raw_labels = true;
        }
        if self.chunk.is_some() {
            cfg.hmm.chunk = self.chunk;
        }
        if let Some(m) = self.backtest_mode {
            cfg.backtest.mode = m;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(d) = &self.cache_dir {
            cfg.cache_dir = d.clone();
        }
        cfg.validate()
    }
}

/// The structure file written by `learn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedStructure {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
    pub score: f64,
}

impl LearnedStructure {
    pub fn dag(&self) -> Result<Dag> {
        Ok(Dag::from_edges(self.nodes.clone(), self.edges.clone())?)
    }
}

#[derive(Debug, Clone, Serialize)]
struct SplitErrors {
    rows: usize,
    fallback_rows: usize,
    /// Predicted next-month regime against the realized one.
    against_forecast: ErrorReport,
    /// Predicted next-month regime against the current price regime, as the original notebook scored it.
    against_price: ErrorReport,
}

pub struct Workspace<T: Transport = HttpTransport> {
    pub cfg: RunConfig,
    offline: bool,
    transport: Option<T>,
}

impl Workspace<HttpTransport> {
    pub fn new(cfg: RunConfig, offline: bool) -> Self {
        Self {
            cfg,
            offline,
            transport: None,
        }
    }
}

impl<T: Transport> Workspace<T> {
    /// A workspace whose downloads go through `transport`.
    pub fn with_transport(cfg: RunConfig, offline: bool, transport: T) -> Self {
        Self {
            cfg,
            offline,
            transport: Some(transport),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.cfg.out_dir.join(&self.cfg.run_name)
    }

    fn path(&self, sub: &str, file: &str) -> PathBuf {
        self.run_dir().join(sub).join(file)
    }

    pub fn panel_path(&self, split: &str) -> PathBuf {
        self.path("panels", &format!("{split}.csv"))
    }

    pub fn regimes_path(&self, split: &str) -> PathBuf {
        self.path("panels", &format!("{split}_regimes.csv"))
    }

    pub fn hmm_dir(&self) -> PathBuf {
        self.run_dir().join("hmms")
    }

    pub fn structure_path(&self) -> PathBuf {
        self.path("model", "structure.json")
    }

    pub fn network_path(&self) -> PathBuf {
        self.path("model", "network.bn.json")
    }

    pub fn predictions_path(&self, split: &str) -> PathBuf {
        self.path("predictions", &format!("{split}.csv"))
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        log::info!("stage {}", stage.name());
        match stage {
            Stage::Fetch => self.fetch(),
            Stage::Ingest => self.ingest(),
            Stage::Discretize => self.discretize(),
            Stage::Learn => self.learn(),
            Stage::Fit => self.fit(),
            Stage::Predict => self.predict(),
            Stage::Backtest => self.backtest(),
        }
    }

    pub fn run_all(&self) -> Result<()> {
        Stage::PIPELINE.iter().try_for_each(|&s| self.run_stage(s))
    }

    pub fn fetch(&self) -> Result<()> {
        let fallback;
        let transport: &dyn Transport = match &self.transport {
            Some(t) => t,
            None => {
                fallback = HttpTransport::new(Duration::from_secs(30)).map_err(|e| CliError::Data(e.to_string()))?;
                &fallback
            }
        };
        let mut fetcher = Fetcher::new(&self.cfg.cache_dir, transport)
            .offline(self.offline)
            .keys(ApiKeys::from_env())
            .endpoints(self.cfg.endpoints.resolve());
        if let Some(f) = &self.cfg.fixtures_dir {
            fetcher = fetcher.fixtures(f);
        }
        for spec in &self.cfg.datasets {
            let (records, origin) = fetcher.fetch(spec)?;
            let from = match origin {
                Origin::Cache => "cache",
                Origin::Fixture => "fixtures",
                Origin::File => "file",
                Origin::Network => "network",
            };
            log::info!("{} {}: {} records from {from}", spec.source, spec.series_id, records.len());
        }
        Ok(())
    }

    pub fn ingest(&self) -> Result<()> {
        let mut series = Vec::with_capacity(self.cfg.datasets.len());
        for spec in &self.cfg.datasets {
            let p = self.cfg.cache_dir.join(spec.relative_path());
            let file = open(&p, Stage::Fetch)?;
            let records = read_raw_csv(file)?;
            series.push(clean_series(&spec.series_id, &records)?);
        }
        let panel = add_targets(&align(&series)?, &self.cfg.price_id)?;
        let (train, vald, test) = split(&panel, &self.cfg.split)?;
        log::info!(
            "panel {} rows ({} .. {}); split {}/{}/{}",
            panel.len(),
            panel.dates.first().map(Month::to_string).unwrap_or_default(),
            panel.dates.last().map(Month::to_string).unwrap_or_default(),
            train.len(),
            vald.len(),
            test.len()
        );
        let mut outputs = vec![(self.panel_path("aligned"), panel_bytes(&panel)?)];
        for (name, p) in SPLITS.iter().zip([&train, &vald, &test]) {
            outputs.push((self.panel_path(name), panel_bytes(p)?));
        }
        write_all(&outputs)
    }

    fn read_panel(&self, split: &str) -> Result<Panel> {
        Ok(Panel::read_csv(open(&self.panel_path(split), Stage::Ingest)?)?)
    }

    fn read_regimes(&self, split: &str) -> Result<RegimePanel> {
        let file = open(&self.regimes_path(split), Stage::Discretize)?;
        Ok(RegimePanel::read_csv(file, self.cfg.hmm.n_states)?)
    }

    pub fn discretize(&self) -> Result<()> {
        let panels: Vec<Panel> = SPLITS.iter().map(|s| self.read_panel(s)).collect::<Result<_>>()?;
        let price = &self.cfg.price_id;
        let (train, models) = discretize_train(&panels[0], price, &self.cfg.hmm, self.cfg.seed)?;
        let vald = discretize_apply(&panels[1], &models, price)?;
        let test = discretize_apply(&panels[2], &models, price)?;

        let mut outputs = Vec::new();
        for (name, r) in SPLITS.iter().zip([&train, &vald, &test]) {
            let mut buf = Vec::new();
            r.write_csv(&mut buf)?;
            outputs.push((self.regimes_path(name), buf));
        }
        // model files of series no longer configured must not linger
        let dir = self.hmm_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        save_models(&dir, &models)?;
        write_all(&outputs)
    }

    pub fn learn(&self) -> Result<()> {
        let train = self.read_regimes("train")?;
        if train.is_empty() {
            return Err(CliError::Data(format!(
                "training panel {} has no rows",
                self.regimes_path("train").display()
            )));
        }
        let s = &self.cfg.search;
        let mut seed_dag = Dag::new(train.data.names().iter().cloned())?;
        for (a, b) in &s.expert_edges {
            let (u, v) = (seed_dag.require(a)?, seed_dag.require(b)?);
            seed_dag.add_edge(u, v)?;
        }
        let config = SearchConfig {
            score: s.score_fn(),
            tabu_size: s.tabu_size,
            max_iters: s.max_iters,
            n_random_ops_at_local_max: s.random_ops,
            n_restarts: s.restarts,
            max_parents: s.max_parents,
            forbidden_edges: s.forbidden_edges.iter().cloned().collect(),
            seed: self.cfg.seed,
            ..SearchConfig::default()
        };
        let outcome = hill_climb(&train.data, &seed_dag, &config)?;
        log::info!("learned {} edges, score {:.4}", outcome.dag.edge_count(), outcome.score);
        let learned = LearnedStructure {
            nodes: outcome.dag.names().to_vec(),
            edges: outcome.dag.named_edges(),
            score: outcome.score,
        };
        let mut trace = Vec::new();
        write_trace_csv(&outcome.trace, &mut trace)?;
        write_all(&[
            (self.structure_path(), json_bytes(&learned)?),
            (self.path("model", "structure.dot"), outcome.dag.to_dot("regimes").into_bytes()),
            (self.path("model", "search_trace.csv"), trace),
        ])
    }

    pub fn read_structure(&self) -> Result<LearnedStructure> {
        let text = read_to_string(&self.structure_path(), Stage::Learn)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn fit(&self) -> Result<()> {
        let structure = self.read_structure()?;
        let train = self.read_regimes("train")?;
        let net = fit_bayesian(&structure.dag()?, &train.data, self.cfg.fit.prior())?;
        write_all(&[(self.network_path(), net.to_json().into_bytes())])
    }

    pub fn predict(&self) -> Result<()> {
        let net = BayesianNetwork::from_json(&read_to_string(&self.network_path(), Stage::Fit)?)?;
        let price = &self.cfg.price_id;
        let mut outputs = Vec::new();
        let mut summary = serde_json::Map::new();
        for split in &SPLITS[1..] {
            let regimes = self.read_regimes(split)?;
            let need = |id: &str| {
                regimes
                    .column(id)
                    .ok_or_else(|| CliError::Data(format!("{split} regimes lack column `{id}`")))
            };
            let (actual, price_labels) = (need(FORECAST_COLUMN)?, need(price)?);
            let pred = map_predict(&net, &regimes.data, FORECAST_COLUMN)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["date", "predicted", FORECAST_COLUMN, price.as_str(), "fallback"])?;
            for i in 0..regimes.len() {
                w.write_record([
                    regimes.dates[i].to_string(),
                    pred.states[i].to_string(),
                    actual[i].to_string(),
                    price_labels[i].to_string(),
                    u8::from(pred.fallback[i]).to_string(),
                ])?;
            }
            outputs.push((self.predictions_path(split), w.into_inner().map_err(|e| CliError::Data(e.to_string()))?));
            if regimes.is_empty() {
                log::warn!("{split} panel is empty; no error report");
                continue;
            }
            let report = SplitErrors {
                rows: regimes.len(),
                fallback_rows: pred.fallback.iter().filter(|&&f| f).count(),
                against_forecast: regime_error(actual, &pred.states)?,
                against_price: regime_error(price_labels, &pred.states)?,
            };
            log::info!(
                "{split}: direct error {:.4}, lag-1 error against price {:.4}",
                report.against_forecast.direct_error,
                report.against_price.lag1_error
            );
            summary.insert(split.to_string(), serde_json::to_value(report)?);
        }
        outputs.push((self.path("predictions", "errors.json"), json_bytes(&summary)?));
        write_all(&outputs)
    }

    /// Predicted test-split signals with their month.
    fn read_signals(&self) -> Result<Vec<(Month, usize)>> {
        let file = open(&self.predictions_path("test"), Stage::Predict)?;
        let mut rdr = csv::Reader::from_reader(file);
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let bad = || CliError::Data(format!("malformed prediction row {:?}", rec));
            let date: Month = rec.get(0).ok_or_else(bad)?.parse()?;
            let signal: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            out.push((date, signal));
        }
        Ok(out)
    }

    pub fn backtest(&self) -> Result<()> {
        let signals = self.read_signals()?;
        let test = self.read_panel("test")?;
        let price_col = test
            .column(&self.cfg.price_id)
            .ok_or_else(|| CliError::Data(format!("test panel lacks `{}`", self.cfg.price_id)))?;
        let by_date: HashMap<Month, f64> = test.dates.iter().copied().zip(price_col.iter().copied()).collect();
        // inner join of prices and signals on month
        let (mut dates, mut prices, mut sig) = (Vec::new(), Vec::new(), Vec::new());
        for (d, s) in signals {
            if let Some(&p) = by_date.get(&d) {
                dates.push(d);
                prices.push(p);
                sig.push(s);
            }
        }
        if dates.len() < 2 {
            return Err(CliError::Data(format!(
                "need at least 2 priced test months to backtest, have {}",
                dates.len()
            )));
        }
        let mode = self.cfg.backtest.mode;
        let ledger = simulate_mode(mode, &dates, &prices, &sig)?;
        let bench = buy_and_hold(&dates, &prices)?;
        let cmp = compare(&ledger, &bench, mode)?;
        log::info!(
            "{mode} strategy final equity {:.3} vs buy-and-hold {:.3}",
            cmp.strategy.final_equity,
            cmp.buy_and_hold.final_equity
        );
        let mut ledger_csv = Vec::new();
        ledger.write_csv(&mut ledger_csv)?;
        let mut bench_csv = Vec::new();
        bench.write_csv(&mut bench_csv)?;
        let mut outputs = vec![
            (self.path("backtest", "ledger.csv"), ledger_csv),
            (self.path("backtest", "buy_and_hold.csv"), bench_csv),
            (self.path("backtest", "summary.json"), json_bytes(&cmp)?),
        ];
        if let Some(p) = &self.cfg.backtest.reference_csv {
            let reference = clean_series("reference", &read_raw_csv(open_plain(p)?)?)?;
            let pairs: Vec<(Month, f64)> = reference.dates.into_iter().zip(reference.values).collect();
            let mut buf = Vec::new();
            write_side_by_side(&ledger, &pairs, &mut buf)?;
            outputs.push((self.path("backtest", "side_by_side.csv"), buf));
        }
        write_all(&outputs)
    }

    /// Per-series `date,value,regime` files for each split, for regime-coloured plots.
    pub fn plot_data(&self) -> Result<Vec<PathBuf>> {
        let mut outputs = Vec::new();
        for split in SPLITS {
            let panel = self.read_panel(split)?;
            let regimes = self.read_regimes(split)?;
            let values: HashMap<Month, usize> = panel.dates.iter().enumerate().map(|(i, &d)| (d, i)).collect();
            for id in &panel.ids {
                let (Some(col), Some(labels)) = (panel.column(id), regimes.column(id)) else {
                    return Err(CliError::Data(format!("series `{id}` is missing from the {split} regimes")));
                };
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["date", "value", "regime"])?;
                for (d, label) in regimes.dates.iter().zip(labels) {
                    let i = values
                        .get(d)
                        .ok_or_else(|| CliError::Data(format!("{split} regimes hold month {d} absent from the panel")))?;
                    w.write_record([d.to_string(), col[*i].to_string(), label.to_string()])?;
                }
                let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
                outputs.push((self.path("panels", &format!("plot/{}.{split}.csv", store_stem(id))), bytes));
            }
        }
        write_all(&outputs)?;
        Ok(outputs.into_iter().map(|(p, _)| p).collect())
    }

    pub fn export_dot(&self) -> Result<String> {
        Ok(self.read_structure()?.dag()?.to_dot("regimes"))
    }
}

fn open(path: &Path, producer: Stage) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingArtifact {
            path: path.to_path_buf(),
            stage: producer.name(),
        },
        _ => CliError::Data(format!("{}: {e}", path.display())),
    })
}

fn open_plain(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_to_string(path: &Path, producer: Stage) -> Result<String> {
    let mut s = String::new();
    std::io::Read::read_to_string(&mut open(path, producer)?, &mut s)?;
    Ok(s)
}

fn panel_bytes(p: &Panel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    p.write_csv(&mut buf)?;
    Ok(buf)
}

fn json_bytes(v: &impl Serialize) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

/// Writes each file through a temporary sibling and a rename, after every
/// output of the stage has been computed.
fn write_all(outputs: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    for (path, bytes) in outputs {
        let dir = path.parent().expect("artifact paths have a parent");
        fs::create_dir_all(dir)?;
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
    }
    Ok(())
}
