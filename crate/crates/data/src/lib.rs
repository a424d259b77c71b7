//! Series acquisition from the EIA and FRED web APIs or local CSV files.
//!
//! Every fetched series lands in a cache laid out as
//! `<cache>/<source>/<series_id>.csv` with a `date,value` header. Bundled
//! fixtures use the same layout, so a fixtures directory can stand in for the
//! network entirely.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use regimenet_core::pipeline::{read_raw_csv, write_raw_csv, RawRecord, MISSING_TOKEN};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

mod transport;

pub use transport::{HttpResponse, HttpTransport, Transport, TransportError};

pub const EIA_KEY_VAR: &str = "EIA_API_KEY";
pub const FRED_KEY_VAR: &str = "FRED_API_KEY";

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("series `{0}` was not found at its source")]
    NotFound(String),
    #[error("fetching `{series}` failed: {detail}")]
    Http {
        series: String,
        status: Option<u16>,
        detail: String,
    },
    #[error("`{series}` is not cached and {reason}")]
    Unavailable { series: String, reason: String },
    #[error("malformed response for `{series}`: {detail}")]
    Malformed { series: String, detail: String },
    #[error(transparent)]
    Pipeline(#[from] regimenet_core::pipeline::PipelineError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FetchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Eia,
    Fred,
    Csv,
}

impl Source {
    pub fn dir_name(self) -> &'static str {
        match self {
            Source::Eia => "eia",
            Source::Fred => "fred",
            Source::Csv => "csv",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// Where a series comes from. API keys are never part of a spec; they are read
/// from `EIA_API_KEY` / `FRED_API_KEY` when a download is needed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub source: Source,
    pub series_id: String,
    /// CSV sources only: file to read. Defaults to the cache/fixture location.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl SourceSpec {
    pub fn new(source: Source, series_id: impl Into<String>) -> Self {
        Self {
            source,
            series_id: series_id.into(),
            path: None,
        }
    }

    /// Path of this series below a cache or fixtures root.
    pub fn relative_path(&self) -> PathBuf {
        PathBuf::from(self.source.dir_name()).join(format!("{}.csv", self.series_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoints {
    pub eia: String,
    pub fred: String,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            eia: "https://api.eia.gov/series/".into(),
            fred: "https://api.stlouisfed.org/fred/series/observations".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ApiKeys {
    pub eia: Option<String>,
    pub fred: Option<String>,
}

impl ApiKeys {
    pub fn from_env() -> Self {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        Self {
            eia: get(EIA_KEY_VAR),
            fred: get(FRED_KEY_VAR),
        }
    }
}

/// Whether a fetch was served locally or downloaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Cache,
    Fixture,
    File,
    Network,
}

pub struct Fetcher<T: Transport> {
    cache_dir: PathBuf,
    fixtures_dir: Option<PathBuf>,
    offline: bool,
    transport: T,
    keys: ApiKeys,
    endpoints: Endpoints,
    attempts: u32,
    backoff: Duration,
}

impl<T: Transport> Fetcher<T> {
    pub fn new(cache_dir: impl Into<PathBuf>, transport: T) -> Self {
        Self {
            cache_dir: cache_dir.into(),
            fixtures_dir: None,
            offline: false,
            transport,
            keys: ApiKeys::default(),
            endpoints: Endpoints::default(),
            attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn fixtures(mut self, dir: impl Into<PathBuf>) -> Self {
        self.fixtures_dir = Some(dir.into());
        self
    }

    /// Forbid network access; only cache, fixtures and CSV files are used.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn keys(mut self, keys: ApiKeys) -> Self {
        self.keys = keys;
        self
    }

    pub fn endpoints(mut self, endpoints: Endpoints) -> Self {
        self.endpoints = endpoints;
        self
    }

    /// Total attempts per download and the delay before the first retry (doubled each time).
    pub fn retry(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn cache_path(&self, spec: &SourceSpec) -> PathBuf {
        self.cache_dir.join(spec.relative_path())
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Raw records for `spec`, from the first of: cache, fixtures, CSV path, network.
    /// Anything not already cached is written to the cache.
    pub fn fetch(&self, spec: &SourceSpec) -> Result<(Vec<RawRecord>, Origin)> {
        let cached = self.cache_path(spec);
        if cached.is_file() {
            return Ok((read_records(&cached)?, Origin::Cache));
        }
        if let Some(fx) = &self.fixtures_dir {
            let p = fx.join(spec.relative_path());
            if p.is_file() {
                let recs = read_records(&p)?;
                self.store(spec, &recs)?;
                return Ok((recs, Origin::Fixture));
            }
        }
        if spec.source == Source::Csv {
            let Some(p) = &spec.path else {
                return Err(FetchError::Unavailable {
                    series: spec.series_id.clone(),
                    reason: "no CSV path was given".into(),
                });
            };
            let recs = read_records(p)?;
            self.store(spec, &recs)?;
            return Ok((recs, Origin::File));
        }
        if self.offline {
            return Err(FetchError::Unavailable {
                series: spec.series_id.clone(),
                reason: "offline mode forbids downloading it".into(),
            });
        }
        let recs = self.download(spec)?;
        self.store(spec, &recs)?;
        Ok((recs, Origin::Network))
    }

    fn download(&self, spec: &SourceSpec) -> Result<Vec<RawRecord>> {
        let id = &spec.series_id;
        let (key, var) = match spec.source {
            Source::Eia => (&self.keys.eia, EIA_KEY_VAR),
            Source::Fred => (&self.keys.fred, FRED_KEY_VAR),
            Source::Csv => unreachable!("csv sources never download"),
        };
        let key = key.as_deref().ok_or_else(|| FetchError::Unavailable {
            series: id.clone(),
            reason: format!("{var} is not set"),
        })?;
        let url = match spec.source {
            Source::Eia => url::Url::parse_with_params(&self.endpoints.eia, [("api_key", key), ("series_id", id)]),
            _ => url::Url::parse_with_params(
                &self.endpoints.fred,
                [("series_id", id.as_str()), ("api_key", key), ("file_type", "json")],
            ),
        }
        .map_err(|e| FetchError::Http {
            series: id.clone(),
            status: None,
            detail: format!("bad endpoint: {e}"),
        })?;

        let mut delay = self.backoff;
        let mut last = None;
        for attempt in 1..=self.attempts {
            log::info!("downloading {} `{id}` (attempt {attempt})", spec.source);
            match self.transport.get(url.as_str()) {
                Ok(resp) if resp.status == 200 => return parse_body(spec, &resp.body),
                Ok(resp) if resp.status == 404 || is_missing_series(spec.source, &resp.body) => {
                    return Err(FetchError::NotFound(id.clone()));
                }
                Ok(resp) if (400..500).contains(&resp.status) && resp.status != 429 => {
                    return Err(FetchError::Http {
                        series: id.clone(),
                        status: Some(resp.status),
                        detail: format!("HTTP {}", resp.status),
                    });
                }
                Ok(resp) => {
                    last = Some(FetchError::Http {
                        series: id.clone(),
                        status: Some(resp.status),
                        detail: format!("HTTP {}", resp.status),
                    })
                }
                Err(e) => {
                    last = Some(FetchError::Http {
                        series: id.clone(),
                        status: None,
                        detail: e.to_string(),
                    })
                }
            }
            if attempt < self.attempts {
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Atomic write: a temp file in the destination directory is renamed into place.
    fn store(&self, spec: &SourceSpec, records: &[RawRecord]) -> Result<()> {
        let dest = self.cache_path(spec);
        let dir = dest.parent().expect("cache path has a parent");
        let io = |source| FetchError::Io {
            path: dest.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        write_raw_csv(records, &mut tmp)?;
        tmp.flush().map_err(io)?;
        tmp.persist(&dest).map_err(|e| io(e.error))?;
        Ok(())
    }
}

fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let file = fs::File::open(path).map_err(|source| FetchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(read_raw_csv(file)?)
}

fn is_missing_series(source: Source, body: &str) -> bool {
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return false;
    };
    match source {
        // the legacy API answers 200 with {"data": {"error": "invalid series_id ..."}}
        Source::Eia => v
            .pointer("/data/error")
            .and_then(Value::as_str)
            .is_some_and(|e| e.to_ascii_lowercase().contains("series")),
        Source::Fred => v
            .get("error_message")
            .and_then(Value::as_str)
            .is_some_and(|e| e.contains("does not exist")),
        Source::Csv => false,
    }
}

fn token(v: &Value) -> String {
    match v {
        Value::Null => MISSING_TOKEN.to_string(),
        Value::String(s) if s.trim() == "." => MISSING_TOKEN.to_string(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Converts an API response body into raw records.
pub fn parse_body(spec: &SourceSpec, body: &str) -> Result<Vec<RawRecord>> {
    let bad = |detail: &str| FetchError::Malformed {
        series: spec.series_id.clone(),
        detail: detail.to_string(),
    };
    let v: Value = serde_json::from_str(body).map_err(|e| bad(&e.to_string()))?;
    match spec.source {
        Source::Eia => {
            if is_missing_series(Source::Eia, body) {
                return Err(FetchError::NotFound(spec.series_id.clone()));
            }
            let rows = v
                .pointer("/series/0/data")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("no series[0].data array"))?;
            rows.iter()
                .map(|row| match row.as_array().map(Vec::as_slice) {
                    Some([d, val, ..]) => Ok(RawRecord::new(token(d), token(val))),
                    _ => Err(bad("data rows must be [date, value] pairs")),
                })
                .collect()
        }
        Source::Fred => {
            let rows = v
                .get("observations")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("no observations array"))?;
            rows.iter()
                .map(|o| match (o.get("date"), o.get("value")) {
                    (Some(d), Some(val)) => Ok(RawRecord::new(token(d), token(val))),
                    _ => Err(bad("observation without date or value")),
                })
                .collect()
        }
        Source::Csv => Err(bad("CSV sources have no API body")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eia_body() {
        let spec = SourceSpec::new(Source::Eia, "TOTAL.X.M");
        let body = r#"{"series":[{"data":[["200002", 12.5], ["200001", null]]}]}"#;
        let r = parse_body(&spec, body).unwrap();
        assert_eq!(r, vec![RawRecord::new("200002", "12.5"), RawRecord::new("200001", "-")]);
        let missing = r#"{"request":{},"data":{"error":"invalid series_id. For key registration, ..."}}"#;
        assert!(matches!(parse_body(&spec, missing), Err(FetchError::NotFound(_))));
        assert!(matches!(parse_body(&spec, "{}"), Err(FetchError::Malformed { .. })));
    }

    #[test]
    fn fred_dot_is_missing() {
        let spec = SourceSpec::new(Source::Fred, "WTISPLC");
        let body = r#"{"observations":[{"date":"2000-01-01","value":"."},{"date":"2000-02-01","value":"27.2"}]}"#;
        let r = parse_body(&spec, body).unwrap();
        assert_eq!(r[0].value, MISSING_TOKEN);
        assert_eq!(r[1], RawRecord::new("2000-02-01", "27.2"));
    }

    #[test]
    fn spec_paths() {
        let s = SourceSpec::new(Source::Fred, "CPIAUCSL");
        assert_eq!(s.relative_path(), PathBuf::from("fred").join("CPIAUCSL.csv"));
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"source":"fred","series_id":"CPIAUCSL"}"#);
        assert!(serde_json::from_str::<SourceSpec>(r#"{"source":"fred","series_id":"X","api_key":"k"}"#).is_err());
    }
}
