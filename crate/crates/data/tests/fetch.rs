use std::cell::{Cell, RefCell};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use regimenet_core::pipeline::RawRecord;
use regimenet_data::{
    ApiKeys, Endpoints, FetchError, Fetcher, HttpResponse, HttpTransport, Origin, Source, SourceSpec, Transport,
    TransportError,
};

/// Replays canned responses and records every requested URL.
struct Scripted {
    replies: RefCell<Vec<HttpResponse>>,
    urls: RefCell<Vec<String>>,
    calls: Cell<usize>,
}

impl Scripted {
    fn new(replies: Vec<(u16, &str)>) -> Self {
        Self {
            replies: RefCell::new(
                replies
                    .into_iter()
                    .rev()
                    .map(|(status, b)| HttpResponse {
                        status,
                        body: b.into(),
                    })
                    .collect(),
            ),
            urls: RefCell::new(Vec::new()),
            calls: Cell::new(0),
        }
    }
}

impl Transport for Scripted {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        self.calls.set(self.calls.get() + 1);
        self.urls.borrow_mut().push(url.into());
        self.replies
            .borrow_mut()
            .pop()
            .ok_or_else(|| TransportError("no more replies".into()))
    }
}

const FRED_BODY: &str = r#"{"observations":[
 {"date":"2001-01-01","value":"29.6"},
 {"date":"2001-02-01","value":"."},
 {"date":"2001-03-01","value":"27.2"}]}"#;

fn keys() -> ApiKeys {
    ApiKeys {
        eia: Some("EIA-SECRET".into()),
        fred: Some("FRED-SECRET".into()),
    }
}

fn fast<T: Transport>(f: Fetcher<T>) -> Fetcher<T> {
    f.keys(keys()).retry(3, Duration::from_millis(1))
}

#[test]
fn network_fetch_is_cached_and_reused() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(vec![(200, FRED_BODY)]);
    let f = fast(Fetcher::new(dir.path(), &t));
    let spec = SourceSpec::new(Source::Fred, "WTISPLC");

    let (recs, origin) = f.fetch(&spec).unwrap();
    assert_eq!(origin, Origin::Network);
    assert_eq!(recs[1], RawRecord::new("2001-02-01", "-"));
    let url = t.urls.borrow()[0].clone();
    assert!(url.contains("series_id=WTISPLC") && url.contains("file_type=json"));

    let path = dir.path().join("fred").join("WTISPLC.csv");
    let bytes = fs::read(&path).unwrap();
    let (again, origin) = f.fetch(&spec).unwrap();
    assert_eq!(origin, Origin::Cache);
    assert_eq!(again, recs);
    assert_eq!(t.calls.get(), 1);
    assert_eq!(fs::read(&path).unwrap(), bytes);
}

#[test]
fn retries_server_errors_then_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(vec![(503, ""), (500, ""), (200, FRED_BODY)]);
    let f = fast(Fetcher::new(dir.path(), &t));
    let (recs, _) = f.fetch(&SourceSpec::new(Source::Fred, "X")).unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(t.calls.get(), 3);
}

#[test]
fn gives_up_after_three_attempts() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(vec![(502, ""), (502, ""), (502, ""), (200, FRED_BODY)]);
    let f = fast(Fetcher::new(dir.path(), &t));
    let err = f.fetch(&SourceSpec::new(Source::Fred, "X")).unwrap_err();
    assert!(matches!(err, FetchError::Http { status: Some(502), .. }), "{err}");
    assert_eq!(t.calls.get(), 3);
    assert!(!dir.path().join("fred").join("X.csv").exists());
}

#[test]
fn missing_series_is_not_found_without_retry() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(vec![(404, "")]);
    let f = fast(Fetcher::new(dir.path(), &t));
    assert!(matches!(
        f.fetch(&SourceSpec::new(Source::Eia, "NOPE")),
        Err(FetchError::NotFound(id)) if id == "NOPE"
    ));

    let t = Scripted::new(vec![(
        400,
        r#"{"error_code":400,"error_message":"Bad Request.  The series does not exist."}"#,
    )]);
    let f = fast(Fetcher::new(dir.path(), &t));
    assert!(matches!(f.fetch(&SourceSpec::new(Source::Fred, "NOPE")), Err(FetchError::NotFound(_))));
    assert_eq!(t.calls.get(), 1);
}

#[test]
fn keys_never_leak_into_errors() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(vec![(500, "FRED-SECRET"); 3]);
    let f = fast(Fetcher::new(dir.path(), &t));
    let err = f.fetch(&SourceSpec::new(Source::Fred, "X")).unwrap_err();
    let msg = format!("{err} {err:?}");
    assert!(!msg.contains("SECRET"), "{msg}");
}

#[test]
fn missing_key_names_the_variable() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(vec![]);
    let f = Fetcher::new(dir.path(), &t).keys(ApiKeys::default());
    let err = f.fetch(&SourceSpec::new(Source::Eia, "X")).unwrap_err();
    assert!(err.to_string().contains("EIA_API_KEY"), "{err}");
    assert_eq!(t.calls.get(), 0);
}

fn write_fixture(root: &Path, spec: &SourceSpec, text: &str) {
    let p = root.join(spec.relative_path());
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    fs::write(p, text).unwrap();
}

#[test]
fn offline_uses_fixtures_and_never_the_network() {
    let cache = tempfile::tempdir().unwrap();
    let fixtures = tempfile::tempdir().unwrap();
    let have = SourceSpec::new(Source::Eia, "STEO.PAPR_OPEC.M");
    let text = "date,value\n200001,30.1\n200002,-\n";
    write_fixture(fixtures.path(), &have, text);

    let t = Scripted::new(vec![(200, FRED_BODY)]);
    let f = fast(Fetcher::new(cache.path(), &t))
        .fixtures(fixtures.path())
        .offline(true);
    let (recs, origin) = f.fetch(&have).unwrap();
    assert_eq!(origin, Origin::Fixture);
    assert_eq!(recs, vec![RawRecord::new("200001", "30.1"), RawRecord::new("200002", "-")]);
    assert_eq!(fs::read_to_string(cache.path().join(have.relative_path())).unwrap(), text);

    let err = f.fetch(&SourceSpec::new(Source::Fred, "ABSENT")).unwrap_err();
    assert!(matches!(err, FetchError::Unavailable { .. }), "{err}");
    assert_eq!(t.calls.get(), 0);
}

#[test]
fn csv_source_reads_file_and_caches() {
    let cache = tempfile::tempdir().unwrap();
    let src = tempfile::tempdir().unwrap();
    let file = src.path().join("mine.csv");
    fs::write(&file, "date,value\n2010-01,1.5\n2010-02,2.5\n").unwrap();
    let t = Scripted::new(vec![]);
    let f = Fetcher::new(cache.path(), &t).offline(true);
    let spec = SourceSpec {
        source: Source::Csv,
        series_id: "mine".into(),
        path: Some(file),
    };
    let (recs, origin) = f.fetch(&spec).unwrap();
    assert_eq!(origin, Origin::File);
    assert_eq!(recs.len(), 2);
    assert_eq!(f.fetch(&spec).unwrap(), (recs, Origin::Cache));
}

/// One-connection-per-request HTTP server answering from a fixed table.
fn serve(routes: Vec<(&'static str, u16, &'static str)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            loop {
                let mut h = String::new();
                if reader.read_line(&mut h).unwrap() == 0 || h == "\r\n" {
                    break;
                }
            }
            let target = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            log.lock().unwrap().push(target.clone());
            let (status, body) = routes
                .iter()
                .find(|(needle, _, _)| target.contains(needle))
                .map(|&(_, s, b)| (s, b))
                .unwrap_or((404, ""));
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (format!("http://{addr}"), seen)
}

#[test]
fn real_http_round_trip_against_local_server() {
    let eia_body = r#"{"series":[{"series_id":"STEO.X.M","data":[["200003",3.5],["200002",null],["200001",1.25]]}]}"#;
    let (base, seen) = serve(vec![("series_id=STEO.X.M", 200, eia_body), ("WTISPLC", 200, FRED_BODY)]);
    let cache = tempfile::tempdir().unwrap();
    let f = Fetcher::new(cache.path(), HttpTransport::new(Duration::from_secs(5)).unwrap())
        .keys(keys())
        .retry(1, Duration::ZERO)
        .endpoints(Endpoints {
            eia: format!("{base}/series/"),
            fred: format!("{base}/fred/series/observations"),
        });

    let (eia, origin) = f.fetch(&SourceSpec::new(Source::Eia, "STEO.X.M")).unwrap();
    assert_eq!(origin, Origin::Network);
    assert_eq!(
        eia,
        vec![
            RawRecord::new("200003", "3.5"),
            RawRecord::new("200002", "-"),
            RawRecord::new("200001", "1.25"),
        ]
    );
    let (fred, _) = f.fetch(&SourceSpec::new(Source::Fred, "WTISPLC")).unwrap();
    assert_eq!(fred.len(), 3);
    assert!(matches!(f.fetch(&SourceSpec::new(Source::Fred, "GONE")), Err(FetchError::NotFound(_))));

    // cached files decode back to what was downloaded
    let offline = Fetcher::new(cache.path(), HttpTransport::new(Duration::from_secs(5)).unwrap()).offline(true);
    assert_eq!(offline.fetch(&SourceSpec::new(Source::Eia, "STEO.X.M")).unwrap().0, eia);
    assert_eq!(offline.fetch(&SourceSpec::new(Source::Fred, "WTISPLC")).unwrap().0, fred);
    assert_eq!(seen.lock().unwrap().len(), 3);
}
