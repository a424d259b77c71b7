use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn regimenet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regimenet"))
        .arg("--config")
        .arg(dir.join("cfg.json"))
        .args(args)
        .env_remove("EIA_API_KEY")
        .env_remove("FRED_API_KEY")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A workspace whose config reads the bundled fixtures.
fn workspace(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = repo().join("fixtures");
    let cfg = format!(
        r#"{{"run_name": "t", "seed": 11, "out_dir": "out", "cache_dir": "cache",
            "fixtures_dir": {:?}{extra}}}"#,
        fixtures.canonicalize().unwrap()
    );
    fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    dir
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn run_is_deterministic_and_equals_the_stage_sequence() {
    let a = workspace("");
    let b = workspace("");
    assert!(regimenet(a.path(), &["--offline", "run"]).status.success());
    for stage in ["fetch", "ingest", "discretize", "learn", "fit", "predict", "backtest"] {
        let o = regimenet(b.path(), &["--offline", stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let fa = files(&a.path().join("out/t"));
    assert_eq!(fa, files(&b.path().join("out/t")));
    for want in [
        "panels/train.csv",
        "panels/test_regimes.csv",
        "hmms/WTISPLC.hmm.json",
        "hmms/STEO_PAPR_OPEC_M.remap.json",
        "model/network.bn.json",
        "model/structure.dot",
        "predictions/test.csv",
        "predictions/errors.json",
        "backtest/ledger.csv",
        "backtest/summary.json",
    ] {
        assert!(fa.iter().any(|(p, _)| p == Path::new(want)), "missing {want}");
    }
    // re-running a stage rewrites identical bytes
    assert!(regimenet(a.path(), &["--offline", "learn"]).status.success());
    assert_eq!(fa, files(&a.path().join("out/t")));
}

#[test]
fn validation_errors_exit_1() {
    let d = workspace(r#", "colour": "red""#);
    let o = regimenet(d.path(), &["run"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("colour"));

    let d = workspace("");
    assert_eq!(regimenet(d.path(), &["--chunk", "0", "ingest"]).status.code(), Some(1));
    assert_eq!(regimenet(d.path(), &["--backtest-mode", "sideways", "backtest"]).status.code(), Some(1));
    assert_eq!(regimenet(d.path(), &["frobnicate"]).status.code(), Some(1));

    fs::write(d.path().join("cfg.json"), r#"{"run_name": "t"}"#).unwrap();
    let o = regimenet(d.path(), &["run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn missing_artifacts_name_the_producing_stage() {
    let d = workspace("");
    for (stage, producer) in [
        ("ingest", "fetch"),
        ("discretize", "ingest"),
        ("learn", "discretize"),
        ("fit", "learn"),
        ("predict", "fit"),
        ("backtest", "predict"),
        ("export-dot", "learn"),
    ] {
        let o = regimenet(d.path(), &[stage]);
        assert_eq!(o.status.code(), Some(2), "{stage}");
        assert!(
            stderr(&o).contains(&format!("run `regimenet {producer}` first")),
            "{stage}: {}",
            stderr(&o)
        );
    }
}

#[test]
fn learn_on_empty_training_panel_leaves_no_outputs() {
    let d = workspace("");
    let panels = d.path().join("out/t/panels");
    fs::create_dir_all(&panels).unwrap();
    fs::write(panels.join("train_regimes.csv"), "date,WTISPLC,forecast\n").unwrap();
    let o = regimenet(d.path(), &["learn"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no rows"), "{}", stderr(&o));
    assert!(!d.path().join("out/t/model").exists());
}

#[test]
fn offline_without_data_is_a_data_error() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("cfg.json"), r#"{"run_name": "t", "seed": 1}"#).unwrap();
    let o = regimenet(d.path(), &["--offline", "fetch"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("offline"), "{}", stderr(&o));
}

/// Counts connections and answers every request with the same FRED body.
fn fred_server(body: &'static str) -> (String, Arc<AtomicUsize>, Arc<std::sync::Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
    let (h, s) = (Arc::clone(&hits), Arc::clone(&seen));
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            h.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            s.lock().unwrap().push(line.clone());
            loop {
                let mut hdr = String::new();
                if reader.read_line(&mut hdr).unwrap() == 0 || hdr == "\r\n" {
                    break;
                }
            }
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (base, hits, seen)
}

#[test]
fn online_fetch_reads_the_key_from_the_environment() {
    let body = r#"{"observations":[{"date":"2001-01-01","value":"10"},{"date":"2001-02-01","value":"."}]}"#;
    let (base, hits, seen) = fred_server(body);
    let d = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"run_name": "t", "seed": 1, "endpoints": {{"fred": "{base}/obs"}},
            "search": {{"expert_edges": []}},
            "datasets": [{{"source": "fred", "series_id": "WTISPLC"}}]}}"#
    );
    fs::write(d.path().join("cfg.json"), cfg).unwrap();

    let o = regimenet(d.path(), &["fetch"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FRED_API_KEY"));
    assert_eq!(hits.load(Ordering::SeqCst), 0);

    let o = Command::new(env!("CARGO_BIN_EXE_regimenet"))
        .arg("--config")
        .arg(d.path().join("cfg.json"))
        .arg("fetch")
        .env("FRED_API_KEY", "from-env")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    assert!(seen.lock().unwrap()[0].contains("api_key=from-env"));
    assert!(!stderr(&o).contains("from-env"));
    let cached = fs::read_to_string(d.path().join("cache/fred/WTISPLC.csv")).unwrap();
    assert_eq!(cached, "date,value\n2001-01-01,10\n2001-02-01,-\n");
}

#[test]
fn flags_override_the_config() {
    let d = workspace("");
    let o = regimenet(d.path(), &["--offline", "--backtest-mode", "corrected", "--seed", "5", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(d.path().join("out/t/backtest/summary.json")).unwrap();
    assert!(summary.contains("\"corrected\""));

    let raw = workspace("");
    let o = regimenet(raw.path(), &["--offline", "--raw-labels", "--chunk", "4", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let remap = fs::read_to_string(raw.path().join("out/t/hmms/WTISPLC.remap.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&remap).unwrap();
    assert_eq!(v["to_canonical"], serde_json::json!([0, 1, 2]));
}

#[test]
fn dot_export_and_plot_data() {
    let d = workspace("");
    assert!(regimenet(d.path(), &["--offline", "run"]).status.success());
    let o = regimenet(d.path(), &["export-dot"]);
    assert!(o.status.success());
    let dot = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = dot.lines().collect();
    assert_eq!(lines.first(), Some(&"digraph \"regimes\" {"));
    assert_eq!(lines.last(), Some(&"}"));
    for l in &lines[1..lines.len() - 1] {
        assert!(dot_statement(l), "bad DOT statement {l}");
    }
    assert!(dot.contains("\"forecast\""));

    let o = regimenet(d.path(), &["plot-data"]);
    assert!(o.status.success());
    let listed = String::from_utf8(o.stdout).unwrap();
    assert_eq!(listed.lines().count(), 3 * 24);
    let f = fs::read_to_string(d.path().join("out/t/panels/plot/WTISPLC.test.csv")).unwrap();
    let mut rows = f.lines();
    assert_eq!(rows.next(), Some("date,value,regime"));
    assert!(rows.all(|r| r.split(',').nth(2).is_some_and(|s| ["0", "1", "2"].contains(&s))));
}

/// Accepts `  "a";` and `  "a" -> "b";` with backslash escapes inside the quotes.
fn dot_statement(line: &str) -> bool {
    fn quoted(s: &str) -> Option<&str> {
        let rest = s.strip_prefix('"')?;
        let mut escaped = false;
        for (i, c) in rest.char_indices() {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => return Some(&rest[i + 1..]),
                _ => {}
            }
        }
        None
    }
    let Some(body) = line.strip_prefix("  ").and_then(|l| l.strip_suffix(';')) else {
        return false;
    };
    match quoted(body) {
        Some("") => true,
        Some(rest) => rest.strip_prefix(" -> ").and_then(quoted) == Some(""),
        None => false,
    }
}
