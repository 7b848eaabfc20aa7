mod common;

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use patchsearch::dataset::SynthSpec;
use patchsearch::embedder::read_embeddings_tsv;
use patchsearch::embedder::ReferenceEmbedder;
use patchsearch::index::IndexParams;
use patchsearch::pipeline::load_database;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_patchsearch"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn patchsearch")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    _dir: TempDir,
    root: PathBuf,
    store: PathBuf,
    db: PathBuf,
}

/// Runs synth and build once through the binary; later tests read the result.
fn workspace() -> &'static Workspace {
    static W: OnceLock<Workspace> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let spec = SynthSpec {
            n_slides: 2,
            slide_width_px: 2400,
            slide_height_px: 2400,
            region_size_px: 800,
            ..common::small_spec(3)
        };
        let spec_path = root.join("spec.json");
        std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
        let ws = Workspace {
            _dir: dir,
            store: root.join("slides"),
            db: root.join("db/cli.db"),
            root,
        };
        let synth = stdout_json(&run(&[
            "synth",
            "--out",
            p(&ws.store),
            "--spec",
            p(&spec_path),
        ]));
        assert_eq!(synth["slides"], 2);
        let report = stdout_json(&run(&[
            "--seed",
            "9",
            "build",
            "--store",
            p(&ws.store),
            "--out",
            p(&ws.db),
            "--mag",
            "40X",
            "--queries-per-class",
            "2",
            "--db-per-class",
            "6",
            "--n-shards",
            "2",
        ]));
        assert_eq!(report["db_patches"], 54, "{report}");
        ws
    })
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"], &["query", "--help"]] {
        assert_eq!(run(args).status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &[][..],
        &["frobnicate"],
        &["query", "--slide", "x"],
        &["--threads", "0", "synth", "--out", "/tmp/x"],
    ] {
        assert_eq!(run(args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.db");
    let out = run(&[
        "export-embeddings",
        "--db",
        p(&missing),
        "--out",
        p(&dir.path().join("x.tsv")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "sede = 3\n").unwrap();
    let out = run(&["--config", p(&bad_cfg), "synth", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let ws = workspace();
    let out = run(&[
        "query",
        "--db",
        p(&ws.db),
        "--store",
        p(&ws.store),
        "--slide",
        "0",
        "--x",
        "0",
        "--y",
        "0",
        "-w",
        "150",
        "--h",
        "150",
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_is_idempotent() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let spec = ws.root.join("spec.json");
    let again = dir.path().join("slides");
    stdout_json(&run(&["synth", "--out", p(&again), "--spec", p(&spec)]));
    stdout_json(&run(&["synth", "--out", p(&again), "--spec", p(&spec)]));
    let read = |root: &Path, rel: &str| std::fs::read(root.join(rel)).unwrap();
    for rel in [
        "manifest.json",
        "annotations.json",
        "0/0/0_0.png",
        "1/1/2_1.png",
    ] {
        assert_eq!(read(&again, rel), read(&ws.store, rel), "{rel}");
    }
}

#[test]
fn query_prints_ranked_json_and_table() {
    let ws = workspace();
    let base = [
        "--seed",
        "4",
        "query",
        "--db",
        p(&ws.db),
        "--store",
        p(&ws.store),
        "--slide",
        "1",
        "--x",
        "300",
        "--y",
        "300",
        "-w",
        "300",
        "--h",
        "300",
        "--k",
        "3",
    ];
    let v = stdout_json(&run(&base));
    assert_eq!(v["seed"], 4);
    let results = v["results"].as_array().unwrap();
    assert!(!results.is_empty() && results.len() <= 3);
    let d: Vec<f64> = results
        .iter()
        .map(|r| r["distance"].as_f64().unwrap())
        .collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));

    let mut table = base.to_vec();
    table.extend(["--format", "table"]);
    let out = run(&table);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("rank\tpatch_id"));
    assert!(text.lines().filter(|l| !l.starts_with('#')).count() == results.len() + 1);

    let mut zero = base.to_vec();
    zero[base.len() - 1] = "0";
    assert_eq!(run(&zero).status.code(), Some(1));
}

#[test]
fn eval_writes_reports() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let (out, csv, tsv) = (
        dir.path().join("eval.json"),
        dir.path().join("c.csv"),
        dir.path().join("s.tsv"),
    );
    let status = run(&[
        "--seed",
        "21",
        "eval",
        "--db",
        p(&ws.db),
        "--store",
        p(&ws.store),
        "--k",
        "3",
        "--random-baseline",
        "--sweep-ks",
        "1,3",
        "--sweep-sizes",
        "2,6",
        "--out",
        p(&out),
        "--confusion-csv",
        p(&csv),
        "--sweep-tsv",
        p(&tsv),
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let v: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["seed"], 21);
    assert!(v["engine"].is_object());
    assert!(v["random"].is_object());
    assert!(v["engine"]["baseline_top_k"].is_number(), "{}", v["engine"]);
    assert!(!v["engine"]["tests"].as_array().unwrap().is_empty());
    // Two sizes by two ks at one magnification.
    assert_eq!(v["sweep"].as_array().unwrap().len(), 4);
    assert_eq!(std::fs::read_to_string(&tsv).unwrap().lines().count(), 5);
    let csv = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv.lines().count(), 10, "{csv}");
}

#[test]
fn export_round_trips_through_tsv() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("emb.tsv");
    let v = stdout_json(&run(&[
        "export-embeddings",
        "--db",
        p(&ws.db),
        "--out",
        p(&tsv),
    ]));
    let loaded = load_database(&ws.db, &IndexParams::default(), &ReferenceEmbedder).unwrap();
    let entries = loaded.db.entries();
    assert_eq!(v["rows"].as_u64().unwrap() as usize, entries.len());
    assert_eq!(entries.len(), 54 * 8);
    let rows = read_embeddings_tsv(&tsv).unwrap();
    assert_eq!(rows.len(), entries.len());
    for (row, e) in rows.iter().zip(&entries) {
        assert_eq!(&row.entry, e);
        let want: Vec<String> = loaded.records[&e.patch.patch_id]
            .labels
            .histologic_features
            .iter()
            .cloned()
            .collect();
        assert!(
            want.iter().all(|l| row.labels.contains(l)),
            "{:?} vs {want:?}",
            row.labels
        );
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    let mut s = std::net::TcpStream::connect(addr).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    write!(
        s,
        "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_answers_and_stops_on_sigterm() {
    let ws = workspace();
    let addr = format!("127.0.0.1:{}", free_port());
    let mut child = bin()
        .args([
            "serve",
            "--db",
            p(&ws.db),
            "--store",
            p(&ws.store),
            "--listen",
            &addr,
        ])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let reply = loop {
        if let Some(r) = http_get(&addr, "/health") {
            break r;
        }
        assert!(
            start.elapsed() < Duration::from_secs(60),
            "server did not come up"
        );
        std::thread::sleep(Duration::from_millis(100));
    };
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"status\":\"ok\""));
    let killed = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(killed.success());
    let start = Instant::now();
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(
            start.elapsed() < Duration::from_secs(30),
            "server ignored SIGTERM"
        );
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(status.code(), Some(0));
}
