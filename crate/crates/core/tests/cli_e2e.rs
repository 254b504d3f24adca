use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const BIN: &str = env!("CARGO_BIN_EXE_gaitctl");

/// Small settings so a full train takes a few seconds.
const QUICK: &[&str] = &[
    "--set",
    "synth.laps=1",
    "--set",
    "tcn.channels_per_block=8",
    "--set",
    "tcn.dense_units=8",
    "--set",
    "train.max_epochs=3",
    "--set",
    "train.learning_rate=0.003",
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn with_quick<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(QUICK.iter().copied()).collect()
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
    session: PathBuf,
}

/// One dataset and model shared by every test in this file.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let model = dir.path().join("model.json");
        ok(&with_quick(&["synth", "--subjects", "3", "--seed", "5", "--out", p(&data)]));
        ok(&with_quick(&["train", "--data", p(&data), "--out", p(&model), "--subjects", "subject_00,subject_01"]));
        let session = data.join("subject_02/session_00.csv");
        Fixture {
            _dir: dir,
            data,
            model,
            session,
        }
    })
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&with_quick(&["synth", "--subjects", "2", "--seed", "9", "--out", p(&a)]));
    ok(&with_quick(&["synth", "--subjects", "2", "--seed", "9", "--out", p(&b)]));
    let ta = tree(&a);
    assert!(ta.contains_key("manifest.json") && ta.contains_key("config.toml"));
    assert_eq!(ta, tree(&b));
}

#[test]
fn train_and_eval_are_deterministic() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("again.json");
    ok(&with_quick(&["train", "--data", p(&f.data), "--out", p(&model), "--subjects", "subject_00,subject_01"]));
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&f.model).unwrap());
    let hist = |m: &Path| std::fs::read(m.with_file_name(format!("{}.history.csv", m.file_name().unwrap().to_str().unwrap())));
    assert_eq!(hist(&model).unwrap(), hist(&f.model).unwrap());

    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    for r in [&r1, &r2] {
        ok(&["eval", "--model", p(&f.model), "--data", p(&f.data), "--subjects", "subject_02", "--report", p(r)]);
    }
    let t = tree(&r1);
    for name in ["report.json", "report.txt", "confusion_with_fsm.csv", "confusion_without_fsm.csv", "config.toml"] {
        assert!(t.contains_key(name), "{name} missing");
    }
    assert_eq!(t, tree(&r2));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn infer_without_decoder_keeps_probabilities() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (with, without) = (dir.path().join("with.csv"), dir.path().join("without.csv"));
    ok(&["infer", "--model", p(&f.model), "--session", p(&f.session), "--out", p(&with)]);
    ok(&["infer", "--model", p(&f.model), "--session", p(&f.session), "--out", p(&without), "--no-fsm"]);
    assert!(dir.path().join("with.steps.csv").exists());
    assert!(!dir.path().join("without.steps.csv").exists());

    let header = std::fs::read_to_string(&with).unwrap();
    assert_eq!(header.lines().next().unwrap(), "t_us,warmup,p1,p2,p3,p4,p5,raw,refined");
    let (a, b) = (csv_rows(&with), csv_rows(&without));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x[..8], y[..8]);
        assert!(!x[8].is_empty());
        assert!(y[8].is_empty());
    }
}

#[test]
fn replay_then_run_reproduces_offline_step_log() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.csv");
    ok(&["infer", "--model", p(&f.model), "--session", p(&f.session), "--out", p(&pred)]);

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut server = Command::new(BIN)
        .args(["replay", "--session", p(&f.session), "--addr", &addr, "--rate", "0"])
        .spawn()
        .unwrap();
    let out = dir.path().join("online");
    ok(&["run", "--model", p(&f.model), "--addr", &addr, "--out", p(&out)]);
    assert!(server.wait().unwrap().success());

    for name in ["predictions.csv", "steps.csv", "latency.csv", "summary.json", "config.toml"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    assert_eq!(std::fs::read(out.join("steps.csv")).unwrap(), std::fs::read(dir.path().join("pred.steps.csv")).unwrap());
    assert_eq!(std::fs::read(out.join("predictions.csv")).unwrap(), std::fs::read(&pred).unwrap());
}

#[test]
fn bench_writes_report() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let text = ok(&["bench", "--model", p(&f.model), "--iters", "200", "--warmup", "50", "--out", p(&out)]);
    assert!(text.contains("ms"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert!(v.is_object());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["synth", "--subjects", "1", "--out", "x", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new("x").exists());
}

#[test]
fn failure_prints_one_error_line_and_removes_outputs() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pred.csv");
    let o = run(&["infer", "--model", p(&f.model), "--session", p(&dir.path().join("missing.csv")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    let line = err.lines().last().unwrap();
    assert!(line.starts_with("error: kind=IoError msg=\""), "{err}");
    assert!(!out.exists());

    let data = dir.path().join("data");
    let o = run(&["synth", "--subjects", "1", "--out", p(&data), "--set", "fsm.nonsense=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("kind=ConfigError"));
    assert!(!data.exists());
}

#[test]
fn invalid_config_value_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--subjects", "1", "--out", p(&dir.path().join("d")), "--set", "window.h=2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("kind=ConfigError"));
}
