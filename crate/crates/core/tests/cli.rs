use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use physadv::pipeline::{AttackReport, RunConfig, RunStatus};

const BIN: &str = env!("CARGO_BIN_EXE_physadv");

fn quick() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.toml")
}

fn physadv(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_configs_parse() {
    for name in ["quick.toml", "desk.toml"] {
        let (cfg, _) = RunConfig::load(quick().with_file_name(name)).unwrap();
        cfg.validate().unwrap();
    }
    let (desk, _) = RunConfig::load(quick().with_file_name("desk.toml")).unwrap();
    assert_eq!(desk, RunConfig::default());
}

#[test]
fn attack_writes_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, stdout, _) = physadv(&["attack", "--config", arg(&quick()), "--out", arg(&out), "--quiet"]);
    assert_eq!(code, 0, "{stdout}");
    for f in ["report.json", "timing.json", "adversarial.png", "post_mask.png", "mask.png", "object.png", "trace.ndjson", "heatmap.png", "heatmap.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(out.join("checkpoints/round-0/boost.json").exists());
    let r = AttackReport::load(out.join("report.json")).unwrap();
    assert_eq!(r.status, RunStatus::Complete);
    let trace = physadv::transforms::read_trace(BufReader::new(std::fs::File::open(out.join("trace.ndjson")).unwrap())).unwrap();
    assert!(trace.len() >= 100);
}

#[test]
fn process_oracle_queries_are_counted_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let count = dir.path().join("count");
    let out = dir.path().join("run");
    let oracle = format!("proc:{BIN} serve-oracle-stub --mode builtin --count-file {}", count.display());
    let (code, stdout, stderr) =
        physadv(&["attack", "--config", arg(&quick()), "--out", arg(&out), "--oracle", &oracle, "--budget", "300", "--quiet"]);
    assert_eq!(code, 0, "{stdout}{stderr}");
    let r = AttackReport::load(out.join("report.json")).unwrap();
    let served: u64 = std::fs::read_to_string(&count).unwrap().trim().parse().unwrap();
    assert_eq!(served, r.ledger.total + r.holdout_ledger.total);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let q = quick();
    let garbage = format!("proc:{BIN} serve-oracle-stub --mode garbage");
    let (code, _, err) = physadv(&["attack", "--config", arg(&q), "--out", arg(&dir.path().join("g")), "--oracle", &garbage, "--quiet"]);
    assert_eq!(code, 4, "{err}");

    let capped = dir.path().join("c");
    let (code, _, _) = physadv(&["attack", "--config", arg(&q), "--out", arg(&capped), "--max-queries", "300", "--quiet"]);
    assert_eq!(code, 2);
    assert_eq!(AttackReport::load(capped.join("report.json")).unwrap().status, RunStatus::BudgetExceeded);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[run]\nseeed = 1\n").unwrap();
    let (code, _, err) = physadv(&["attack", "--config", arg(&bad), "--out", arg(&dir.path().join("b"))]);
    assert_eq!(code, 1);
    assert!(err.contains("seeed"), "{err}");

    let (code, _, _) = physadv(&["attack", "--config", arg(&q), "--oracle", "ftp:x", "--out", arg(&dir.path().join("f"))]);
    assert_eq!(code, 1);
}

#[test]
fn http_oracle_with_token() {
    let dir = tempfile::tempdir().unwrap();
    let count = dir.path().join("count");
    let mut server = Command::new(BIN)
        .args(["serve-oracle-stub", "--mode", "builtin", "--http", "127.0.0.1:0", "--token", "hunter2", "--count-file", arg(&count)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let cfg = dir.path().join("http.toml");
    let text = std::fs::read_to_string(quick()).unwrap() + "\n[oracle]\ntoken_env = \"PHYSADV_TEST_TOKEN\"\n";
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("run");
    let status = Command::new(BIN)
        .args(["attack", "--config", arg(&cfg), "--out", arg(&out), "--oracle", &format!("http:{url}"), "--budget", "200", "--quiet"])
        .env("PHYSADV_TEST_TOKEN", "hunter2")
        .status()
        .unwrap();
    let r = AttackReport::load(out.join("report.json"));
    std::thread::sleep(std::time::Duration::from_millis(200));
    let served: Option<u64> = std::fs::read_to_string(&count).ok().and_then(|s| s.trim().parse().ok());
    server.kill().unwrap();
    let _ = server.wait();
    assert!(status.success());
    let r = r.unwrap();
    assert_eq!(served, Some(r.ledger.total + r.holdout_ledger.total));

    let (code, _, _) = physadv(&["attack", "--config", arg(&quick()), "--out", arg(&dir.path().join("x")), "--oracle", &format!("http:{url}")]);
    assert_eq!(code, 4);
}

#[test]
fn experiment_commands() {
    let dir = tempfile::tempdir().unwrap();
    let q = quick();
    let run = |args: &[&str], files: &[&str]| {
        let out = dir.path().join(args[0]);
        let mut all = args.to_vec();
        all.extend(["--config", arg(&q), "--out", arg(&out), "--quiet"]);
        let (code, stdout, stderr) = physadv(&all);
        assert_eq!(code, 0, "{args:?}: {stdout}{stderr}");
        for f in files {
            assert!(out.join(f).exists(), "{args:?}: missing {f}");
        }
        stdout
    };
    run(&["heatmap"], &["heatmap.png", "heatmap.json"]);
    run(&["sweep"], &["sweep.csv", "sweep.json", "sweep.png"]);
    let table = run(&["ablate"], &["ablation.csv", "ablation.json"]);
    assert_eq!(table.lines().filter(|l| l.starts_with("Full") || l.starts_with("CoarseOnly") || l.starts_with("FineOnly")).count(), 3);
    run(&["iterative"], &["report.json"]);
    run(&["baseline"], &["efficiency.csv", "efficiency.json", "attack/report.json"]);
}
