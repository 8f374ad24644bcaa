use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedcontrib"))
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn run(args: &[&str], out: &Path) -> Output {
    let output = bin()
        .arg("run")
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FEDCONTRIB_DATA_DIR")
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "run {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn mnist_run(args: &[&str], out: &Path) -> Output {
    let dir = mnist_dir();
    assert!(
        dir.join("train-images-idx3-ubyte").exists(),
        "MNIST not found at {}; run scripts/fetch_mnist.sh or set MNIST_DIR",
        dir.display()
    );
    let mut all = args.to_vec();
    let dir = dir.to_string_lossy().into_owned();
    all.extend(["--data-dir", &dir]);
    run(&all, out)
}

/// `(size, share)` per client from the printed table.
fn table(output: &Output) -> Vec<(usize, f64)> {
    String::from_utf8_lossy(&output.stdout)
        .lines()
        .skip(2)
        .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
        .map(|l| {
            let cols: Vec<&str> = l.split_whitespace().collect();
            (cols[4].parse().unwrap(), cols[6].parse().unwrap())
        })
        .collect()
}

/// Final-round shares of the outcome contract, read back from the CSV.
fn final_shares(dir: &Path) -> Vec<f64> {
    let csv = fs::read_to_string(dir.join("report.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    let last_contract = rows.last().unwrap()[0].clone();
    let last_round = rows
        .iter()
        .filter(|r| r[0] == last_contract)
        .map(|r| r[1].parse::<u64>().unwrap())
        .max()
        .unwrap();
    rows.iter()
        .filter(|r| r[0] == last_contract && r[1] == last_round.to_string())
        .map(|r| r[4].parse().unwrap())
        .collect()
}

const SYNTH: &[&str] = &["--synthetic", "900", "--lr", "0.1", "--rounds", "3"];

#[test]
fn six_equal_clients_share_evenly() {
    let dir = tempfile::tempdir().unwrap();
    mnist_run(
        &[
            "--protocol",
            "crowdsource",
            "--clients",
            "6",
            "--rounds",
            "5",
            "--subsample",
            "0.2",
        ],
        dir.path(),
    );
    let shares = final_shares(dir.path());
    assert_eq!(shares.len(), 6);
    for s in shares {
        assert!((s - 1.0 / 6.0).abs() <= 0.05, "share {s}");
    }
}

#[test]
fn ratios_set_client_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[SYNTH, &["--ratios", "2:1:1"]].concat(), dir.path());
    let sizes: Vec<usize> = table(&out).iter().map(|r| r.0).collect();
    assert_eq!(sizes, vec![450, 225, 225]);
}

#[test]
fn label_flipping_is_penalised() {
    let dir = tempfile::tempdir().unwrap();
    let out = mnist_run(
        &[
            "--protocol",
            "crowdsource",
            "--flip",
            "0,0.3,0.9",
            "--subsample",
            "0.2",
        ],
        dir.path(),
    );
    let shares: Vec<f64> = table(&out).iter().map(|r| r.1).collect();
    assert!(shares[0] > shares[1] && shares[1] > shares[2], "{shares:?}");
}

#[test]
fn repeat_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        SYNTH,
        &["--protocol", "consortium", "--clients", "3", "--seed", "4"],
    ]
    .concat();
    run(&args, a.path());
    run(&args, b.path());
    for f in ["report.csv", "transactions.jsonl"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn run_directory_is_self_contained() {
    let dir = tempfile::tempdir().unwrap();
    run(&[SYNTH, &["--clients", "3"]].concat(), dir.path());
    for f in [
        "report.csv",
        "transactions.jsonl",
        "manifest.json",
        "contract-0.csv",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["rounds"], 3);
    assert_eq!(manifest["config"]["clients"].as_array().unwrap().len(), 3);

    // Moving the directory must not matter.
    let moved = tempfile::tempdir().unwrap();
    let target = moved.path().join("run");
    fs::rename(dir.path(), &target).unwrap();
    let out = bin().arg("replay").arg(&target).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tamper(dir: &Path, op: &str, edit: impl Fn(&mut serde_json::Value)) -> usize {
    let path = dir.join("transactions.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let idx = lines
        .iter()
        .position(|l| l.contains(&format!("\"op\":\"{op}\"")))
        .unwrap();
    let mut tx: serde_json::Value = serde_json::from_str(&lines[idx]).unwrap();
    edit(&mut tx);
    lines[idx] = tx.to_string();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    idx + 1
}

#[test]
fn replay_detects_tampered_cid() {
    let dir = tempfile::tempdir().unwrap();
    run(&[SYNTH, &["--clients", "3"]].concat(), dir.path());
    let line = tamper(dir.path(), "submit", |tx| {
        tx["cid"] = "ab".repeat(32).into();
    });
    let out = bin().arg("replay").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("line {line}:")), "{err}");
}

#[test]
fn replay_detects_tampered_tokens() {
    let dir = tempfile::tempdir().unwrap();
    run(&[SYNTH, &["--clients", "3"]].concat(), dir.path());
    let line = tamper(dir.path(), "set_tokens", |tx| {
        tx["tokens"] = (tx["tokens"].as_u64().unwrap() + 7).into();
    });
    let out = bin()
        .arg("replay")
        .arg(dir.path().join("transactions.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("line {line}:")), "{err}");
}

#[test]
fn replay_detects_edited_report() {
    let dir = tempfile::tempdir().unwrap();
    run(&[SYNTH, &["--clients", "2"]].concat(), dir.path());
    let path = dir.path().join("report.csv");
    let csv = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = csv.lines().collect();
    lines.pop();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = bin().arg("replay").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_flags_fail_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--protocol", "gossip"],
        vec!["--clients", "3", "--flip", "0,0.5"],
        vec!["--flip", "0,1.5"],
        vec!["--clients", "1"],
        vec!["--subsample", "0"],
    ] {
        let out = bin()
            .arg("run")
            .args(SYNTH)
            .args(&args)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(!out.status.success(), "{args:?} was accepted");
        assert!(!out.stderr.is_empty());
    }
    let out = bin()
        .args(["run", "--data-dir", "/nonexistent/mnist", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/mnist"));
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "protocol = \"consortium\"\nrounds = 2\nlearning_rate = 0.1\n\n[[clients]]\nratio = 3\n\n[[clients]]\nratio = 1\nflip = 0.5\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(
        &[
            "--synthetic",
            "400",
            "--config",
            cfg.to_str().unwrap(),
            "--rounds",
            "3",
        ],
        &out_dir,
    );
    assert_eq!(
        table(&out).iter().map(|r| r.0).collect::<Vec<_>>(),
        vec![300, 100]
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["rounds"], 3);
    assert_eq!(manifest["config"]["protocol"], "consortium");
    assert_eq!(manifest["config"]["clients"][1]["flip"], 0.5);
}
