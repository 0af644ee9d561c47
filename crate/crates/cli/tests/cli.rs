use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn hcsync(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcsync"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env_remove("HASHCHAIN_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn optimal_block_prints_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["experiment", "optimal-block"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "1024000,1.0,85\n");
    let csv = fs::read_to_string(dir.path().join("optimal-block.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config: strategy=rc-srs algorithm=d20 block-size=85"));
    assert_eq!(&lines[1..], ["rate_bps,delay_s,packets", "1024000,1.0,85"]);
}

#[test]
fn overhead_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["experiment", "overhead-table"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for row in [
        "SHHC,concat,d20,60,3X",
        "SHHC,concat,d16,48,3X",
        "SHHC,xor,d20,20,3X",
        "TSP,one-packet,d16,1500,X",
        "MLHC,two-layer,d20,20,≈2X",
        "TSS,timestamp,d20,24,X",
        "RC-SRS,4/5,d16,16,4X",
    ] {
        assert!(out.lines().any(|l| l == row), "missing {row}");
    }
    assert_eq!(out.lines().count(), 16);
}

#[test]
fn recovery_curve_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["experiment", "recovery-curve", "--trials", "1000", "--seed", "5"];
    assert_eq!(hcsync(&args, a.path()).status.code(), Some(0));
    assert_eq!(hcsync(&args, b.path()).status.code(), Some(0));
    let x = fs::read(a.path().join("recovery-curve.csv")).unwrap();
    let y = fs::read(b.path().join("recovery-curve.csv")).unwrap();
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert_eq!(text.lines().nth(1), Some("rf,per,trials,recovered_fraction,analytic"));
    assert_eq!(text.lines().count(), 2 + 15);
    let c = hcsync(&["experiment", "recovery-curve", "--trials", "1000", "--seed", "6"], a.path());
    assert_eq!(c.status.code(), Some(0));
    assert_ne!(fs::read(a.path().join("recovery-curve.csv")).unwrap(), y);
}

#[test]
fn too_few_trials_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["experiment", "recovery-curve", "--trials", "10"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn window_sizing_and_timing_render() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["experiment", "window-sizing"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l == "1048576,2.0,174"));
    assert!(out.lines().any(|l| l == "1024000,2.0,170"));
    assert!(out.lines().any(|l| l == "64000,1.0,5"));

    let o = hcsync(&["experiment", "timing"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("strategy,algorithm,rate_bps,mean_ms,digest_ops_per_window"));
    assert!(csv.contains(",d16,") && csv.contains(",d20,"));
    assert!(csv.lines().any(|l| l.starts_with("mlhc,d20,1024000,") && l.ends_with(",2")));
}

#[test]
fn unknown_experiment_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["experiment", "pie-chart"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("optimal-block"));
}

#[test]
fn lossless_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["roundtrip", "--length", "300000"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("recovered=0\n"));
    assert!(out.contains("synchronized=true\n"));
    let stats = fs::read_to_string(dir.path().join("roundtrip_stats.csv")).unwrap();
    assert!(stats.lines().any(|l| l == "result,ok"));
    let windows = fs::read_to_string(dir.path().join("roundtrip_windows.csv")).unwrap();
    assert_eq!(windows.lines().nth(1), Some("window,status,recovered_block,wait_s,decision"));
    assert!(windows.lines().skip(2).all(|l| l.contains(",verified,")));
}

#[test]
fn single_block_drop_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["roundtrip", "--drop-block", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("recovered=1\n"));
    let windows = fs::read_to_string(dir.path().join("roundtrip_windows.csv")).unwrap();
    assert!(windows.lines().any(|l| l.starts_with("0,recovered,1,")));
}

#[test]
fn dropped_sequences_recover() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["roundtrip", "--drop-seq", "90-92"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("recovered=1\n"));
}

#[test]
fn two_block_drop_needs_reinit() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["roundtrip", "--drop-block", "1,2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("verification failed"));
    assert!(stdout(&o).contains("result=chain-mismatch"));

    let o = hcsync(&["roundtrip", "--drop-block", "1,2", "--reinit"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("unrecoverable=1\n"));
}

#[test]
fn loss_tolerance_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(
        &["roundtrip", "--drop-block", "1", "--loss-tolerance", "0.01"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("result=loss-tolerance"));
}

#[test]
fn random_loss_roundtrip_runs_for_every_strategy() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["shhc-concat", "shhc-xor", "tsp", "mlhc", "tss", "rc-srs"] {
        let o = hcsync(
            &["roundtrip", "--strategy", s, "--per", "0.0005", "--reinit", "--length", "500000"],
            dir.path(),
        );
        assert!(matches!(o.status.code(), Some(0 | 2)), "{s}: {}", stderr(&o));
        assert!(stdout(&o).contains("windows="), "{s}");
    }
}

#[test]
fn roundtrip_reads_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("clip.ts");
    fs::write(&input, vec![0x47u8; 40_000]).unwrap();
    let o = hcsync(&["roundtrip", "--input", input.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = hcsync(&["roundtrip", "--input", "/nonexistent/clip.ts"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bad_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["roundtrip", "--per", "2"][..],
        &["roundtrip", "--rf", "7"],
        &["roundtrip", "--strategy", "carrier-pigeon"],
        &["roundtrip", "--rc-replication", "7", "--algorithm", "d20"],
        &["roundtrip", "--no-such-flag"],
    ] {
        assert_eq!(hcsync(args, dir.path()).status.code(), Some(3), "{args:?}");
    }
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    fs::write(&file, "# experiment setup\nseed = 41\nvbr = 512000\n").unwrap();
    let stamp = |o: &Output| {
        assert_eq!(o.status.code(), Some(0), "{}", stderr(o));
        fs::read_to_string(dir.path().join("optimal-block.csv"))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };

    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_hcsync"));
        c.args(["experiment", "optimal-block", "--out-dir"]).arg(dir.path()).args(extra);
        match env {
            Some(v) => c.env("HASHCHAIN_SEED", v),
            None => c.env_remove("HASHCHAIN_SEED"),
        };
        c.output().unwrap()
    };

    let o = run(Some("77"), &[]);
    assert!(stamp(&o).contains(" seed=77 "));
    let o = run(Some("77"), &["--config", file.to_str().unwrap()]);
    assert!(stamp(&o).contains(" seed=41 "));
    assert_eq!(stdout(&o), "512000,1.0,42\n");
    let o = run(Some("77"), &["--config", file.to_str().unwrap(), "--seed", "3", "--vbr", "1024000"]);
    assert!(stamp(&o).contains(" seed=3 "));
    assert_eq!(stdout(&o), "1024000,1.0,85\n");

    let o = run(None, &["--config", "/nonexistent/run.conf"]);
    assert_eq!(o.status.code(), Some(4));
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "seed\n").unwrap();
    let o = run(None, &["--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn keyexchange_toy_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["keyexchange", "--profile", "toy"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let ks: Vec<&str> = out
        .lines()
        .filter(|l| l.starts_with("server: ks =") || l.starts_with("client: ks ="))
        .map(|l| l.split(" = ").nth(1).unwrap())
        .collect();
    assert_eq!(ks.len(), 2);
    assert_eq!(ks[0], ks[1]);
    assert!(out.contains("server -> client: E = "));
    assert!(out.contains("client -> server: Y = "));
    assert!(out.contains("E_ks(K_priv)"));
    assert!(out.ends_with("shared key match: yes\n"));
}

#[test]
fn keyexchange_rejects_forged_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcsync(&["keyexchange", "--inject-y", "1,1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not on the curve"));
    // (0, 2) is on the curve, so it is accepted as a peer point
    let o = hcsync(&["keyexchange", "--inject-y", "0,2"], dir.path());
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn keyexchange_full_profile_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = hcsync(&["keyexchange", "--profile", "full"], dir.path());
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("secp128r1"));
}

#[test]
fn commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = stdout(&hcsync(&["keyexchange", "--seed", "12"], dir.path()));
    let b = stdout(&hcsync(&["keyexchange", "--seed", "12"], dir.path()));
    let c = stdout(&hcsync(&["keyexchange", "--seed", "13"], dir.path()));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let x = stdout(&hcsync(&["roundtrip", "--per", "0.001", "--seed", "4", "--reinit"], dir.path()));
    let y = stdout(&hcsync(&["roundtrip", "--per", "0.001", "--seed", "4", "--reinit"], dir.path()));
    assert_eq!(x, y);
}
