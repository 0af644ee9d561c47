use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use num_bigint::BigUint;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hcsync::analytics::{
    optimal_block_size, run_recovery_experiment, timing_report, window_sizing_sweep, RecoveryExperiment,
    MTU_BITS,
};
use hcsync::channel::{ChannelModel, DropPattern};
use hcsync::hashchain::{Algorithm, Digest};
use hcsync::keyexchange::{run_exchange, shared_key, Point, Profile};
use hcsync::receiver::{reports_csv, WindowStatus};
use hcsync::session::{self, Impairment, SessionConfig};
use hcsync::strategies::{overhead_of, SessionKeys, StrategyConfig, StrategyKind};

use crate::{CliError, RunConfig};

const DATA_STREAM: u64 = 0;
const KEY_STREAM: u64 = 1;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn synthetic_stream(seed: u64, len: usize) -> Vec<u8> {
    let mut data = vec![0u8; len];
    rng_for(seed, DATA_STREAM).fill_bytes(&mut data);
    data
}

pub fn load_stream(cfg: &RunConfig) -> Result<Vec<u8>, CliError> {
    match &cfg.input {
        Some(path) => fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => Ok(synthetic_stream(cfg.seed, cfg.length)),
    }
}

/// Keys from a toy-curve exchange seeded by the run.
pub fn derive_keys(cfg: &RunConfig) -> Result<SessionKeys, CliError> {
    let mut rng = rng_for(cfg.seed, KEY_STREAM);
    let mut raw = [0u8; 20];
    rng.fill_bytes(&mut raw);
    let alg = cfg.algorithm;
    let iv_sec = Digest::from_slice(alg, &raw[..alg.len()]).expect("length matches");
    let curve = Profile::Toy.curve();
    let ex = run_exchange(&curve, &cfg.identity, &iv_sec, &mut rng).map_err(|e| CliError::Verification(e.to_string()))?;
    Ok(ex.client.session_keys(&curve, alg))
}

fn csv_text(cfg: &RunConfig, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    format!("# config: {cfg}\n{body}")
}

fn write_csv(cfg: &RunConfig, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::Io(format!("{}: {e}", cfg.out_dir.display())))?;
    let path = cfg.out_dir.join(name);
    fs::write(&path, csv_text(cfg, header, rows)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn io(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn parse_blocks(s: &str) -> Result<BTreeSet<u32>, CliError> {
    let p = DropPattern::parse(s).map_err(|e| CliError::Config(format!("drop-block: {e}")))?;
    Ok(p.sequences)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundtripSummary {
    pub windows: usize,
    pub verified: usize,
    pub recovered: usize,
    pub unrecoverable: usize,
    pub reinit_requests: usize,
    pub dropped: usize,
    pub data_loss: f64,
    pub synchronized: bool,
    pub stream_intact: bool,
    /// Set when the run fails verification.
    pub failure: Option<String>,
    pub stats_csv: PathBuf,
    pub windows_csv: PathBuf,
}

pub fn cmd_roundtrip(cfg: &RunConfig, out: &mut dyn Write) -> Result<RoundtripSummary, CliError> {
    cfg.check()?;
    let stream = load_stream(cfg)?;
    let mut s = SessionConfig::new(cfg.strategy_config()?, cfg.algorithm);
    s.block_size = cfg.block_size;
    s.vbr_bps = cfg.vbr;
    s.rtt_s = cfg.rtt;
    s.reinit = cfg.reinit;
    s.loss_tolerance = cfg.loss_tolerance;
    s.keys = derive_keys(cfg)?;

    let impairment = if let Some(seqs) = &cfg.drop_seq {
        Impairment::Sequences(DropPattern::parse(seqs).map_err(|e| CliError::Config(format!("drop-seq: {e}")))?)
    } else if let Some(blocks) = &cfg.drop_block {
        Impairment::Blocks(parse_blocks(blocks)?)
    } else if cfg.per > 0.0 || cfg.reorder > 0 {
        let model = ChannelModel::new(cfg.per, cfg.seed)
            .map_err(|e| CliError::Config(e.to_string()))?
            .with_reorder(cfg.reorder);
        Impairment::Model { model, trial: 0 }
    } else {
        Impairment::None
    };

    let r = session::run(&stream, &s, &impairment).map_err(|e| CliError::Config(e.to_string()))?;
    let data_packets = r.sender.layout.data_packets.max(1) as f64;
    let data_dropped = r
        .loss
        .dropped
        .iter()
        .filter(|&&q| !r.sender.packets[q as usize].is_sync())
        .count();
    let data_loss = data_dropped as f64 / data_packets;
    let unrecoverable = r.count(WindowStatus::Unrecoverable);

    let failure = if !r.synchronized {
        Some("chain-mismatch".to_string())
    } else if data_loss > cfg.loss_tolerance {
        Some("loss-tolerance".to_string())
    } else if unrecoverable > 0 && !cfg.reinit {
        Some("unrecoverable".to_string())
    } else {
        None
    };

    let summary_rows: Vec<Vec<String>> = [
        ("windows", r.reports.len().to_string()),
        ("verified", r.count(WindowStatus::Verified).to_string()),
        ("recovered", r.count(WindowStatus::Recovered).to_string()),
        ("unrecoverable", unrecoverable.to_string()),
        ("reinit_requests", r.requests.len().to_string()),
        ("packets_sent", r.loss.sent.to_string()),
        ("packets_dropped", r.loss.dropped.len().to_string()),
        ("data_loss", format!("{data_loss:.6}")),
        ("replay_rejects", r.stats.replay_rejects.to_string()),
        ("bad_index_drops", r.stats.dropped_bad_index.to_string()),
        ("peak_buffered", r.stats.peak_buffered.to_string()),
        ("synchronized", r.synchronized.to_string()),
        ("result", failure.clone().unwrap_or_else(|| "ok".into())),
    ]
    .into_iter()
    .map(|(k, v)| vec![k.to_string(), v])
    .collect();
    let stats_csv = write_csv(cfg, "roundtrip_stats.csv", &["metric", "value"], &summary_rows)?;
    let window_rows: Vec<Vec<String>> = reports_csv(&r.reports).into_iter().map(Vec::from).collect();
    let windows_csv = write_csv(
        cfg,
        "roundtrip_windows.csv",
        &["window", "status", "recovered_block", "wait_s", "decision"],
        &window_rows,
    )?;

    for row in &summary_rows {
        writeln!(out, "{}={}", row[0], row[1]).map_err(io)?;
    }
    Ok(RoundtripSummary {
        windows: r.reports.len(),
        verified: r.count(WindowStatus::Verified),
        recovered: r.count(WindowStatus::Recovered),
        unrecoverable,
        reinit_requests: r.requests.len(),
        dropped: r.loss.dropped.len(),
        data_loss,
        synchronized: r.synchronized,
        stream_intact: r.reassembled.as_deref() == Some(&stream[..]),
        failure,
        stats_csv,
        windows_csv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    RecoveryCurve,
    OptimalBlock,
    OverheadTable,
    WindowSizing,
    Timing,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::RecoveryCurve,
        Experiment::OptimalBlock,
        Experiment::OverheadTable,
        Experiment::WindowSizing,
        Experiment::Timing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::RecoveryCurve => "recovery-curve",
            Experiment::OptimalBlock => "optimal-block",
            Experiment::OverheadTable => "overhead-table",
            Experiment::WindowSizing => "window-sizing",
            Experiment::Timing => "timing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

fn rate(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as u64)
    } else {
        format!("{v}")
    }
}

fn overhead_rows() -> Vec<Vec<String>> {
    let mut configs: Vec<(&str, &str, StrategyConfig)> = vec![
        ("SHHC", "concat", StrategyConfig::new(StrategyKind::ShhcConcat)),
        ("SHHC", "xor", StrategyConfig::new(StrategyKind::ShhcXor)),
        ("TSP", "one-packet", StrategyConfig::new(StrategyKind::Tsp)),
        ("MLHC", "two-layer", StrategyConfig::new(StrategyKind::Mlhc)),
        ("TSS", "timestamp", StrategyConfig::new(StrategyKind::Tss)),
    ];
    for (k, label) in [(2, "2/3"), (3, "3/4"), (4, "4/5")] {
        configs.push(("RC-SRS", label, StrategyConfig::rc_srs(k, 1)));
    }
    let mut rows = Vec::new();
    for (technique, method, sc) in configs {
        for alg in Algorithm::ALL {
            let o = overhead_of(&sc, alg);
            rows.push(vec![
                technique.to_string(),
                method.to_string(),
                alg.name().to_string(),
                o.octets_per_window.to_string(),
                o.delay.to_string(),
            ]);
        }
    }
    rows
}

/// Writes `<name>.csv` under the output directory and echoes the data rows.
pub fn cmd_experiment(name: Experiment, cfg: &RunConfig, out: &mut dyn Write) -> Result<PathBuf, CliError> {
    cfg.check()?;
    let started = Instant::now();
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match name {
        Experiment::OptimalBlock => {
            let n = optimal_block_size(cfg.vbr, cfg.delay_budget, MTU_BITS).map_err(|e| CliError::Config(e.to_string()))?;
            (
                vec!["rate_bps", "delay_s", "packets"],
                vec![vec![rate(cfg.vbr), format!("{:?}", cfg.delay_budget), n.to_string()]],
            )
        }
        Experiment::WindowSizing => {
            let mut delays = vec![cfg.delay_budget];
            if cfg.delay_budget != 2.0 {
                delays.push(2.0);
            }
            let rows = window_sizing_sweep(&delays)
                .into_iter()
                .map(|r| vec![rate(r.rate_bps), format!("{:?}", r.delay_s), r.packets.to_string()])
                .collect();
            (vec!["rate_bps", "delay_s", "packets"], rows)
        }
        Experiment::OverheadTable => (
            vec!["technique", "method", "algorithm", "octets_per_window", "delay"],
            overhead_rows(),
        ),
        Experiment::RecoveryCurve => {
            let exp = RecoveryExperiment {
                block_size: cfg.block_size,
                rc_copies: cfg.rc_replication,
                trials: cfg.trials,
                ..RecoveryExperiment::standard(cfg.seed)
            };
            let points = run_recovery_experiment(&exp).map_err(|e| CliError::Config(e.to_string()))?;
            let rows = points
                .into_iter()
                .map(|p| {
                    vec![
                        p.rf,
                        format!("{:?}", p.per),
                        p.trials.to_string(),
                        format!("{:.6}", p.recovered_fraction),
                        format!("{:.6}", p.analytic),
                    ]
                })
                .collect();
            (vec!["rf", "per", "trials", "recovered_fraction", "analytic"], rows)
        }
        Experiment::Timing => {
            let rows = timing_report(5)
                .into_iter()
                .map(|t| {
                    vec![
                        t.strategy.name().to_string(),
                        t.algorithm.name().to_string(),
                        rate(t.rate_bps),
                        format!("{:.4}", t.mean_ms),
                        t.digest_ops_per_window.to_string(),
                    ]
                })
                .collect();
            (
                vec!["strategy", "algorithm", "rate_bps", "mean_ms", "digest_ops_per_window"],
                rows,
            )
        }
    };
    let path = write_csv(cfg, &format!("{}.csv", name.name()), &header, &rows)?;
    for r in &rows {
        writeln!(out, "{}", r.join(",")).map_err(io)?;
    }
    log::info!("{} done in {:?}", name.name(), started.elapsed());
    Ok(path)
}

/// Prints the exchange and checks both sides hold the same key.
///
/// `inject_y` replaces the client's public point as seen by the server.
pub fn cmd_keyexchange(
    profile: Profile,
    cfg: &RunConfig,
    inject_y: Option<(BigUint, BigUint)>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let curve = profile.curve();
    let mut rng = rng_for(cfg.seed, KEY_STREAM);
    let mut raw = [0u8; 20];
    rng.fill_bytes(&mut raw);
    let alg = cfg.algorithm;
    let iv_sec = Digest::from_slice(alg, &raw[..alg.len()]).expect("length matches");
    let verify = |e: hcsync::keyexchange::KeyError| CliError::Verification(e.to_string());

    if let Some((x, y)) = inject_y {
        let s_x = curve.random_secret(&mut rng);
        writeln!(out, "server -> client: X = {}", curve.public_point(&s_x).map_err(verify)?).map_err(io)?;
        let forged = Point::Affine { x, y };
        writeln!(out, "client -> server: Y = {forged}").map_err(io)?;
        shared_key(&curve, &s_x, &forged).map_err(verify)?;
        return Ok(());
    }

    let ex = run_exchange(&curve, &cfg.identity, &iv_sec, &mut rng).map_err(verify)?;
    for line in ex.transcript() {
        writeln!(out, "{line}").map_err(io)?;
    }
    let ok = ex.dh.ks_server == ex.dh.ks_client
        && ex.client.k_priv == ex.server.k_priv
        && ex.client.iv_sec == ex.server.iv_sec;
    writeln!(out, "shared key match: {}", if ok { "yes" } else { "no" }).map_err(io)?;
    if ok {
        Ok(())
    } else {
        Err(CliError::Verification("client and server keys differ".into()))
    }
}
