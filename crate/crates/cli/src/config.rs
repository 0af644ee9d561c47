use std::fmt;
use std::path::{Path, PathBuf};

use hcsync::hashchain::Algorithm;
use hcsync::strategies::{StrategyConfig, StrategyKind};

use crate::CliError;

pub const SEED_ENV: &str = "HASHCHAIN_SEED";

/// Every knob an experiment or demo reads.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `shhc-concat`, `shhc-xor`, `tsp`, `mlhc`, `tss` or `rc-srs`. Default `rc-srs`.
    pub strategy: StrategyKind,
    /// Default `d20`.
    pub algorithm: Algorithm,
    /// Packets per Block. Default 85.
    pub block_size: u32,
    /// Blocks per Window for `rc-srs`, 2 to 4. Default 3.
    pub rf: u32,
    /// RC copies per Window. Default 1.
    pub rc_replication: u32,
    /// Packet erasure probability. Default 0.
    pub per: f64,
    /// Default 1, or `HASHCHAIN_SEED` when set.
    pub seed: u64,
    /// Stream rate, bit/s. Default 1,024,000.
    pub vbr: f64,
    /// Seconds. Default 1.0.
    pub delay_budget: f64,
    /// Seconds. Default 2.0.
    pub rtt: f64,
    /// Monte Carlo trials per point. Default 10,000.
    pub trials: u64,
    /// Input stream; a seeded synthetic stream of `length` octets when absent.
    pub input: Option<PathBuf>,
    /// Default 1 MiB.
    pub length: usize,
    /// Where CSVs go. Default `.`.
    pub out_dir: PathBuf,
    /// Tolerated fraction of lost data packets. Default 1.0.
    pub loss_tolerance: f64,
    /// Reorder depth of the channel. Default 0.
    pub reorder: usize,
    /// Answer reinitialization requests. Default off.
    pub reinit: bool,
    /// Sequence numbers to drop, e.g. `3,10-12`.
    pub drop_seq: Option<String>,
    /// Block indices whose data packets are dropped, e.g. `1`.
    pub drop_block: Option<String>,
    /// Client identity for key extraction.
    pub identity: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: StrategyKind::RcSrs,
            algorithm: Algorithm::D20,
            block_size: 85,
            rf: 3,
            rc_replication: 1,
            per: 0.0,
            seed: 1,
            vbr: 1_024_000.0,
            delay_budget: 1.0,
            rtt: 2.0,
            trials: 10_000,
            input: None,
            length: 1 << 20,
            out_dir: PathBuf::from("."),
            loss_tolerance: 1.0,
            reorder: 0,
            reinit: false,
            drop_seq: None,
            drop_block: None,
            identity: "client@stream.example".into(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .replace('_', "")
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl RunConfig {
    /// Defaults with `HASHCHAIN_SEED` applied.
    pub fn from_env() -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.set("seed", &seed)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('_', "-");
        match key.as_str() {
            "strategy" => {
                self.strategy = StrategyKind::parse(value.trim())
                    .ok_or_else(|| CliError::Config(format!("unknown strategy {value:?}")))?
            }
            "algorithm" => {
                self.algorithm = Algorithm::parse(value.trim())
                    .ok_or_else(|| CliError::Config(format!("unknown algorithm {value:?}")))?
            }
            "block-size" => self.block_size = num(&key, value)?,
            "rf" => self.rf = num(&key, value)?,
            "rc-replication" => self.rc_replication = num(&key, value)?,
            "per" => self.per = num(&key, value)?,
            "seed" => self.seed = num(&key, value)?,
            "vbr" => self.vbr = num(&key, value)?,
            "delay-budget" | "delay" => self.delay_budget = num(&key, value)?,
            "rtt" => self.rtt = num(&key, value)?,
            "trials" => self.trials = num(&key, value)?,
            "input" => self.input = Some(PathBuf::from(value.trim())),
            "length" => self.length = num(&key, value)?,
            "out-dir" => self.out_dir = PathBuf::from(value.trim()),
            "loss-tolerance" => self.loss_tolerance = num(&key, value)?,
            "reorder" => self.reorder = num(&key, value)?,
            "reinit" => self.reinit = flag(&key, value)?,
            "drop-seq" => self.drop_seq = Some(value.trim().to_string()),
            "drop-block" => self.drop_block = Some(value.trim().to_string()),
            "identity" => self.identity = value.trim().to_string(),
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn strategy_config(&self) -> Result<StrategyConfig, CliError> {
        let s = match self.strategy {
            StrategyKind::RcSrs => StrategyConfig::rc_srs(self.rf, self.rc_replication),
            k => StrategyConfig::new(k),
        };
        s.validate(self.algorithm)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.block_size == 0 {
            return bad("block-size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.per) {
            return bad("per must lie in [0, 1]");
        }
        if self.vbr.is_nan() || self.vbr <= 0.0 {
            return bad("vbr must be positive");
        }
        if self.delay_budget.is_nan() || self.delay_budget <= 0.0 {
            return bad("delay-budget must be positive");
        }
        if self.rtt.is_nan() || self.rtt <= 0.0 {
            return bad("rtt must be positive");
        }
        if !(0.0..=1.0).contains(&self.loss_tolerance) {
            return bad("loss-tolerance must lie in [0, 1]");
        }
        self.strategy_config().map(|_| ())
    }
}

/// One line, `key=value` pairs, suitable for a CSV comment.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "strategy={} algorithm={} block-size={} rf={} rc-replication={} per={:?} seed={} vbr={:?} \
             delay-budget={:?} rtt={:?} trials={} input={} length={} loss-tolerance={:?} reorder={} reinit={} \
             drop-seq={} drop-block={} identity={}",
            self.strategy.name(),
            self.algorithm.name(),
            self.block_size,
            self.rf,
            self.rc_replication,
            self.per,
            self.seed,
            self.vbr,
            self.delay_budget,
            self.rtt,
            self.trials,
            self.input.as_ref().map_or("-".into(), |p| p.display().to_string()),
            self.length,
            self.loss_tolerance,
            self.reorder,
            self.reinit,
            self.drop_seq.as_deref().unwrap_or("-"),
            self.drop_block.as_deref().unwrap_or("-"),
            self.identity,
        )
    }
}
