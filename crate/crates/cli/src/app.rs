use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use num_bigint::BigUint;

use hcsync::keyexchange::Profile;

use crate::{cmd_experiment, cmd_keyexchange, cmd_roundtrip, CliError, Experiment, RunConfig};

#[derive(Parser)]
#[command(name = "hcsync", version, about = "Hash-chain resynchronization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared settings. Flags override `--config`, which overrides `HASHCHAIN_SEED`.
#[derive(Args, Default)]
struct Common {
    /// key=value file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    strategy: Option<String>,
    #[arg(long, global = true)]
    algorithm: Option<String>,
    #[arg(long, global = true)]
    block_size: Option<String>,
    /// Blocks per RC-SRS Window
    #[arg(long, global = true)]
    rf: Option<String>,
    #[arg(long, global = true)]
    rc_replication: Option<String>,
    #[arg(long, global = true)]
    per: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    vbr: Option<String>,
    #[arg(long, global = true)]
    delay_budget: Option<String>,
    #[arg(long, global = true)]
    rtt: Option<String>,
    #[arg(long, global = true)]
    trials: Option<String>,
    #[arg(long, global = true)]
    input: Option<String>,
    #[arg(long, global = true)]
    length: Option<String>,
    #[arg(long, global = true)]
    out_dir: Option<String>,
    #[arg(long, global = true)]
    loss_tolerance: Option<String>,
    #[arg(long, global = true)]
    reorder: Option<String>,
    #[arg(long, global = true)]
    identity: Option<String>,
}

impl Common {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        [
            ("strategy", &self.strategy),
            ("algorithm", &self.algorithm),
            ("block-size", &self.block_size),
            ("rf", &self.rf),
            ("rc-replication", &self.rc_replication),
            ("per", &self.per),
            ("seed", &self.seed),
            ("vbr", &self.vbr),
            ("delay-budget", &self.delay_budget),
            ("rtt", &self.rtt),
            ("trials", &self.trials),
            ("input", &self.input),
            ("length", &self.length),
            ("out-dir", &self.out_dir),
            ("loss-tolerance", &self.loss_tolerance),
            ("reorder", &self.reorder),
            ("identity", &self.identity),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::from_env()?;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.pairs() {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Send a stream through the channel and verify it
    Roundtrip {
        /// Sequence numbers to drop, e.g. 3,10-12
        #[arg(long)]
        drop_seq: Option<String>,
        /// Blocks whose data packets are dropped
        #[arg(long)]
        drop_block: Option<String>,
        /// Answer reinitialization requests
        #[arg(long)]
        reinit: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Emit one of the analysis CSVs
    Experiment {
        /// recovery-curve, optimal-block, overhead-table, window-sizing or timing
        #[arg(value_parser = parse_experiment)]
        name: Experiment,
        #[command(flatten)]
        common: Common,
    },
    /// Print the key exchange message sequence
    Keyexchange {
        /// toy or full
        #[arg(long, default_value = "toy", value_parser = parse_profile)]
        profile: Profile,
        /// Replace the client's public point, as "x,y" in decimal
        #[arg(long, hide = true)]
        inject_y: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    Experiment::parse(s).ok_or_else(|| {
        let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    Profile::parse(s).ok_or_else(|| "expected toy or full".into())
}

fn parse_point(s: &str) -> Result<(BigUint, BigUint), CliError> {
    let bad = || CliError::Config(format!("inject-y: expected x,y, got {s:?}"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    let x = x.trim().parse().map_err(|_| bad())?;
    let y = y.trim().parse().map_err(|_| bad())?;
    Ok((x, y))
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Roundtrip {
            drop_seq,
            drop_block,
            reinit,
            common,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(s) = drop_seq {
                cfg.set("drop-seq", &s)?;
            }
            if let Some(s) = drop_block {
                cfg.set("drop-block", &s)?;
            }
            if reinit {
                cfg.reinit = true;
            }
            let summary = cmd_roundtrip(&cfg, out)?;
            match summary.failure {
                Some(reason) => Err(CliError::Verification(reason)),
                None => Ok(()),
            }
        }
        Command::Experiment { name, common } => {
            let cfg = common.resolve()?;
            let path = cmd_experiment(name, &cfg, out)?;
            log::info!("wrote {}", path.display());
            Ok(())
        }
        Command::Keyexchange {
            profile,
            inject_y,
            common,
        } => {
            let cfg = common.resolve()?;
            let forged = inject_y.as_deref().map(parse_point).transpose()?;
            cmd_keyexchange(profile, &cfg, forged, out)
        }
    }
}

/// Parse `args` (program name first), run, and return the process exit code.
/// Command output goes to `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
