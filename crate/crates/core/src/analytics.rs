//! Closed-form sizing and error models, the analytic recovery probability,
//! and the Monte Carlo and timing experiments that go with them.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{erasure_mask, trial_rng};
use crate::hashchain::Algorithm;
use crate::receiver::waiting_time;
use crate::session::{self, Impairment, SessionConfig};
use crate::strategies::{rc_carriers, StrategyConfig, StrategyKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub const MTU_BITS: f64 = 12_000.0;
/// Largest acceptable buffering delay, seconds.
pub const MAX_DELAY_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamParams {
    pub vbr: f64,
    pub mtu_bits: f64,
    pub block_size: u32,
    pub delay_budget: f64,
    pub rtt: f64,
}

impl StreamParams {
    pub fn new(vbr: f64, block_size: u32) -> Self {
        StreamParams {
            vbr,
            mtu_bits: MTU_BITS,
            block_size,
            delay_budget: 1.0,
            rtt: 2.0,
        }
    }

    /// Packets per second.
    pub fn pr(&self) -> f64 {
        self.vbr / self.mtu_bits
    }

    /// Blocks per second.
    pub fn br(&self) -> f64 {
        self.pr() / self.block_size as f64
    }
}

/// `floor(rate * delay / packet_bits)`.
pub fn optimal_block_size(rate_bps: f64, delay_s: f64, packet_bits: f64) -> Result<u32, AnalyticsError> {
    if !(rate_bps > 0.0 && delay_s > 0.0 && packet_bits > 0.0) {
        return Err(AnalyticsError::InvalidConfig(format!(
            "rate, delay and packet size must be positive (got {rate_bps}, {delay_s}, {packet_bits})"
        )));
    }
    Ok((rate_bps * delay_s / packet_bits + 1e-9).floor() as u32)
}

pub fn window_size_for_rate(vbr: f64, delay_s: f64, packet_bits: f64) -> Result<u32, AnalyticsError> {
    optimal_block_size(vbr, delay_s, packet_bits)
}

pub fn rc_replication_budget(spare_octets: usize, digest_len: usize) -> usize {
    spare_octets / digest_len
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HerVariant {
    /// `HER = (PER_T / B) * RF`.
    PerWindow,
    /// `HER = (PER / B) * RF`.
    PerPacket,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorModel {
    pub per: f64,
    pub per_t: f64,
    pub her: f64,
    pub rf: f64,
}

pub fn error_model(block_size: u32, blocks_per_window: u32, rf: f64, variant: HerVariant) -> ErrorModel {
    let b = block_size as f64;
    let per = 1.0 / b;
    let per_t = per / blocks_per_window as f64;
    let her = match variant {
        HerVariant::PerWindow => per_t / b * rf,
        HerVariant::PerPacket => per / b * rf,
    };
    ErrorModel { per, per_t, her, rf }
}

/// Probability that a Window ends Verified or Recovered when each packet is
/// erased independently with probability `per`.
///
/// Blocks have `block_sizes[j]` packets; the RC copies sit in the last
/// packets of the carrier Blocks returned by [`rc_carriers`].
pub fn analytic_recovery_probability(per: f64, block_sizes: &[u32], rc_copies: u32) -> f64 {
    let k = block_sizes.len();
    if k == 0 {
        return 1.0;
    }
    let carriers: Vec<usize> = rc_carriers(k, rc_copies).iter().map(|c| c.block).collect();
    let s = 1.0 - per;
    let q: Vec<f64> = block_sizes.iter().map(|&b| s.powi(b as i32)).collect();
    let all: f64 = q.iter().product();
    let mut one = 0.0;
    for j in 0..k {
        let others: f64 = (0..k).filter(|&i| i != j).map(|i| q[i]).product();
        let other_carrier = carriers.iter().any(|&c| c != j);
        let fail_with_rc = if other_carrier {
            1.0 - q[j]
        } else if carriers.contains(&j) {
            // j fails but its last packet, the only carrier, survives
            s * (1.0 - s.powi(block_sizes[j] as i32 - 1))
        } else {
            0.0
        };
        one += others * fail_with_rc;
    }
    all + one
}

/// A full Window of `k` Blocks of `b` packets.
pub fn analytic_recovery_uniform(per: f64, b: u32, k: u32, rc_copies: u32) -> f64 {
    analytic_recovery_probability(per, &vec![b; k as usize], rc_copies)
}

/// Window outcome from an erasure mask over its packets, Block by Block.
pub fn window_recovers(mask: &[bool], block_sizes: &[u32], rc_copies: u32) -> bool {
    let mut complete = Vec::with_capacity(block_sizes.len());
    let mut last = Vec::with_capacity(block_sizes.len());
    let mut at = 0;
    for &b in block_sizes {
        let block = &mask[at..at + b as usize];
        complete.push(block.iter().all(|&lost| !lost));
        last.push(!block[b as usize - 1]);
        at += b as usize;
    }
    let rc_available = rc_carriers(block_sizes.len(), rc_copies)
        .iter()
        .any(|c| last[c.block]);
    match complete.iter().filter(|&&c| !c).count() {
        0 => true,
        1 => rc_available,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryPoint {
    pub rf: String,
    pub per: f64,
    pub trials: u64,
    pub recovered_fraction: f64,
    pub analytic: f64,
}

impl RecoveryPoint {
    /// Binomial standard deviation at the analytic value.
    pub fn sigma(&self) -> f64 {
        (self.analytic * (1.0 - self.analytic) / self.trials as f64).sqrt()
    }

    pub fn within(&self, sigmas: f64) -> bool {
        (self.recovered_fraction - self.analytic).abs() <= sigmas * self.sigma() + 1e-12
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryExperiment {
    pub block_size: u32,
    pub rc_copies: u32,
    pub rf_numerators: Vec<u32>,
    pub pers: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
}

impl RecoveryExperiment {
    pub fn standard(seed: u64) -> Self {
        RecoveryExperiment {
            block_size: 85,
            rc_copies: 1,
            rf_numerators: vec![2, 3, 4],
            pers: vec![0.0005, 0.001, 0.002, 0.005, 0.01],
            trials: 10_000,
            seed,
        }
    }
}

/// Monte Carlo over erasure masks; trial `t` of point `i` draws from stream
/// `(i << 32) | t` of the seed so results do not depend on scheduling.
pub fn run_recovery_experiment(exp: &RecoveryExperiment) -> Result<Vec<RecoveryPoint>, AnalyticsError> {
    if exp.trials < 1000 {
        return Err(AnalyticsError::InvalidConfig(format!(
            "need at least 1000 trials, got {}",
            exp.trials
        )));
    }
    let mut points = Vec::new();
    let mut index = 0u64;
    for &k in &exp.rf_numerators {
        let sizes = vec![exp.block_size; k as usize];
        let n = (exp.block_size * k) as usize;
        for &per in &exp.pers {
            let base = index << 32;
            let ok: u64 = (0..exp.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(exp.seed, base | t);
                    window_recovers(&erasure_mask(n, per, &mut rng), &sizes, exp.rc_copies) as u64
                })
                .sum();
            points.push(RecoveryPoint {
                rf: StrategyConfig::rc_srs(k, exp.rc_copies).rf_label(),
                per,
                trials: exp.trials,
                recovered_fraction: ok as f64 / exp.trials as f64,
                analytic: analytic_recovery_probability(per, &sizes, exp.rc_copies),
            });
            index += 1;
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizingRow {
    pub rate_bps: f64,
    pub delay_s: f64,
    pub packets: u32,
}

pub const SIZING_RATES: [f64; 7] = [
    64_000.0, 128_000.0, 256_000.0, 512_000.0, 768_000.0, 1_024_000.0, 1_048_576.0,
];

pub fn window_sizing_sweep(delays: &[f64]) -> Vec<SizingRow> {
    let mut rows = Vec::new();
    for &delay_s in delays {
        for &rate_bps in &SIZING_RATES {
            let packets = window_size_for_rate(rate_bps, delay_s, MTU_BITS).expect("positive inputs");
            if packets < crate::packetizer::DEFAULT_BLOCK_SIZE {
                log::warn!(
                    "{rate_bps} bit/s over {delay_s} s gives a {packets}-packet window, below 85; expect longer delays"
                );
            }
            rows.push(SizingRow {
                rate_bps,
                delay_s,
                packets,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub strategy: StrategyKind,
    pub algorithm: Algorithm,
    pub rate_bps: f64,
    pub mean_ms: f64,
    pub digest_ops_per_window: u32,
}

pub const TIMING_RATES: [f64; 4] = [256_000.0, 512_000.0, 768_000.0, 1_024_000.0];

fn strategy_for(kind: StrategyKind) -> StrategyConfig {
    match kind {
        StrategyKind::RcSrs => StrategyConfig::rc_srs(3, 1),
        k => StrategyConfig::new(k),
    }
}

/// Wall time of annotate + verify per Block. For inspection only.
pub fn timing_report(windows: u32) -> Vec<TimingRow> {
    // the median needs interior Windows to outnumber the two ends
    let windows = windows.max(5);
    let mut rows = Vec::new();
    for kind in StrategyKind::ALL {
        for alg in Algorithm::ALL {
            for &rate in &TIMING_RATES {
                let mut cfg = SessionConfig::new(strategy_for(kind), alg);
                cfg.vbr_bps = rate;
                cfg.block_size = optimal_block_size(rate, 1.0, MTU_BITS).expect("positive").max(1);
                let blocks = windows * cfg.strategy.blocks_per_window();
                let data = vec![0x5au8; (blocks * cfg.block_size) as usize * crate::packetizer::PAYLOAD_LEN];
                let start = Instant::now();
                let result = session::run(&data, &cfg, &Impairment::None);
                let elapsed = start.elapsed().as_secs_f64() * 1000.0;
                let Ok(result) = result else { continue };
                let mut ops: Vec<u32> = result.sender.windows.iter().map(|w| w.meter.total()).collect();
                ops.sort_unstable();
                rows.push(TimingRow {
                    strategy: kind,
                    algorithm: alg,
                    rate_bps: rate,
                    mean_ms: elapsed / blocks as f64,
                    digest_ops_per_window: ops[ops.len() / 2],
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayBudget {
    /// Measured hashing and verification time for one Window.
    pub d_calcul: f64,
    /// Worst-case wait before an RC recovery can start.
    pub d_wait: f64,
    /// Time to fill one Block at the stream rate.
    pub d_fill: f64,
    pub threshold: f64,
}

impl DelayBudget {
    pub fn total(&self) -> f64 {
        self.d_calcul + self.d_wait
    }

    pub fn within(&self) -> bool {
        self.total() < self.threshold
    }
}

/// Measure `D_calcul` on a lossless run of `cfg` and add the worst-case wait.
pub fn delay_budget(cfg: &SessionConfig, windows: u32) -> Result<DelayBudget, AnalyticsError> {
    let k = cfg.strategy.blocks_per_window();
    let params = StreamParams::new(cfg.vbr_bps, cfg.block_size);
    let blocks = windows * k;
    let data = vec![0xa5u8; (blocks * cfg.block_size) as usize * crate::packetizer::PAYLOAD_LEN];
    let start = Instant::now();
    session::run(&data, cfg, &Impairment::None).map_err(|e| AnalyticsError::InvalidConfig(e.to_string()))?;
    let d_calcul = start.elapsed().as_secs_f64() / windows as f64;
    let d_wait = waiting_time(k, 1, params.br()).map_err(|e| AnalyticsError::InvalidConfig(e.to_string()))?;
    Ok(DelayBudget {
        d_calcul,
        d_wait,
        d_fill: cfg.block_size as f64 * params.mtu_bits / params.vbr,
        threshold: MAX_DELAY_S,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_size_examples() {
        assert_eq!(optimal_block_size(1_024_000.0, 1.0, 12_000.0), Ok(85));
        assert_eq!(optimal_block_size(1_024_000.0, 2.0, 12_000.0), Ok(170));
        assert_eq!(optimal_block_size(12_000.0, 1.0, 12_000.0), Ok(1));
        assert!(optimal_block_size(0.0, 1.0, 12_000.0).is_err());
        assert_eq!(window_size_for_rate(1_048_576.0, 2.0, 12_000.0), Ok(174));
        assert_eq!(window_size_for_rate(64_000.0, 1.0, 12_000.0), Ok(5));
    }

    #[test]
    fn sweep_is_monotone_and_matches_formula() {
        let rows = window_sizing_sweep(&[1.0, 2.0]);
        assert_eq!(rows.len(), 14);
        for pair in rows.chunks(7) {
            assert!(pair.windows(2).all(|w| w[0].packets <= w[1].packets));
        }
        for r in rows {
            assert_eq!(Ok(r.packets), optimal_block_size(r.rate_bps, r.delay_s, MTU_BITS));
        }
    }

    #[test]
    fn replication_budget() {
        assert_eq!(rc_replication_budget(128, 16), 8);
        assert_eq!(rc_replication_budget(128, 20), 6);
        assert_eq!(rc_replication_budget(0, 16), 0);
    }

    #[test]
    fn error_model_examples() {
        let m = error_model(85, 1, 1.0, HerVariant::PerWindow);
        assert_eq!(m.per, 1.0 / 85.0);
        assert_eq!(m.per_t, m.per);
        assert!((m.her - 1.0 / 7225.0).abs() < 1e-18);
        let m = error_model(85, 3, 0.75, HerVariant::PerWindow);
        assert!((m.per_t - 1.0 / 255.0).abs() < 1e-18);
        assert!((m.her - 0.75 / 21_675.0).abs() < 1e-18);
        let t = error_model(85, 3, 0.75, HerVariant::PerPacket);
        assert!((t.her - 0.75 / 7225.0).abs() < 1e-18);
        assert_eq!(error_model(1, 1, 1.0, HerVariant::PerWindow).per, 1.0);
        // monotone in B and M, and in rf
        let her = |b, m, rf| error_model(b, m, rf, HerVariant::PerWindow).her;
        assert!(her(86, 3, 0.75) <= her(85, 3, 0.75));
        assert!(her(85, 4, 0.75) <= her(85, 3, 0.75));
        assert!(her(85, 3, 0.8) >= her(85, 3, 0.75));
    }

    /// Oracle: sum the probability of every erasure pattern.
    fn enumerate(per: f64, sizes: &[u32], copies: u32) -> f64 {
        let n: u32 = sizes.iter().sum();
        (0u32..1 << n)
            .map(|bits| {
                let mask: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
                let lost = mask.iter().filter(|&&l| l).count() as i32;
                let p = per.powi(lost) * (1.0 - per).powi(n as i32 - lost);
                if window_recovers(&mask, sizes, copies) {
                    p
                } else {
                    0.0
                }
            })
            .sum()
    }

    #[test]
    fn closed_form_matches_enumeration() {
        for b in 1..=4u32 {
            for k in 1..=3u32 {
                for copies in 0..=3u32 {
                    for per in [0.01, 0.1, 0.37, 0.8] {
                        let sizes = vec![b; k as usize];
                        let a = analytic_recovery_probability(per, &sizes, copies);
                        let e = enumerate(per, &sizes, copies);
                        assert!((a - e).abs() < 1e-12, "b={b} k={k} r={copies} per={per}: {a} vs {e}");
                    }
                }
            }
        }
        // short tail block
        let a = analytic_recovery_probability(0.2, &[3, 2], 1);
        assert!((a - enumerate(0.2, &[3, 2], 1)).abs() < 1e-12);
    }

    #[test]
    fn probability_endpoints() {
        assert_eq!(analytic_recovery_uniform(0.0, 85, 3, 1), 1.0);
        assert_eq!(analytic_recovery_uniform(1.0, 85, 3, 1), 0.0);
    }

    #[test]
    fn b2_k2_one_copy_by_hand() {
        // 16 patterns; last packet of block 1 carries the RC
        let per: f64 = 0.3;
        let s = 1.0 - per;
        let q = s * s;
        let hand = q * q + q * (1.0 - q) + q * (s * per);
        assert!((analytic_recovery_uniform(per, 2, 2, 1) - hand).abs() < 1e-15);
    }

    #[test]
    fn experiment_is_deterministic_and_close() {
        let exp = RecoveryExperiment {
            trials: 2000,
            pers: vec![0.002, 0.01],
            ..RecoveryExperiment::standard(99)
        };
        let a = run_recovery_experiment(&exp).unwrap();
        let b = run_recovery_experiment(&exp).unwrap();
        assert_eq!(a, b);
        for p in &a {
            assert!(p.within(4.0), "{p:?}");
        }
        let few = RecoveryExperiment {
            trials: 10,
            ..exp
        };
        assert!(run_recovery_experiment(&few).is_err());
    }

    #[test]
    fn analytic_curve_non_increasing() {
        let pers = [0.0005, 0.001, 0.002, 0.005, 0.01];
        for k in 2..=4 {
            let v: Vec<f64> = pers.iter().map(|&p| analytic_recovery_uniform(p, 85, k, 1)).collect();
            assert!(v.windows(2).all(|w| w[0] >= w[1]), "{v:?}");
        }
    }

    #[test]
    fn timing_counts_match_overhead_multipliers() {
        let rows = timing_report(3);
        assert_eq!(rows.len(), 6 * 2 * 4);
        for r in &rows {
            let expect = crate::strategies::overhead_of(&strategy_for(r.strategy), r.algorithm)
                .delay
                .factor;
            assert_eq!(r.digest_ops_per_window, expect, "{:?}", r);
            assert!(r.mean_ms >= 0.0);
        }
    }

    #[test]
    fn default_config_meets_delay_threshold() {
        let cfg = SessionConfig::new(StrategyConfig::rc_srs(3, 1), Algorithm::D20);
        let d = delay_budget(&cfg, 4).unwrap();
        assert!((d.d_fill - 85.0 * 12_000.0 / 1_024_000.0).abs() < 1e-12);
        assert!(d.within(), "{d:?}");
    }
}
