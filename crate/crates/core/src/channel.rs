//! Simulated lossy link: independent erasures, bounded reordering and
//! scripted drop patterns.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::packetizer::Packet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("packet error rate must be in [0, 1], got {0}")]
    InvalidPer(f64),
    #[error("invalid drop pattern: {0}")]
    InvalidPattern(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub per: f64,
    /// Packets may move up to this many places later.
    pub reorder_window: usize,
    pub seed: u64,
}

impl ChannelModel {
    pub fn new(per: f64, seed: u64) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&per) || per.is_nan() {
            return Err(ChannelError::InvalidPer(per));
        }
        Ok(ChannelModel {
            per,
            reorder_window: 0,
            seed,
        })
    }

    pub fn with_reorder(mut self, window: usize) -> Self {
        self.reorder_window = window;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LossReport {
    pub sent: usize,
    pub delivered: usize,
    /// Sequence numbers of dropped packets, ascending.
    pub dropped: Vec<u32>,
}

impl LossReport {
    pub fn loss_rate(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.dropped.len() as f64 / self.sent as f64
        }
    }
}

/// Generator for one trial. Trials of one seed are drawn from distinct
/// streams.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// `true` marks an erased position.
pub fn erasure_mask<R: Rng>(n: usize, per: f64, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| rng.gen::<f64>() < per).collect()
}

/// Send packets through the model for a given trial.
pub fn transmit(packets: Vec<Packet>, model: &ChannelModel, trial: u64) -> (Vec<Packet>, LossReport) {
    let mut rng = trial_rng(model.seed, trial);
    let mask = erasure_mask(packets.len(), model.per, &mut rng);
    let mut report = LossReport {
        sent: packets.len(),
        ..LossReport::default()
    };
    let mut kept = Vec::with_capacity(packets.len());
    for (p, lost) in packets.into_iter().zip(mask) {
        if lost {
            report.dropped.push(p.sequence());
        } else {
            kept.push(p);
        }
    }
    report.dropped.sort_unstable();
    report.delivered = kept.len();
    if model.reorder_window > 0 {
        kept = reorder(kept, model.reorder_window, &mut rng);
    }
    (kept, report)
}

/// Displace each item by at most `window` places.
pub fn reorder<T, R: Rng>(items: Vec<T>, window: usize, rng: &mut R) -> Vec<T> {
    let mut keyed: Vec<(usize, T)> = items
        .into_iter()
        .enumerate()
        .map(|(i, t)| (i + rng.gen_range(0..=window), t))
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    keyed.into_iter().map(|(_, t)| t).collect()
}

/// Sequence numbers to drop, parsed from `3,7,10-12`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DropPattern {
    pub sequences: BTreeSet<u32>,
}

impl DropPattern {
    pub fn parse(s: &str) -> Result<Self, ChannelError> {
        let mut sequences = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let bad = || ChannelError::InvalidPattern(format!("cannot parse `{part}`"));
            match part.split_once('-') {
                Some((a, b)) => {
                    let a: u32 = a.trim().parse().map_err(|_| bad())?;
                    let b: u32 = b.trim().parse().map_err(|_| bad())?;
                    if a > b {
                        return Err(bad());
                    }
                    sequences.extend(a..=b);
                }
                None => {
                    sequences.insert(part.parse().map_err(|_| bad())?);
                }
            }
        }
        Ok(DropPattern { sequences })
    }

    pub fn from_iter<I: IntoIterator<Item = u32>>(seqs: I) -> Self {
        DropPattern {
            sequences: seqs.into_iter().collect(),
        }
    }
}

/// Drop exactly the packets named by the pattern.
pub fn replay_pattern(
    packets: Vec<Packet>,
    pattern: &DropPattern,
) -> Result<(Vec<Packet>, LossReport), ChannelError> {
    let present: BTreeSet<u32> = packets.iter().map(Packet::sequence).collect();
    if let Some(s) = pattern.sequences.iter().find(|s| !present.contains(s)) {
        return Err(ChannelError::InvalidPattern(format!(
            "sequence {s} is not in the stream"
        )));
    }
    let sent = packets.len();
    let (dropped, kept): (Vec<Packet>, Vec<Packet>) = packets
        .into_iter()
        .partition(|p| pattern.sequences.contains(&p.sequence()));
    Ok((
        kept.clone(),
        LossReport {
            sent,
            delivered: kept.len(),
            dropped: dropped.iter().map(Packet::sequence).collect(),
        },
    ))
}
