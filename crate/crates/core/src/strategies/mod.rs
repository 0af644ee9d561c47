//! The resynchronization schemes.
//!
//! All schemes share one digest unit: for a Block (or a one-Block Window)
//! the chain value is prefixed to `block_index (u32) || packet_count (u32) ||
//! payloads`. The packet count is the length prefix that defeats padding
//! attacks; the index binds the digest to its position in the stream.
//!
//! Only RC-SRS groups several Blocks into a Window. Its k Block digests are
//! all taken under the chain value entering the Window, so any single one can
//! be rebuilt from the parity without the others depending on it. The chain
//! then continues from the Window's last Block digest.

mod rc;
mod sender;
mod shhc;
mod tsp;
mod tss;

use std::fmt;

use thiserror::Error;

use crate::hashchain::{Algorithm, ChainError, ChainState, Digest, MlhcState};
use crate::packetizer::{PACKET_LEN, RC_AREA_LEN};

pub use rc::{rc_carriers, rc_compute, rc_embed, rc_recover, RcCarrier};
pub use sender::{annotate_stream, LinkMeter, SenderOutput, WindowRecord};
pub use shhc::{
    shhc_annotate, shhc_consistent, shhc_constituents, shhc_covers, shhc_recover, shhc_references, Link, ShhcMode,
    ShhcNeighborhood, ShhcRole, ShhcSource,
};
pub use tsp::tsp_make_sync_packet;
pub use tss::{tss_annotate, tss_decode, TssLink};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StrategyError {
    #[error("RC budget exceeded: {copies} x {digest_len} octets > {RC_AREA_LEN}")]
    RcBudgetExceeded { copies: u32, digest_len: usize },
    #[error("digest cannot be recovered ({missing} Block digests missing)")]
    NotRecoverable { missing: usize },
    #[error("every RC copy was lost")]
    RcLost,
    #[error("no Block digest is missing")]
    NothingToRecover,
    #[error("invalid strategy configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    ShhcConcat,
    ShhcXor,
    Tsp,
    Mlhc,
    Tss,
    RcSrs,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::ShhcConcat,
        StrategyKind::ShhcXor,
        StrategyKind::Tsp,
        StrategyKind::Mlhc,
        StrategyKind::Tss,
        StrategyKind::RcSrs,
    ];

    /// The `strategy_id` octet carried on the wire.
    pub fn id(self) -> u8 {
        match self {
            StrategyKind::ShhcConcat => 1,
            StrategyKind::ShhcXor => 2,
            StrategyKind::Tsp => 3,
            StrategyKind::Mlhc => 4,
            StrategyKind::Tss => 5,
            StrategyKind::RcSrs => 6,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        StrategyKind::ALL.into_iter().find(|k| k.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::ShhcConcat => "shhc-concat",
            StrategyKind::ShhcXor => "shhc-xor",
            StrategyKind::Tsp => "tsp",
            StrategyKind::Mlhc => "mlhc",
            StrategyKind::Tss => "tss",
            StrategyKind::RcSrs => "rc-srs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        StrategyKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Blocks per Window k for RC-SRS (2, 3 or 4).
    pub rf_numerator: u32,
    /// RC copies embedded per Window.
    pub rc_replication: u32,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            rf_numerator: 3,
            rc_replication: 1,
        }
    }

    pub fn rc_srs(k: u32, replication: u32) -> Self {
        StrategyConfig {
            kind: StrategyKind::RcSrs,
            rf_numerator: k,
            rc_replication: replication,
        }
    }

    /// Blocks per Window: k for RC-SRS, one for every other scheme.
    pub fn blocks_per_window(&self) -> u32 {
        match self.kind {
            StrategyKind::RcSrs => self.rf_numerator,
            _ => 1,
        }
    }

    /// Redundancy factor label k/(k+1).
    pub fn rf_label(&self) -> String {
        let k = self.blocks_per_window();
        format!("{}/{}", k, k + 1)
    }

    pub fn validate(&self, algorithm: Algorithm) -> Result<(), StrategyError> {
        if self.kind != StrategyKind::RcSrs {
            return Ok(());
        }
        if !(2..=4).contains(&self.rf_numerator) {
            return Err(StrategyError::InvalidConfig(format!(
                "RC-SRS needs k in 2..=4, got {}",
                self.rf_numerator
            )));
        }
        if self.rc_replication == 0 {
            return Err(StrategyError::InvalidConfig(
                "RC-SRS needs at least one RC copy".into(),
            ));
        }
        if self.rc_replication as usize * algorithm.len() > RC_AREA_LEN {
            return Err(StrategyError::RcBudgetExceeded {
                copies: self.rc_replication,
                digest_len: algorithm.len(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for StrategyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            StrategyKind::RcSrs => write!(
                f,
                "rc-srs(rf={}, copies={})",
                self.rf_label(),
                self.rc_replication
            ),
            k => f.write_str(k.name()),
        }
    }
}

/// Keys and vectors a stream is authenticated under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionKeys {
    pub algorithm: Algorithm,
    /// Chain start `IV_0`: the standard vector, or the secret one delivered
    /// by the key exchange.
    pub iv0: Digest,
    /// Outer-layer key for MLHC.
    pub iv_sec: Digest,
    /// Key for the keyed digest that stands in for signing SHHC's first link.
    pub signing_key: Vec<u8>,
}

impl SessionKeys {
    /// Unkeyed session: everything derived from the public standard vector.
    pub fn public(algorithm: Algorithm) -> Self {
        let iv = algorithm.standard_iv();
        SessionKeys {
            algorithm,
            iv0: iv,
            iv_sec: iv,
            signing_key: iv.as_bytes().to_vec(),
        }
    }

    pub fn keyed(algorithm: Algorithm, iv_sec: Digest, signing_key: Vec<u8>) -> Self {
        SessionKeys {
            algorithm,
            iv0: iv_sec,
            iv_sec,
            signing_key,
        }
    }

    pub fn sign(&self, link: &Digest) -> Digest {
        crate::hashchain::keyed_digest(self.algorithm, &self.signing_key, link.as_bytes())
    }
}

/// Chain position carried between Windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainCursor {
    Single(ChainState),
    Layered(MlhcState),
}

impl ChainCursor {
    pub fn start(kind: StrategyKind, keys: &SessionKeys) -> Self {
        match kind {
            StrategyKind::Mlhc => ChainCursor::Layered(MlhcState::new(
                keys.algorithm.standard_iv(),
                keys.iv_sec,
            )),
            _ => ChainCursor::Single(ChainState::new(keys.iv0)),
        }
    }

    /// The value that represents this chain externally (outer layer for MLHC).
    pub fn digest(&self) -> Digest {
        match self {
            ChainCursor::Single(s) => s.iv(),
            ChainCursor::Layered(m) => m.outer_iv(),
        }
    }

    pub fn inner(&self) -> Option<Digest> {
        match self {
            ChainCursor::Single(_) => None,
            ChainCursor::Layered(m) => Some(m.inner_iv()),
        }
    }

    pub fn position(&self) -> u64 {
        match self {
            ChainCursor::Single(s) => s.position(),
            ChainCursor::Layered(m) => m.outer.position(),
        }
    }
}

/// Length-and-index prefix of a digest unit.
pub fn unit_prefix(block_index: u32, packet_count: u32) -> [u8; 8] {
    let mut out = [0u8; 8];
    out[..4].copy_from_slice(&block_index.to_be_bytes());
    out[4..].copy_from_slice(&packet_count.to_be_bytes());
    out
}

/// Full digest unit as one buffer: prefix followed by the payloads.
pub fn unit_bytes<'a, I>(block_index: u32, payloads: I) -> Vec<u8>
where
    I: IntoIterator<Item = &'a [u8]>,
    I::IntoIter: ExactSizeIterator,
{
    let iter = payloads.into_iter();
    let mut out = unit_prefix(block_index, iter.len() as u32).to_vec();
    for p in iter {
        out.extend_from_slice(p);
    }
    out
}

/// `h(iv || prefix || payloads)` without building the unit buffer.
pub fn unit_digest(state: &ChainState, block_index: u32, payloads: &[&[u8]]) -> Digest {
    let prefix = unit_prefix(block_index, payloads.len() as u32);
    state.peek_parts(std::iter::once(&prefix[..]).chain(payloads.iter().copied()))
}

/// Bytes a scheme adds for one Window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub kind: StrategyKind,
    pub bytes: Vec<u8>,
    /// Digest-sized records in `bytes`.
    pub records: u8,
}

impl Annotation {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Processing-delay multiplier of one Window, in units of X.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayMultiplier {
    pub factor: u32,
    pub approximate: bool,
}

impl fmt::Display for DelayMultiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.approximate {
            write!(f, "≈{}X", self.factor)
        } else if self.factor == 1 {
            f.write_str("X")
        } else {
            write!(f, "{}X", self.factor)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overhead {
    pub octets_per_window: usize,
    pub delay: DelayMultiplier,
}

/// Octets added per Window and its delay multiplier.
pub fn overhead_of(config: &StrategyConfig, algorithm: Algorithm) -> Overhead {
    let d = algorithm.len();
    let (octets, factor, approximate) = match config.kind {
        StrategyKind::ShhcConcat => (3 * d, 3, false),
        StrategyKind::ShhcXor => (d, 3, false),
        StrategyKind::Tsp => (PACKET_LEN, 1, false),
        StrategyKind::Mlhc => (d, 2, true),
        StrategyKind::Tss => (d + 4, 1, false),
        StrategyKind::RcSrs => (d, config.blocks_per_window(), false),
    };
    Overhead {
        octets_per_window: octets,
        delay: DelayMultiplier {
            factor,
            approximate,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_ids_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(StrategyKind::from_id(k.id()), Some(k));
            assert_eq!(StrategyKind::parse(k.name()), Some(k));
        }
        assert_eq!(StrategyKind::RcSrs.id(), 6);
        assert_eq!(StrategyKind::parse("RC_SRS"), Some(StrategyKind::RcSrs));
        assert_eq!(StrategyKind::from_id(0), None);
    }

    #[test]
    fn overhead_table_cells() {
        let cell = |kind, alg| {
            let o = overhead_of(&StrategyConfig::new(kind), alg);
            (o.octets_per_window, o.delay.to_string())
        };
        use Algorithm::*;
        use StrategyKind::*;
        assert_eq!(cell(ShhcConcat, D16), (48, "3X".into()));
        assert_eq!(cell(ShhcConcat, D20), (60, "3X".into()));
        assert_eq!(cell(ShhcXor, D16), (16, "3X".into()));
        assert_eq!(cell(ShhcXor, D20), (20, "3X".into()));
        assert_eq!(cell(Tsp, D16), (1500, "X".into()));
        assert_eq!(cell(Mlhc, D20), (20, "≈2X".into()));
        assert_eq!(cell(Tss, D16), (20, "X".into()));
        assert_eq!(cell(Tss, D20), (24, "X".into()));
        for (k, label) in [(2, "2X"), (3, "3X"), (4, "4X")] {
            let o = overhead_of(&StrategyConfig::rc_srs(k, 1), D20);
            assert_eq!((o.octets_per_window, o.delay.to_string()), (20, label.into()));
            let o = overhead_of(&StrategyConfig::rc_srs(k, 1), D16);
            assert_eq!(o.octets_per_window, 16);
        }
    }

    #[test]
    fn rf_labels() {
        assert_eq!(StrategyConfig::rc_srs(2, 1).rf_label(), "2/3");
        assert_eq!(StrategyConfig::rc_srs(3, 1).rf_label(), "3/4");
        assert_eq!(StrategyConfig::rc_srs(4, 1).rf_label(), "4/5");
    }

    #[test]
    fn config_validation() {
        assert!(StrategyConfig::rc_srs(3, 8).validate(Algorithm::D16).is_ok());
        assert!(StrategyConfig::rc_srs(3, 6).validate(Algorithm::D20).is_ok());
        assert_eq!(
            StrategyConfig::rc_srs(3, 7).validate(Algorithm::D20),
            Err(StrategyError::RcBudgetExceeded {
                copies: 7,
                digest_len: 20
            })
        );
        assert!(StrategyConfig::rc_srs(5, 1).validate(Algorithm::D20).is_err());
        assert!(StrategyConfig::rc_srs(3, 0).validate(Algorithm::D20).is_err());
        assert!(StrategyConfig::new(StrategyKind::Tss)
            .validate(Algorithm::D20)
            .is_ok());
    }

    #[test]
    fn unit_digest_matches_buffered_unit() {
        let s = ChainState::new(Algorithm::D20.standard_iv());
        let a = [1u8; 10];
        let b = [2u8; 10];
        let direct = unit_digest(&s, 4, &[&a, &b]);
        let buffered = s.peek(&unit_bytes(4, [&a[..], &b[..]]));
        assert_eq!(direct, buffered);
        assert_ne!(direct, unit_digest(&s, 5, &[&a, &b]));
        assert_ne!(direct, unit_digest(&s, 4, &[&a]));
    }
}
