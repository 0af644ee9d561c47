//! Self-healing hash chain annotations.
//!
//! Block i carries the links around it so that a lost Block can be
//! re-linked from a neighbour's annotation. Concatenation carries every link
//! verbatim; XOR folds them into one digest-sized record that can be solved
//! for a single unknown.

use std::collections::BTreeMap;

use super::{Annotation, StrategyError, StrategyKind};
use crate::hashchain::{xor_digests, Algorithm, Digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShhcMode {
    Concat,
    Xor,
}

impl ShhcMode {
    pub fn kind(self) -> StrategyKind {
        match self {
            ShhcMode::Concat => StrategyKind::ShhcConcat,
            ShhcMode::Xor => StrategyKind::ShhcXor,
        }
    }

    pub fn of(kind: StrategyKind) -> Option<Self> {
        match kind {
            StrategyKind::ShhcConcat => Some(ShhcMode::Concat),
            StrategyKind::ShhcXor => Some(ShhcMode::Xor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShhcRole {
    /// The only Block of the stream.
    Only,
    First,
    Interior,
    Last,
}

impl ShhcRole {
    pub fn of(block: u32, is_final: bool) -> ShhcRole {
        match (block, is_final) {
            (0, true) => ShhcRole::Only,
            (0, false) => ShhcRole::First,
            (_, false) => ShhcRole::Interior,
            (_, true) => ShhcRole::Last,
        }
    }
}

/// One constituent of an annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Keyed digest of the first link under the session signing key.
    Sign,
    Chain(u32),
}

/// Constituents of Block `block`'s annotation, in wire order.
///
/// In XOR mode the first Block also folds in its successor, so every link
/// after the first appears in some earlier annotation.
pub fn shhc_constituents(mode: ShhcMode, block: u32, role: ShhcRole) -> Vec<Link> {
    match role {
        ShhcRole::Only => vec![Link::Sign, Link::Chain(0)],
        ShhcRole::First => match mode {
            ShhcMode::Concat => vec![Link::Sign, Link::Chain(0)],
            ShhcMode::Xor => vec![Link::Sign, Link::Chain(0), Link::Chain(1)],
        },
        ShhcRole::Interior => vec![
            Link::Chain(block - 1),
            Link::Chain(block),
            Link::Chain(block + 1),
        ],
        ShhcRole::Last => vec![Link::Chain(block - 1), Link::Chain(block)],
    }
}

/// The links around Block `block` as the sender sees them.
#[derive(Debug, Clone, Copy)]
pub struct ShhcNeighborhood {
    pub block: u32,
    pub prev: Option<Digest>,
    pub current: Digest,
    pub next: Option<Digest>,
    /// `Some` for the first Block only.
    pub signature: Option<Digest>,
}

impl ShhcNeighborhood {
    pub fn role(&self) -> ShhcRole {
        ShhcRole::of(self.block, self.next.is_none())
    }
}

pub fn shhc_annotate(view: &ShhcNeighborhood, mode: ShhcMode) -> Result<Annotation, StrategyError> {
    let role = view.role();
    let links = shhc_constituents(mode, view.block, role);
    let mut parts = Vec::with_capacity(links.len());
    for link in links {
        let d = match link {
            Link::Sign => view.signature,
            Link::Chain(b) if b == view.block => Some(view.current),
            Link::Chain(b) if b + 1 == view.block => view.prev,
            Link::Chain(_) => view.next,
        };
        parts.push(d.ok_or_else(|| {
            StrategyError::InvalidConfig(format!(
                "block {} ({role:?}) is missing a neighbour link",
                view.block
            ))
        })?);
    }
    Ok(match mode {
        ShhcMode::Concat => Annotation {
            kind: mode.kind(),
            bytes: parts.iter().flat_map(|d| d.as_bytes().to_vec()).collect(),
            records: parts.len() as u8,
        },
        ShhcMode::Xor => Annotation {
            kind: mode.kind(),
            bytes: xor_digests(parts.iter())?.as_bytes().to_vec(),
            records: 1,
        },
    })
}

/// A received annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShhcSource {
    pub block: u32,
    pub role: ShhcRole,
    pub bytes: Vec<u8>,
}

impl ShhcSource {
    fn record(&self, alg: Algorithm, i: usize) -> Option<Digest> {
        let d = alg.len();
        self.bytes
            .get(i * d..(i + 1) * d)
            .and_then(|s| Digest::from_slice(alg, s).ok())
    }
}

fn resolve(
    link: Link,
    known: &BTreeMap<u32, Digest>,
    sign: &dyn Fn(&Digest) -> Digest,
) -> Option<Digest> {
    match link {
        Link::Sign => known.get(&0).map(sign),
        Link::Chain(b) => known.get(&b).copied(),
    }
}

/// Every value of link `target` that the sources pin down given `known`.
pub fn shhc_references(
    mode: ShhcMode,
    algorithm: Algorithm,
    sources: &[ShhcSource],
    known: &BTreeMap<u32, Digest>,
    sign: &dyn Fn(&Digest) -> Digest,
    target: u32,
) -> Vec<Digest> {
    let mut out = Vec::new();
    for src in sources {
        let links = shhc_constituents(mode, src.block, src.role);
        let Some(pos) = links.iter().position(|l| *l == Link::Chain(target)) else {
            continue;
        };
        match mode {
            ShhcMode::Concat => out.extend(src.record(algorithm, pos)),
            ShhcMode::Xor => {
                let Some(mut acc) = src.record(algorithm, 0) else {
                    continue;
                };
                let mut solvable = true;
                for (i, l) in links.iter().enumerate() {
                    if i == pos {
                        continue;
                    }
                    match resolve(*l, known, sign) {
                        Some(d) => acc = acc.xor(&d).expect("same algorithm"),
                        None => {
                            solvable = false;
                            break;
                        }
                    }
                }
                if solvable {
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Rebuild link `target` from whichever source can supply it.
pub fn shhc_recover(
    mode: ShhcMode,
    algorithm: Algorithm,
    sources: &[ShhcSource],
    known: &BTreeMap<u32, Digest>,
    sign: &dyn Fn(&Digest) -> Digest,
    target: u32,
) -> Result<Digest, StrategyError> {
    shhc_references(mode, algorithm, sources, known, sign, target)
        .into_iter()
        .next()
        .ok_or(StrategyError::NotRecoverable { missing: 1 })
}

/// `false` if any source contradicts the known links. Sources with an
/// unknown constituent are skipped.
pub fn shhc_consistent(
    mode: ShhcMode,
    algorithm: Algorithm,
    sources: &[ShhcSource],
    known: &BTreeMap<u32, Digest>,
    sign: &dyn Fn(&Digest) -> Digest,
) -> bool {
    for src in sources {
        let links = shhc_constituents(mode, src.block, src.role);
        match mode {
            ShhcMode::Concat => {
                if src.bytes.len() != links.len() * algorithm.len() {
                    return false;
                }
                for (i, l) in links.iter().enumerate() {
                    if let Some(expect) = resolve(*l, known, sign) {
                        if src.record(algorithm, i) != Some(expect) {
                            return false;
                        }
                    }
                }
            }
            ShhcMode::Xor => {
                let resolved: Option<Vec<Digest>> =
                    links.iter().map(|l| resolve(*l, known, sign)).collect();
                if let Some(parts) = resolved {
                    let expect = xor_digests(parts.iter()).expect("same algorithm");
                    if src.record(algorithm, 0) != Some(expect) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Whether some source checks link `target` against `known`: concatenation
/// carries each link verbatim; an XOR record only checks once every
/// constituent is known.
pub fn shhc_covers(
    mode: ShhcMode,
    sources: &[ShhcSource],
    known: &BTreeMap<u32, Digest>,
    target: u32,
) -> bool {
    if !known.contains_key(&target) {
        return false;
    }
    sources.iter().any(|src| {
        let links = shhc_constituents(mode, src.block, src.role);
        links.contains(&Link::Chain(target))
            && (mode == ShhcMode::Concat
                || links.iter().all(|l| match l {
                    Link::Sign => known.contains_key(&0),
                    Link::Chain(b) => known.contains_key(b),
                }))
    })
}
