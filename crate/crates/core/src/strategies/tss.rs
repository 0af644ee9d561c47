//! Time-stamped synchronization: each link covers the previous link, the
//! Window digest and the Window's timestamp.

use super::StrategyError;
use crate::hashchain::{digest_parts, ChainState, Digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TssLink {
    /// `WD_i = h(H_{i-1} || unit)`.
    pub window_digest: Digest,
    /// `H_i = h(H_{i-1} || WD_i || T_i)`.
    pub link: Digest,
    pub timestamp: u32,
}

impl TssLink {
    /// `H_i || T_i` as carried on the wire.
    pub fn annotation(&self) -> Vec<u8> {
        let mut out = self.link.as_bytes().to_vec();
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out
    }
}

/// Compute the TSS link for a unit given as parts.
pub fn tss_annotate<'a, I>(state: &ChainState, unit: I, timestamp: u32) -> TssLink
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let wd = state.peek_parts(unit);
    let t = timestamp.to_be_bytes();
    let link = digest_parts(
        state.algorithm(),
        [state.iv().as_bytes(), wd.as_bytes(), &t[..]],
    );
    TssLink {
        window_digest: wd,
        link,
        timestamp,
    }
}

/// Split a received `H || T` annotation.
pub fn tss_decode(state: &ChainState, bytes: &[u8]) -> Result<(Digest, u32), StrategyError> {
    let d = state.algorithm().len();
    if bytes.len() < d + 4 {
        return Err(StrategyError::InvalidConfig(format!(
            "TSS annotation needs {} octets, got {}",
            d + 4,
            bytes.len()
        )));
    }
    let h = Digest::from_slice(state.algorithm(), &bytes[..d])?;
    let t = u32::from_be_bytes(bytes[d..d + 4].try_into().unwrap());
    Ok((h, t))
}
