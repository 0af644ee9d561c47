//! Recovery codes: the XOR of a Window's Block digests, embedded in the
//! reserved area of the Window's last packets.

use super::StrategyError;
use crate::hashchain::{xor_digests, Digest};
use crate::packetizer::{Flags, Window, RC_AREA_LEN};

pub fn rc_compute(block_digests: &[Digest]) -> Result<Digest, StrategyError> {
    Ok(xor_digests(block_digests.iter())?)
}

/// A Block whose last packet carries `copies` RC records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RcCarrier {
    pub block: usize,
    pub copies: u32,
}

/// Carriers for a Window of `blocks` Blocks and `replication` copies: the
/// last packets of the last `min(replication, blocks)` Blocks, one copy each,
/// with the remainder stacked on the Window's final packet.
pub fn rc_carriers(blocks: usize, replication: u32) -> Vec<RcCarrier> {
    if blocks == 0 || replication == 0 {
        return Vec::new();
    }
    let c = (replication as usize).min(blocks);
    (blocks - c..blocks)
        .map(|b| RcCarrier {
            block: b,
            copies: if b + 1 == blocks {
                replication - (c as u32 - 1)
            } else {
                1
            },
        })
        .collect()
}

pub fn rc_embed(window: &mut Window, rc: &Digest, replication: u32) -> Result<(), StrategyError> {
    if replication as usize * rc.len() > RC_AREA_LEN {
        return Err(StrategyError::RcBudgetExceeded {
            copies: replication,
            digest_len: rc.len(),
        });
    }
    for carrier in rc_carriers(window.blocks.len(), replication) {
        let bytes = rc.as_bytes().repeat(carrier.copies as usize);
        let p = window.blocks[carrier.block].last_packet_mut();
        p.put_rc_area(&bytes, carrier.copies as u8);
        p.header.flags.set(Flags::CARRIES_RC, true);
    }
    Ok(())
}

/// Rebuild the one missing Block digest. Returns its position and value.
pub fn rc_recover(
    rc: Option<&Digest>,
    slots: &[Option<Digest>],
) -> Result<(usize, Digest), StrategyError> {
    let missing: Vec<usize> = slots
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.is_none().then_some(i))
        .collect();
    match missing.len() {
        0 => Err(StrategyError::NothingToRecover),
        1 => {
            let rc = rc.ok_or(StrategyError::RcLost)?;
            let mut acc = *rc;
            for d in slots.iter().flatten() {
                acc = acc.xor(d)?;
            }
            Ok((missing[0], acc))
        }
        n => Err(StrategyError::NotRecoverable { missing: n }),
    }
}
