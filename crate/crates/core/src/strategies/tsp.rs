//! Time synchronization packets: a full extra packet per Window carrying the
//! Window's chain digest.

use super::StrategyKind;
use crate::hashchain::Digest;
use crate::packetizer::{Flags, Packet, PacketHeader};

/// Sync packet for a Window. The sequence number is assigned at emission.
pub fn tsp_make_sync_packet(
    window_digest: &Digest,
    window_index: u32,
    block_index: u32,
    ssrc: u32,
    timestamp: u32,
) -> Packet {
    let mut header = PacketHeader::new(0, timestamp, ssrc);
    header.window_index = window_index;
    header.block_index = block_index;
    header.strategy_id = StrategyKind::Tsp.id();
    header.flags.set(Flags::SYNC, true);
    let mut p = Packet::new(header);
    p.put_rc_area(window_digest.as_bytes(), 1);
    p
}
