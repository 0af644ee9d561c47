//! Sender side: chain the Windows and write each scheme's annotations.

use super::{
    rc_compute, rc_embed, shhc_annotate, tsp_make_sync_packet, tss_annotate, unit_bytes,
    unit_digest, ChainCursor, SessionKeys, ShhcMode, ShhcNeighborhood, StrategyConfig,
    StrategyError, StrategyKind,
};
use crate::hashchain::{mlhc_step, Digest};
use crate::packetizer::{Block, Flags, Packet, StreamLayout, Window};

/// Counts link computations: chain links produced plus foreign links
/// embedded in annotations.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct LinkMeter {
    pub produced: u32,
    pub embedded: u32,
}

impl LinkMeter {
    pub fn total(&self) -> u32 {
        self.produced + self.embedded
    }
}

#[derive(Debug, Clone)]
pub struct WindowRecord {
    pub index: u32,
    pub entry: ChainCursor,
    pub exit: ChainCursor,
    pub block_digests: Vec<Digest>,
    pub rc: Option<Digest>,
    pub meter: LinkMeter,
}

#[derive(Debug, Clone)]
pub struct SenderOutput {
    /// Packets in emission order, sequence numbers assigned.
    pub packets: Vec<Packet>,
    pub windows: Vec<WindowRecord>,
    pub layout: StreamLayout,
    pub final_cursor: ChainCursor,
}

impl SenderOutput {
    /// Chain value a receiver needs to pick up at `window` (exit of the one
    /// before, or the session start).
    pub fn entry(&self, window: u32) -> Option<ChainCursor> {
        match self.windows.get(window as usize) {
            Some(w) => Some(w.entry),
            None if window as usize == self.windows.len() => Some(self.final_cursor),
            None => None,
        }
    }
}

fn payloads(block: &Block) -> Vec<&[u8]> {
    block.packets.iter().map(|p| &p.payload[..]).collect()
}

/// Chain and annotate `windows`, which must be grouped with
/// `config.blocks_per_window()`.
pub fn annotate_stream(
    mut windows: Vec<Window>,
    config: &StrategyConfig,
    keys: &SessionKeys,
) -> Result<SenderOutput, StrategyError> {
    config.validate(keys.algorithm)?;
    let k = config.blocks_per_window();
    if windows.is_empty() {
        return Err(StrategyError::InvalidConfig("no windows to annotate".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.rf_numerator != k) {
        return Err(StrategyError::InvalidConfig(format!(
            "window {} grouped with k={} but {} needs k={k}",
            w.index, w.rf_numerator, config.kind
        )));
    }
    let block_size = windows[0].blocks[0].nominal_size;
    let data_packets: usize = windows.iter().map(Window::packet_count).sum();
    let layout = StreamLayout::new(data_packets as u64, block_size, k);

    for p in windows.iter_mut().flat_map(|w| w.blocks.iter_mut().flat_map(|b| b.packets.iter_mut())) {
        p.header.strategy_id = config.kind.id();
    }

    let mut cursor = ChainCursor::start(config.kind, keys);
    let mut records = Vec::with_capacity(windows.len());
    for w in windows.iter_mut() {
        let entry = cursor;
        let mut meter = LinkMeter::default();
        let mut digests = Vec::with_capacity(w.blocks.len());
        let mut rc = None;
        match (config.kind, cursor) {
            (StrategyKind::Mlhc, ChainCursor::Layered(state)) => {
                let b = &w.blocks[0];
                let unit = unit_bytes(b.index, payloads(b));
                let (_, outer, next) = mlhc_step(&state, &unit);
                meter.produced = 2;
                digests.push(outer);
                let p = w.blocks[0].last_packet_mut();
                p.put_rc_area(outer.as_bytes(), 1);
                p.header.flags.set(Flags::ANNOTATION, true);
                cursor = ChainCursor::Layered(next);
            }
            (StrategyKind::Tss, ChainCursor::Single(state)) => {
                let b = &w.blocks[0];
                let t = b.packets.last().expect("non-empty block").header.timestamp;
                let pl = payloads(b);
                let prefix = super::unit_prefix(b.index, pl.len() as u32);
                let link = tss_annotate(&state, std::iter::once(&prefix[..]).chain(pl), t);
                meter.produced = 1;
                digests.push(link.link);
                let p = w.blocks[0].last_packet_mut();
                p.put_rc_area(&link.annotation(), 1);
                p.header.flags.set(Flags::ANNOTATION, true);
                cursor = ChainCursor::Single(state.advance(link.link));
            }
            (StrategyKind::RcSrs, ChainCursor::Single(state)) => {
                for b in &w.blocks {
                    digests.push(unit_digest(&state, b.index, &payloads(b)));
                }
                meter.produced = digests.len() as u32;
                let code = rc_compute(&digests)?;
                rc_embed(w, &code, config.rc_replication)?;
                rc = Some(code);
                cursor = ChainCursor::Single(state.advance(*digests.last().unwrap()));
            }
            (_, ChainCursor::Single(state)) => {
                let b = &w.blocks[0];
                let d = unit_digest(&state, b.index, &payloads(b));
                meter.produced = 1;
                digests.push(d);
                cursor = ChainCursor::Single(state.advance(d));
            }
            (kind, _) => {
                return Err(StrategyError::InvalidConfig(format!(
                    "{kind} cannot run on a layered chain"
                )))
            }
        }
        records.push(WindowRecord {
            index: w.index,
            entry,
            exit: cursor,
            block_digests: digests,
            rc,
            meter,
        });
    }

    if let Some(mode) = ShhcMode::of(config.kind) {
        let h: Vec<Digest> = records.iter().map(|r| r.block_digests[0]).collect();
        for (i, w) in windows.iter_mut().enumerate() {
            let view = ShhcNeighborhood {
                block: i as u32,
                prev: i.checked_sub(1).map(|j| h[j]),
                current: h[i],
                next: h.get(i + 1).copied(),
                signature: (i == 0).then(|| keys.sign(&h[0])),
            };
            let ann = shhc_annotate(&view, mode)?;
            records[i].meter.embedded = view.prev.is_some() as u32 + view.next.is_some() as u32;
            let p = w.blocks[0].last_packet_mut();
            p.put_rc_area(&ann.bytes, ann.records);
            p.header.flags.set(Flags::ANNOTATION, true);
        }
    }

    let mut packets = Vec::with_capacity(data_packets + windows.len());
    for (w, rec) in windows.into_iter().zip(&records) {
        let last_block = w.blocks.last().map(|b| b.index).unwrap_or(0);
        let mut ts = 0;
        for b in w.blocks {
            for p in b.packets {
                ts = p.header.timestamp;
                packets.push(p);
            }
        }
        if config.kind == StrategyKind::Tsp {
            let ssrc = packets.last().map(|p| p.header.ssrc).unwrap_or(0);
            packets.push(tsp_make_sync_packet(
                &rec.block_digests[0],
                w.index,
                last_block,
                ssrc,
                ts,
            ));
        }
    }
    for (i, p) in packets.iter_mut().enumerate() {
        p.header.sequence = i as u32;
    }

    Ok(SenderOutput {
        packets,
        windows: records,
        layout,
        final_cursor: cursor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashchain::{keyed_digest, Algorithm, ChainState};
    use crate::packetizer::{group, packetize, PacketClock};
    use crate::strategies::unit_prefix;

    fn stream(packets: usize) -> Vec<u8> {
        (0..packets * 1316).map(|i| (i * 31 % 251) as u8).collect()
    }

    fn run(kind: StrategyKind, packets: usize, b: u32) -> SenderOutput {
        let cfg = match kind {
            StrategyKind::RcSrs => StrategyConfig::rc_srs(3, 2),
            k => StrategyConfig::new(k),
        };
        let pk = packetize(&stream(packets), 7, &PacketClock::default()).unwrap();
        let w = group(pk, b, cfg.blocks_per_window()).unwrap();
        annotate_stream(w, &cfg, &SessionKeys::public(Algorithm::D20)).unwrap()
    }

    /// Oracle: chain by hand over explicit unit buffers.
    fn oracle_links(packets: &[Packet], b: usize, iv: Digest) -> Vec<Digest> {
        let data: Vec<&Packet> = packets.iter().filter(|p| !p.is_sync()).collect();
        let mut out = Vec::new();
        let mut h = iv;
        for (i, chunk) in data.chunks(b).enumerate() {
            let mut buf = h.as_bytes().to_vec();
            buf.extend_from_slice(&unit_prefix(i as u32, chunk.len() as u32));
            for p in chunk {
                buf.extend_from_slice(&p.payload[..]);
            }
            h = crate::hashchain::digest(iv.algorithm(), &buf);
            out.push(h);
        }
        out
    }

    #[test]
    fn single_chain_matches_oracle() {
        let iv = Algorithm::D20.standard_iv();
        for kind in [StrategyKind::ShhcConcat, StrategyKind::ShhcXor, StrategyKind::Tsp] {
            let out = run(kind, 40, 8);
            let links: Vec<Digest> = out.windows.iter().map(|w| w.block_digests[0]).collect();
            assert_eq!(links, oracle_links(&out.packets, 8, iv), "{kind}");
        }
    }

    #[test]
    fn tsp_emits_sync_after_each_window() {
        let out = run(StrategyKind::Tsp, 20, 8);
        assert_eq!(out.packets.len(), 23);
        let syncs: Vec<usize> = out
            .packets
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.is_sync().then_some(i))
            .collect();
        assert_eq!(syncs, vec![8, 17, 22]);
        let seqs: Vec<u32> = out.packets.iter().map(|p| p.sequence()).collect();
        assert_eq!(seqs, (0..23).collect::<Vec<u32>>());
        assert_eq!(&out.packets[8].rc_area[..20], out.windows[0].block_digests[0].as_bytes());
    }

    #[test]
    fn shhc_first_annotation_is_signed() {
        let out = run(StrategyKind::ShhcConcat, 24, 8);
        let keys = SessionKeys::public(Algorithm::D20);
        let h0 = out.windows[0].block_digests[0];
        let sig = keyed_digest(Algorithm::D20, &keys.signing_key, h0.as_bytes());
        let p = &out.packets[7];
        assert_eq!(&p.rc_area[..20], sig.as_bytes());
        assert_eq!(&p.rc_area[20..40], h0.as_bytes());
        assert_eq!(p.header.rc_copies, 2);
        assert_eq!(out.packets[15].header.rc_copies, 3);
        assert_eq!(out.packets[23].header.rc_copies, 2);
    }

    #[test]
    fn rc_srs_block_digests_share_window_entry() {
        let out = run(StrategyKind::RcSrs, 30, 4);
        let w = &out.windows[1];
        let ChainCursor::Single(entry) = w.entry else { panic!() };
        assert_eq!(entry.iv(), out.windows[0].block_digests[2]);
        let block3: Vec<&[u8]> = out.packets[12..16].iter().map(|p| &p.payload[..]).collect();
        assert_eq!(w.block_digests[0], unit_digest(&entry, 3, &block3));
        let rc = w.rc.unwrap();
        assert_eq!(rc, rc_compute(&w.block_digests).unwrap());
        assert_eq!(&out.packets[23].rc_area[..20], rc.as_bytes());
        assert_eq!(&out.packets[19].rc_area[..20], rc.as_bytes());
    }

    #[test]
    fn mlhc_layers_follow_their_own_ivs() {
        let keys = SessionKeys::keyed(
            Algorithm::D16,
            crate::hashchain::digest(Algorithm::D16, b"secret"),
            vec![1],
        );
        let pk = packetize(&stream(16), 7, &PacketClock::default()).unwrap();
        let w = group(pk, 8, 1).unwrap();
        let out = annotate_stream(w, &StrategyConfig::new(StrategyKind::Mlhc), &keys).unwrap();
        let inner = oracle_links(&out.packets, 8, Algorithm::D16.standard_iv());
        let outer = crate::hashchain::mlhc_outer_from_inner(keys.iv_sec, &inner);
        let got: Vec<Digest> = out.windows.iter().map(|w| w.block_digests[0]).collect();
        assert_eq!(got, outer);
        assert_eq!(&out.packets[15].rc_area[..16], outer[1].as_bytes());
    }

    #[test]
    fn tss_annotation_carries_last_timestamp() {
        let out = run(StrategyKind::Tss, 16, 8);
        let p = &out.packets[15];
        let t = u32::from_be_bytes(p.rc_area[20..24].try_into().unwrap());
        assert_eq!(t, p.header.timestamp);
        let ChainCursor::Single(s) = out.windows[1].entry else { panic!() };
        let (h, _) = crate::strategies::tss_decode(&s, &p.rc_area[..24]).unwrap();
        assert_eq!(h, out.windows[1].block_digests[0]);
        let _ = ChainState::new(h);
    }

    #[test]
    fn link_ops_per_window() {
        let median = |kind| {
            let out = run(kind, 85 * 9, 85);
            let mut v: Vec<u32> = out.windows.iter().map(|w| w.meter.total()).collect();
            v.sort();
            v[v.len() / 2]
        };
        assert_eq!(median(StrategyKind::ShhcConcat), 3);
        assert_eq!(median(StrategyKind::ShhcXor), 3);
        assert_eq!(median(StrategyKind::Tsp), 1);
        assert_eq!(median(StrategyKind::Mlhc), 2);
        assert_eq!(median(StrategyKind::Tss), 1);
        assert_eq!(median(StrategyKind::RcSrs), 3);
    }

    #[test]
    fn grouping_must_match_strategy() {
        let pk = packetize(&stream(16), 7, &PacketClock::default()).unwrap();
        let w = group(pk, 4, 2).unwrap();
        let err = annotate_stream(
            w,
            &StrategyConfig::new(StrategyKind::Tsp),
            &SessionKeys::public(Algorithm::D20),
        );
        assert!(matches!(err, Err(StrategyError::InvalidConfig(_))));
    }
}
