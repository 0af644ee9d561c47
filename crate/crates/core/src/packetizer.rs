//! Stream → chunks → packets → Blocks → Windows, and back.
//!
//! Wire layout of one packet (all integers big-endian):
//!
//! ```text
//! offset  len  field
//!      0    2  magic 0x48 0x43
//!      2    1  version
//!      3    1  flags (bit0 last-of-block, bit1 sync, bit2 carries RC, bit3 annotation)
//!      4    4  sequence
//!      8    4  timestamp (ms ticks)
//!     12    4  ssrc
//!     16    4  block_index
//!     20    4  window_index
//!     24    1  strategy_id
//!     25    1  rc_copies (digest-sized records in the RC area)
//!     26   28  reserved (stream trailer on the final data packet, else zero)
//!     54 1316  payload, 7 chunks of 188
//!   1370    2  rc_index (0 or 1372)
//!   1372  128  RC area
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

pub const CHUNK_LEN: usize = 188;
pub const CHUNKS_PER_PACKET: usize = 7;
pub const PAYLOAD_LEN: usize = CHUNK_LEN * CHUNKS_PER_PACKET;
pub const HEADER_LEN: usize = 54;
pub const PAYLOAD_OFFSET: usize = HEADER_LEN;
pub const RC_INDEX_OFFSET: usize = PAYLOAD_OFFSET + PAYLOAD_LEN;
pub const RC_AREA_OFFSET: usize = RC_INDEX_OFFSET + 2;
pub const RC_AREA_LEN: usize = 128;
pub const PACKET_LEN: usize = RC_AREA_OFFSET + RC_AREA_LEN;
pub const RESERVED_LEN: usize = 28;

pub const MAGIC: [u8; 2] = [0x48, 0x43];
pub const VERSION: u8 = 1;
pub const DEFAULT_BLOCK_SIZE: u32 = 85;

const TRAILER_MARKER: u8 = 0x54;

const _: () = assert!(PACKET_LEN == 1500);
const _: () = assert!(RC_AREA_OFFSET == 1372);

#[derive(Debug, Error)]
pub enum PacketError {
    #[error("input stream is empty")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed packet: {0}")]
    MalformedPacket(String),
    #[error("no stream trailer found")]
    MissingTrailer,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Flags(pub u8);

impl Flags {
    pub const LAST_OF_BLOCK: u8 = 0b0001;
    pub const SYNC: u8 = 0b0010;
    pub const CARRIES_RC: u8 = 0b0100;
    pub const ANNOTATION: u8 = 0b1000;

    pub fn has(self, bit: u8) -> bool {
        self.0 & bit != 0
    }

    pub fn set(&mut self, bit: u8, on: bool) {
        if on {
            self.0 |= bit;
        } else {
            self.0 &= !bit;
        }
    }
}

/// One 188-octet transport chunk.
#[derive(Clone, PartialEq, Eq)]
pub struct Chunk(pub [u8; CHUNK_LEN]);

impl std::fmt::Debug for Chunk {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Chunk({:02x?}..)", &self.0[..4])
    }
}

/// End-of-stream metadata carried in the last data packet's reserved octets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trailer {
    pub original_len: u64,
    pub pad_chunks: u8,
    pub pad_octets: u8,
}

impl Trailer {
    fn write(&self, reserved: &mut [u8; RESERVED_LEN]) {
        reserved[0] = TRAILER_MARKER;
        reserved[1..9].copy_from_slice(&self.original_len.to_be_bytes());
        reserved[9] = self.pad_chunks;
        reserved[10] = self.pad_octets;
    }

    fn read(reserved: &[u8; RESERVED_LEN]) -> Option<Self> {
        if reserved[0] != TRAILER_MARKER {
            return None;
        }
        Some(Trailer {
            original_len: u64::from_be_bytes(reserved[1..9].try_into().unwrap()),
            pad_chunks: reserved[9],
            pad_octets: reserved[10],
        })
    }

    /// Number of data packets in the stream this trailer terminates.
    pub fn data_packets(&self) -> u64 {
        let chunks = self.original_len.div_ceil(CHUNK_LEN as u64);
        chunks.div_ceil(CHUNKS_PER_PACKET as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketHeader {
    pub version: u8,
    pub flags: Flags,
    pub sequence: u32,
    pub timestamp: u32,
    pub ssrc: u32,
    pub block_index: u32,
    pub window_index: u32,
    pub strategy_id: u8,
    pub rc_copies: u8,
    pub reserved: [u8; RESERVED_LEN],
}

impl PacketHeader {
    pub fn new(sequence: u32, timestamp: u32, ssrc: u32) -> Self {
        PacketHeader {
            version: VERSION,
            flags: Flags::default(),
            sequence,
            timestamp,
            ssrc,
            block_index: 0,
            window_index: 0,
            strategy_id: 0,
            rc_copies: 0,
            reserved: [0; RESERVED_LEN],
        }
    }

    fn write_to(&self, out: &mut [u8]) {
        out[0..2].copy_from_slice(&MAGIC);
        out[2] = self.version;
        out[3] = self.flags.0;
        out[4..8].copy_from_slice(&self.sequence.to_be_bytes());
        out[8..12].copy_from_slice(&self.timestamp.to_be_bytes());
        out[12..16].copy_from_slice(&self.ssrc.to_be_bytes());
        out[16..20].copy_from_slice(&self.block_index.to_be_bytes());
        out[20..24].copy_from_slice(&self.window_index.to_be_bytes());
        out[24] = self.strategy_id;
        out[25] = self.rc_copies;
        out[26..HEADER_LEN].copy_from_slice(&self.reserved);
    }

    fn read_from(buf: &[u8]) -> Result<Self, PacketError> {
        if buf[0..2] != MAGIC {
            return Err(PacketError::MalformedPacket(format!(
                "bad magic {:02x}{:02x}",
                buf[0], buf[1]
            )));
        }
        let u32_at = |o: usize| u32::from_be_bytes(buf[o..o + 4].try_into().unwrap());
        Ok(PacketHeader {
            version: buf[2],
            flags: Flags(buf[3]),
            sequence: u32_at(4),
            timestamp: u32_at(8),
            ssrc: u32_at(12),
            block_index: u32_at(16),
            window_index: u32_at(20),
            strategy_id: buf[24],
            rc_copies: buf[25],
            reserved: buf[26..HEADER_LEN].try_into().unwrap(),
        })
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Packet {
    pub header: PacketHeader,
    pub payload: Box<[u8; PAYLOAD_LEN]>,
    pub rc_index: u16,
    pub rc_area: [u8; RC_AREA_LEN],
}

impl std::fmt::Debug for Packet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Packet")
            .field("header", &self.header)
            .field("rc_index", &self.rc_index)
            .finish_non_exhaustive()
    }
}

impl Packet {
    pub fn new(header: PacketHeader) -> Self {
        Packet {
            header,
            payload: Box::new([0; PAYLOAD_LEN]),
            rc_index: 0,
            rc_area: [0; RC_AREA_LEN],
        }
    }

    pub fn sequence(&self) -> u32 {
        self.header.sequence
    }

    pub fn is_sync(&self) -> bool {
        self.header.flags.has(Flags::SYNC)
    }

    pub fn is_last_of_block(&self) -> bool {
        self.header.flags.has(Flags::LAST_OF_BLOCK)
    }

    pub fn trailer(&self) -> Option<Trailer> {
        Trailer::read(&self.header.reserved)
    }

    /// Write `records` digest-sized records into the RC area and point
    /// `rc_index` at it.
    pub fn put_rc_area(&mut self, bytes: &[u8], records: u8) {
        debug_assert!(bytes.len() <= RC_AREA_LEN);
        self.rc_area = [0; RC_AREA_LEN];
        self.rc_area[..bytes.len()].copy_from_slice(bytes);
        self.rc_index = RC_AREA_OFFSET as u16;
        self.header.rc_copies = records;
    }

    pub fn serialize(&self) -> [u8; PACKET_LEN] {
        let mut out = [0u8; PACKET_LEN];
        self.header.write_to(&mut out[..HEADER_LEN]);
        out[PAYLOAD_OFFSET..RC_INDEX_OFFSET].copy_from_slice(&self.payload[..]);
        out[RC_INDEX_OFFSET..RC_AREA_OFFSET].copy_from_slice(&self.rc_index.to_be_bytes());
        out[RC_AREA_OFFSET..].copy_from_slice(&self.rc_area);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Packet, PacketError> {
        if bytes.len() != PACKET_LEN {
            return Err(PacketError::MalformedPacket(format!(
                "expected {PACKET_LEN} octets, got {}",
                bytes.len()
            )));
        }
        let header = PacketHeader::read_from(&bytes[..HEADER_LEN])?;
        let mut payload = Box::new([0u8; PAYLOAD_LEN]);
        payload.copy_from_slice(&bytes[PAYLOAD_OFFSET..RC_INDEX_OFFSET]);
        Ok(Packet {
            header,
            payload,
            rc_index: u16::from_be_bytes([bytes[RC_INDEX_OFFSET], bytes[RC_INDEX_OFFSET + 1]]),
            rc_area: bytes[RC_AREA_OFFSET..].try_into().unwrap(),
        })
    }
}

pub fn serialize_packet(p: &Packet) -> [u8; PACKET_LEN] {
    p.serialize()
}

pub fn parse_packet(bytes: &[u8]) -> Result<Packet, PacketError> {
    Packet::parse(bytes)
}

/// Split a byte stream into 188-octet chunks, zero-padding the last one.
pub fn chunkify(stream: &[u8]) -> Result<Vec<Chunk>, PacketError> {
    if stream.is_empty() {
        return Err(PacketError::EmptyInput);
    }
    Ok(stream
        .chunks(CHUNK_LEN)
        .map(|c| {
            let mut arr = [0u8; CHUNK_LEN];
            arr[..c.len()].copy_from_slice(c);
            Chunk(arr)
        })
        .collect())
}

/// Sender clock: packet `i` is stamped `start_ms + floor(i * 1000 / rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketClock {
    pub start_ms: u32,
    pub packets_per_second: f64,
}

impl PacketClock {
    pub fn new(start_ms: u32, packets_per_second: f64) -> Self {
        PacketClock {
            start_ms,
            packets_per_second,
        }
    }

    /// Clock for a given video bit rate over 1500-octet packets.
    pub fn for_bitrate(vbr_bps: f64) -> Self {
        PacketClock::new(0, vbr_bps / (PACKET_LEN as f64 * 8.0))
    }

    pub fn timestamp(&self, index: u64) -> u32 {
        if self.packets_per_second <= 0.0 {
            return self.start_ms;
        }
        let ms = (index as f64 * 1000.0 / self.packets_per_second).floor();
        self.start_ms.wrapping_add(ms as u32)
    }
}

impl Default for PacketClock {
    fn default() -> Self {
        PacketClock::for_bitrate(1_024_000.0)
    }
}

/// Pack chunks seven to a packet. The final packet carries a trailer whose
/// `original_len` assumes the chunks are fully used; [`packetize`] records
/// the exact byte length instead.
pub fn assemble_packets(chunks: &[Chunk], ssrc: u32, clock: &PacketClock) -> Vec<Packet> {
    let mut packets: Vec<Packet> = chunks
        .chunks(CHUNKS_PER_PACKET)
        .enumerate()
        .map(|(i, group)| {
            let mut p = Packet::new(PacketHeader::new(i as u32, clock.timestamp(i as u64), ssrc));
            for (j, c) in group.iter().enumerate() {
                p.payload[j * CHUNK_LEN..(j + 1) * CHUNK_LEN].copy_from_slice(&c.0);
            }
            p
        })
        .collect();
    if let Some(last) = packets.last_mut() {
        let pad_chunks = (packets_len_pad(chunks.len())) as u8;
        Trailer {
            original_len: (chunks.len() * CHUNK_LEN) as u64,
            pad_chunks,
            pad_octets: 0,
        }
        .write(&mut last.header.reserved);
    }
    packets
}

fn packets_len_pad(chunks: usize) -> usize {
    (CHUNKS_PER_PACKET - chunks % CHUNKS_PER_PACKET) % CHUNKS_PER_PACKET
}

/// chunkify + assemble, with the exact stream length in the trailer.
pub fn packetize(stream: &[u8], ssrc: u32, clock: &PacketClock) -> Result<Vec<Packet>, PacketError> {
    let chunks = chunkify(stream)?;
    let mut packets = assemble_packets(&chunks, ssrc, clock);
    let last = packets.last_mut().expect("non-empty stream yields packets");
    let trailer = Trailer {
        original_len: stream.len() as u64,
        pad_chunks: packets_len_pad(chunks.len()) as u8,
        pad_octets: ((CHUNK_LEN - stream.len() % CHUNK_LEN) % CHUNK_LEN) as u8,
    };
    trailer.write(&mut last.header.reserved);
    Ok(packets)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub index: u32,
    pub packets: Vec<Packet>,
    /// Nominal Block size B; a short tail Block holds fewer packets.
    pub nominal_size: u32,
}

impl Block {
    pub fn is_short(&self) -> bool {
        (self.packets.len() as u32) < self.nominal_size
    }

    pub fn last_packet_mut(&mut self) -> &mut Packet {
        self.packets.last_mut().expect("blocks are never empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub index: u32,
    pub blocks: Vec<Block>,
    /// Blocks per full Window, k.
    pub rf_numerator: u32,
}

impl Window {
    pub fn is_short(&self) -> bool {
        (self.blocks.len() as u32) < self.rf_numerator
    }

    pub fn packet_count(&self) -> usize {
        self.blocks.iter().map(|b| b.packets.len()).sum()
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.blocks.iter().flat_map(|b| b.packets.iter())
    }
}

/// Group packets into Blocks of `block_size` and Windows of `k` Blocks,
/// stamping block/window indices and the last-of-block flag.
pub fn group(packets: Vec<Packet>, block_size: u32, k: u32) -> Result<Vec<Window>, PacketError> {
    if block_size == 0 {
        return Err(PacketError::InvalidConfig("block size must be at least 1".into()));
    }
    if !(1..=4).contains(&k) {
        return Err(PacketError::InvalidConfig(format!(
            "blocks per window must be 1..=4, got {k}"
        )));
    }
    let mut windows: Vec<Window> = Vec::new();
    let mut iter = packets.into_iter().peekable();
    let mut block_index = 0u32;
    while iter.peek().is_some() {
        let window_index = block_index / k;
        let mut block_packets: Vec<Packet> = iter.by_ref().take(block_size as usize).collect();
        let n = block_packets.len();
        for (i, p) in block_packets.iter_mut().enumerate() {
            p.header.block_index = block_index;
            p.header.window_index = window_index;
            p.header.flags.set(Flags::LAST_OF_BLOCK, i + 1 == n);
        }
        let block = Block {
            index: block_index,
            packets: block_packets,
            nominal_size: block_size,
        };
        match windows.last_mut() {
            Some(w) if w.index == window_index => w.blocks.push(block),
            _ => windows.push(Window {
                index: window_index,
                blocks: vec![block],
                rf_numerator: k,
            }),
        }
        block_index += 1;
    }
    Ok(windows)
}

pub fn ungroup(windows: Vec<Window>) -> Vec<Packet> {
    windows
        .into_iter()
        .flat_map(|w| w.blocks.into_iter().flat_map(|b| b.packets))
        .collect()
}

/// Rebuild the byte stream from data packets (sync packets are skipped).
/// Packets are ordered by sequence; the trailer fixes the length.
pub fn reassemble(packets: &[Packet]) -> Result<Vec<u8>, PacketError> {
    let mut data: Vec<&Packet> = packets.iter().filter(|p| !p.is_sync()).collect();
    data.sort_by_key(|p| p.header.sequence);
    let trailer = data
        .iter()
        .rev()
        .find_map(|p| p.trailer())
        .ok_or(PacketError::MissingTrailer)?;
    let mut out = Vec::with_capacity(data.len() * PAYLOAD_LEN);
    for p in data {
        out.extend_from_slice(&p.payload[..]);
    }
    if (trailer.original_len as usize) > out.len() {
        return Err(PacketError::MalformedPacket(format!(
            "trailer claims {} octets but only {} present",
            trailer.original_len,
            out.len()
        )));
    }
    out.truncate(trailer.original_len as usize);
    Ok(out)
}

/// Geometry of a stream as both ends agree on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamLayout {
    pub data_packets: u64,
    pub block_size: u32,
    pub blocks_per_window: u32,
}

impl StreamLayout {
    pub fn new(data_packets: u64, block_size: u32, blocks_per_window: u32) -> Self {
        StreamLayout {
            data_packets,
            block_size,
            blocks_per_window,
        }
    }

    pub fn blocks(&self) -> u64 {
        self.data_packets.div_ceil(self.block_size as u64)
    }

    pub fn windows(&self) -> u64 {
        self.blocks().div_ceil(self.blocks_per_window as u64)
    }

    pub fn block_len(&self, block: u32) -> u32 {
        let start = block as u64 * self.block_size as u64;
        self.data_packets
            .saturating_sub(start)
            .min(self.block_size as u64) as u32
    }

    pub fn blocks_in_window(&self, window: u32) -> u32 {
        let first = window as u64 * self.blocks_per_window as u64;
        self.blocks()
            .saturating_sub(first)
            .min(self.blocks_per_window as u64) as u32
    }
}

/// Capture file: 4-octet big-endian record count, then raw packets.
pub fn write_capture<W: Write>(mut out: W, packets: &[Packet]) -> Result<(), PacketError> {
    let n = u32::try_from(packets.len())
        .map_err(|_| PacketError::InvalidConfig("too many packets for a capture".into()))?;
    out.write_all(&n.to_be_bytes())?;
    for p in packets {
        out.write_all(&p.serialize())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_capture<R: Read>(mut input: R) -> Result<Vec<Packet>, PacketError> {
    let mut count = [0u8; 4];
    input.read_exact(&mut count)?;
    let n = u32::from_be_bytes(count) as usize;
    let mut buf = [0u8; PACKET_LEN];
    let mut packets = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        input.read_exact(&mut buf)?;
        packets.push(Packet::parse(&buf)?);
    }
    Ok(packets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(len: usize, seed: u8) -> Vec<u8> {
        (0..len).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect()
    }

    #[test]
    fn layout_offsets() {
        assert_eq!(HEADER_LEN + PAYLOAD_LEN, 1370);
        assert_eq!(RC_INDEX_OFFSET, 1370);
        assert_eq!(PACKET_LEN - (1370 + 2), RC_AREA_LEN);
    }

    #[test]
    fn chunkify_examples() {
        let exact = chunkify(&[0xAA; 188]).unwrap();
        assert_eq!(exact.len(), 1);
        assert_eq!(exact[0].0, [0xAA; 188]);

        let one_over = chunkify(&[0x11; 189]).unwrap();
        assert_eq!(one_over.len(), 2);
        assert_eq!(one_over[1].0[0], 0x11);
        assert!(one_over[1].0[1..].iter().all(|&b| b == 0));

        // ceil(1_000_000 / 188): 188 * 5319 = 999_972 < 10^6 <= 188 * 5320
        assert_eq!(chunkify(&vec![1u8; 1_000_000]).unwrap().len(), 5320);

        assert!(matches!(chunkify(&[]), Err(PacketError::EmptyInput)));
    }

    #[test]
    fn assemble_examples() {
        let clock = PacketClock::default();
        let chunks = |n: usize| vec![Chunk([7; CHUNK_LEN]); n];
        let p = assemble_packets(&chunks(7), 1, &clock);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].payload.len(), 1316);
        assert_eq!(assemble_packets(&chunks(8), 1, &clock).len(), 2);
        let many = assemble_packets(&chunks(5320), 1, &clock);
        assert_eq!(many.len(), 760);
        for (i, w) in many.windows(2).enumerate() {
            assert_eq!(w[0].header.sequence, i as u32);
            assert_eq!(w[1].header.sequence, w[0].header.sequence + 1);
            assert!(w[1].header.timestamp >= w[0].header.timestamp);
        }
        let tail = assemble_packets(&chunks(8), 1, &clock);
        assert_eq!(tail[1].trailer().unwrap().pad_chunks, 6);
        assert!(tail[0].trailer().is_none());
    }

    fn packets(n: usize) -> Vec<Packet> {
        let clock = PacketClock::default();
        assemble_packets(&vec![Chunk([0; CHUNK_LEN]); n * 7], 9, &clock)
    }

    #[test]
    fn group_examples() {
        let w = group(packets(170), 85, 2).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].blocks.len(), 2);

        // 760 = 8 * 85 + 80: nine Blocks, the last one short, in three
        // Windows of 255, 255 and 250 packets.
        let w = group(packets(760), 85, 3).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.iter().map(|w| w.blocks.len()).collect::<Vec<_>>(), vec![3, 3, 3]);
        assert_eq!(w[0].packet_count(), 255);
        assert_eq!(w[1].packet_count(), 255);
        assert_eq!(w[2].packet_count(), 250);
        assert!(w[2].blocks[2].is_short());
        assert!(!w[2].is_short());

        let w = group(packets(85), 85, 1).unwrap();
        assert_eq!((w.len(), w[0].blocks.len()), (1, 1));

        assert!(matches!(group(packets(3), 0, 1), Err(PacketError::InvalidConfig(_))));
    }

    #[test]
    fn block_invariants_after_group() {
        let windows = group(packets(23), 5, 2).unwrap();
        for w in &windows {
            for b in &w.blocks {
                assert!(b.packets.iter().all(|p| p.header.block_index == b.index));
                assert!(b.packets.iter().all(|p| p.header.window_index == w.index));
                let lasts: Vec<_> = b.packets.iter().map(|p| p.is_last_of_block()).collect();
                assert_eq!(lasts.iter().filter(|&&l| l).count(), 1);
                assert!(*lasts.last().unwrap());
            }
        }
        assert_eq!(windows.len(), 3);
        assert!(windows[2].is_short());
    }

    #[test]
    fn parse_rejects_bad_input() {
        let p = &packets(1)[0];
        let bytes = p.serialize();
        assert!(matches!(Packet::parse(&bytes[..1499]), Err(PacketError::MalformedPacket(_))));
        let mut bad = bytes;
        bad[0] = 0;
        assert!(matches!(Packet::parse(&bad), Err(PacketError::MalformedPacket(_))));
        let mut long = bytes.to_vec();
        long.push(0);
        assert!(Packet::parse(&long).is_err());
    }

    #[test]
    fn stream_layout_arithmetic() {
        let l = StreamLayout::new(760, 85, 3);
        assert_eq!(l.blocks(), 9);
        assert_eq!(l.windows(), 3);
        assert_eq!(l.block_len(8), 80);
        assert_eq!(l.block_len(9), 0);
        assert_eq!(l.blocks_in_window(2), 3);
        let l = StreamLayout::new(171, 85, 2);
        assert_eq!(l.windows(), 2);
        assert_eq!(l.blocks_in_window(1), 1);
        assert_eq!(l.block_len(2), 1);
    }

    #[test]
    fn capture_round_trip() {
        let ps = packets(3);
        let mut buf = Vec::new();
        write_capture(&mut buf, &ps).unwrap();
        assert_eq!(buf.len(), 4 + 3 * PACKET_LEN);
        assert_eq!(&buf[..4], &[0, 0, 0, 3]);
        assert_eq!(read_capture(&buf[..]).unwrap(), ps);
    }

    #[test]
    fn million_octet_round_trip() {
        let s = stream(1_000_000, 3);
        let ps = packetize(&s, 1, &PacketClock::default()).unwrap();
        assert_eq!(ps.len(), 760);
        let back = reassemble(&ungroup(group(ps, 85, 3).unwrap())).unwrap();
        assert_eq!(back, s);
    }

    fn arb_packet() -> impl Strategy<Value = Packet> {
        (
            any::<u8>(),
            any::<u32>(),
            any::<u32>(),
            any::<u32>(),
            any::<u32>(),
            any::<u32>(),
            any::<u8>(),
            any::<u8>(),
            proptest::collection::vec(any::<u8>(), PAYLOAD_LEN),
            proptest::collection::vec(any::<u8>(), RC_AREA_LEN),
            any::<bool>(),
        )
            .prop_map(|(flags, seq, ts, ssrc, b, w, sid, rcc, payload, rc, has_rc)| {
                let mut h = PacketHeader::new(seq, ts, ssrc);
                h.flags = Flags(flags & 0x0f);
                h.block_index = b;
                h.window_index = w;
                h.strategy_id = sid;
                h.rc_copies = rcc;
                let mut p = Packet::new(h);
                p.payload.copy_from_slice(&payload);
                p.rc_area.copy_from_slice(&rc);
                p.rc_index = if has_rc { RC_AREA_OFFSET as u16 } else { 0 };
                p
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn serialize_parse_identity(p in arb_packet()) {
            let bytes = serialize_packet(&p);
            prop_assert_eq!(bytes.len(), PACKET_LEN);
            prop_assert_eq!(parse_packet(&bytes).unwrap(), p);
        }

        #[test]
        fn parse_never_panics_on_noise(mut bytes in proptest::collection::vec(any::<u8>(), 0..1600), magic in any::<bool>()) {
            if magic && bytes.len() >= 2 { bytes[0] = MAGIC[0]; bytes[1] = MAGIC[1]; }
            let r = parse_packet(&bytes);
            prop_assert_eq!(r.is_ok(), bytes.len() == PACKET_LEN && bytes[..2] == MAGIC);
        }

        #[test]
        fn lossless_round_trip(len in 1usize..40_000, seed in any::<u8>(), b in 1u32..12, k in 1u32..=4) {
            let s = stream(len, seed);
            let ps = packetize(&s, 5, &PacketClock::default()).unwrap();
            let back = reassemble(&ungroup(group(ps, b, k).unwrap())).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
