//! Receive side: packet validation, per-Window verification, recovery or
//! reinitialization, and session joins.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::hashchain::{mlhc_step, Algorithm, ChainState, Digest, MlhcState};
use crate::packetizer::{Flags, Packet, StreamLayout, RC_AREA_OFFSET};
use crate::strategies::{
    rc_recover, shhc_consistent, shhc_covers, shhc_references, tss_annotate, tss_decode, unit_bytes,
    unit_digest, unit_prefix, ChainCursor, SenderOutput, SessionKeys, ShhcMode, ShhcRole,
    ShhcSource, StrategyConfig, StrategyError, StrategyKind,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReceiverError {
    #[error("error position {i} outside 1..={n}")]
    InvalidPosition { n: u32, i: u32 },
    #[error("join time {0} s precedes the stream start")]
    NotStarted(f64),
    #[error("join time {0} s is past the end of the stream")]
    PastEnd(f64),
    #[error("invalid receiver configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    Replay,
    BadIndex,
    StaleTimestamp,
    ForeignStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowStatus {
    Verified,
    Recovered,
    Unrecoverable,
}

impl fmt::Display for WindowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowStatus::Verified => "verified",
            WindowStatus::Recovered => "recovered",
            WindowStatus::Unrecoverable => "unrecoverable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    /// Recomputed digests contradict the carried ones.
    Tamper,
    /// More Block digests missing than the parity can cover.
    NotRecoverable,
    RcLost,
    /// Nothing left in the stream pins down the missing link.
    NoReference,
    /// The receiver lost the chain earlier and was not reinitialized.
    ChainBroken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Recover,
    Reinitialize,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Recover => "recover",
            Decision::Reinitialize => "reinitialize",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOutcome {
    pub status: WindowStatus,
    pub recovered_block: Option<u32>,
    pub chain_digest: Option<Digest>,
    pub failure: Option<FailReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub window_index: u32,
    pub outcome: VerifyOutcome,
    pub wait_time_s: Option<f64>,
    pub decision: Option<Decision>,
}

/// In-band request for the chain value leaving `window_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReinitRequest {
    pub window_index: u32,
}

/// `(N - i) / BR`.
pub fn waiting_time(n: u32, i: u32, block_rate: f64) -> Result<f64, ReceiverError> {
    if i == 0 || i > n {
        return Err(ReceiverError::InvalidPosition { n, i });
    }
    Ok((n - i) as f64 / block_rate)
}

pub fn recovery_decision(wait_s: f64, rtt_s: f64) -> Decision {
    if wait_s < rtt_s {
        Decision::Recover
    } else {
        Decision::Reinitialize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinMode {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinGrant {
    pub window_index: u32,
    /// Chain value entering `window_index` (outer layer for MLHC).
    pub iv: Digest,
    pub inner_iv: Option<Digest>,
    pub mode: JoinMode,
}

impl JoinGrant {
    pub fn cursor(&self) -> ChainCursor {
        let pos = self.window_index as u64;
        match self.inner_iv {
            Some(inner) => ChainCursor::Layered(MlhcState {
                inner: ChainState::at(inner, pos),
                outer: ChainState::at(self.iv, pos),
            }),
            None => ChainCursor::Single(ChainState::at(self.iv, pos)),
        }
    }

    fn from_cursor(window_index: u32, c: &ChainCursor, mode: JoinMode) -> Self {
        JoinGrant {
            window_index,
            iv: c.digest(),
            inner_iv: c.inner(),
            mode,
        }
    }
}

/// The sender's record of chain values at each Window boundary.
#[derive(Debug, Clone)]
pub struct ServerChain {
    /// `entries[w]` enters Window w; the last element is the final exit.
    pub entries: Vec<ChainCursor>,
}

impl ServerChain {
    pub fn from_sender(out: &SenderOutput) -> Self {
        let mut entries: Vec<ChainCursor> = out.windows.iter().map(|w| w.entry).collect();
        entries.push(out.final_cursor);
        ServerChain { entries }
    }

    pub fn windows(&self) -> u32 {
        self.entries.len() as u32 - 1
    }
}

/// Supplies a fresh chain value after an unrecoverable Window.
pub trait ReinitService {
    fn reinitialize(&mut self, request: &ReinitRequest) -> Option<JoinGrant>;
}

impl ReinitService for ServerChain {
    fn reinitialize(&mut self, request: &ReinitRequest) -> Option<JoinGrant> {
        let next = request.window_index + 1;
        self.entries
            .get(next as usize)
            .map(|c| JoinGrant::from_cursor(next, c, JoinMode::Online))
    }
}

/// Offline viewers start at Window 0; online viewers at the Window that
/// contains the join time.
pub fn join(
    mode: JoinMode,
    join_time_s: f64,
    window_duration_s: f64,
    server: &ServerChain,
) -> Result<JoinGrant, ReceiverError> {
    match mode {
        JoinMode::Offline => Ok(JoinGrant::from_cursor(0, &server.entries[0], mode)),
        JoinMode::Online => {
            if join_time_s < 0.0 || join_time_s.is_nan() {
                return Err(ReceiverError::NotStarted(join_time_s));
            }
            if window_duration_s <= 0.0 {
                return Err(ReceiverError::InvalidConfig(
                    "window duration must be positive".into(),
                ));
            }
            let w = (join_time_s / window_duration_s + 1e-9).floor() as u64;
            if w >= server.windows() as u64 {
                return Err(ReceiverError::PastEnd(join_time_s));
            }
            Ok(JoinGrant::from_cursor(w as u32, &server.entries[w as usize], mode))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReceiverConfig {
    pub strategy: StrategyConfig,
    pub algorithm: Algorithm,
    pub block_size: u32,
    pub ssrc: u32,
    /// Packets per second of the stream; sets the Block rate and timeout.
    pub packet_rate: f64,
    pub rtt_s: f64,
    /// Stream geometry if known up front; otherwise learned from the trailer.
    pub layout: Option<StreamLayout>,
    /// Largest fraction of lost data packets that still allows playback.
    pub loss_tolerance: f64,
}

impl ReceiverConfig {
    pub fn new(strategy: StrategyConfig, algorithm: Algorithm, block_size: u32, ssrc: u32) -> Self {
        ReceiverConfig {
            strategy,
            algorithm,
            block_size,
            ssrc,
            packet_rate: crate::packetizer::PacketClock::default().packets_per_second,
            rtt_s: 2.0,
            layout: None,
            loss_tolerance: 1.0,
        }
    }

    /// Blocks per second, BR.
    pub fn block_rate(&self) -> f64 {
        self.packet_rate / self.block_size as f64
    }

    pub fn window_timeout_ms(&self) -> f64 {
        self.strategy.blocks_per_window() as f64 / self.block_rate() * 1000.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReceiverStats {
    pub accepted: u64,
    pub verified: u64,
    pub recovered: u64,
    pub unrecoverable: u64,
    pub reinit_requests: u64,
    pub dropped_bad_index: u64,
    pub replay_rejects: u64,
    pub stale_rejects: u64,
    pub foreign_rejects: u64,
    pub peak_buffered: usize,
}

#[derive(Debug)]
struct OpenWindow {
    index: u32,
    first_ts: u32,
    max_ts: u32,
    max_seq: u32,
    blocks: BTreeMap<u32, BTreeMap<u32, Packet>>,
    sync: Option<Packet>,
    seen: HashSet<u32>,
}

impl OpenWindow {
    fn empty(index: u32) -> Self {
        OpenWindow {
            index,
            first_ts: 0,
            max_ts: 0,
            max_seq: 0,
            blocks: BTreeMap::new(),
            sync: None,
            seen: HashSet::new(),
        }
    }

    fn buffered(&self) -> usize {
        self.blocks.values().map(BTreeMap::len).sum::<usize>() + self.sync.is_some() as usize
    }
}

struct BlockView<'a> {
    index: u32,
    complete: bool,
    payloads: Vec<&'a [u8]>,
    last: Option<&'a Packet>,
}

#[derive(Debug, Default)]
struct ShhcMemory {
    /// Confirmed links by Block index; only the most recent few are kept.
    history: BTreeMap<u32, Digest>,
    prev_source: Option<ShhcSource>,
    /// Block whose link is waiting for the next annotation.
    pending: Option<u32>,
    tentative: Vec<Concluded>,
    hold_chain: Option<ChainCursor>,
}

impl ShhcMemory {
    fn remember(&mut self, block: u32, link: Digest) {
        self.history.insert(block, link);
        while self.history.len() > 3 {
            let first = *self.history.keys().next().unwrap();
            self.history.remove(&first);
        }
    }
}

#[derive(Debug)]
struct Concluded {
    index: u32,
    outcome: VerifyOutcome,
    exit: Option<ChainCursor>,
    wait: Option<f64>,
    decision: Option<Decision>,
}

impl Concluded {
    fn ok(index: u32, status: WindowStatus, exit: ChainCursor, recovered_block: Option<u32>) -> Self {
        Concluded {
            index,
            outcome: VerifyOutcome {
                status,
                recovered_block,
                chain_digest: Some(exit.digest()),
                failure: None,
            },
            exit: Some(exit),
            wait: None,
            decision: None,
        }
    }

    fn fail(index: u32, reason: FailReason) -> Self {
        Concluded {
            index,
            outcome: VerifyOutcome {
                status: WindowStatus::Unrecoverable,
                recovered_block: None,
                chain_digest: None,
                failure: Some(reason),
            },
            exit: None,
            wait: None,
            decision: None,
        }
    }
}

pub struct Receiver {
    cfg: ReceiverConfig,
    keys: SessionKeys,
    chain: Option<ChainCursor>,
    next_window: u32,
    open: Option<OpenWindow>,
    closed_high_water: Option<u32>,
    last_closed_ts: Option<u32>,
    layout: Option<StreamLayout>,
    shhc: ShhcMemory,
    tss_last_t: Option<u32>,
    stats: ReceiverStats,
    reports: Vec<WindowReport>,
    requests: Vec<ReinitRequest>,
    reinit: Option<Box<dyn ReinitService>>,
    /// Closed Windows' packets, held until their Window concludes.
    held: BTreeMap<u32, BTreeMap<u32, BTreeMap<u32, Packet>>>,
    /// Other Blocks of the last Recovered Window.
    probation: Option<Vec<Packet>>,
    delivered: Vec<Packet>,
    finished: bool,
}

impl Receiver {
    pub fn new(cfg: ReceiverConfig, keys: SessionKeys, grant: JoinGrant) -> Result<Self, ReceiverError> {
        cfg.strategy
            .validate(cfg.algorithm)
            .map_err(|e| ReceiverError::InvalidConfig(e.to_string()))?;
        if cfg.block_size == 0 || cfg.packet_rate <= 0.0 {
            return Err(ReceiverError::InvalidConfig(
                "block size and packet rate must be positive".into(),
            ));
        }
        let mut shhc = ShhcMemory::default();
        if grant.window_index > 0 {
            shhc.history.insert(grant.window_index - 1, grant.iv);
        }
        Ok(Receiver {
            layout: cfg.layout,
            cfg,
            keys,
            chain: Some(grant.cursor()),
            next_window: grant.window_index,
            open: None,
            closed_high_water: None,
            last_closed_ts: None,
            shhc,
            tss_last_t: None,
            stats: ReceiverStats::default(),
            reports: Vec::new(),
            requests: Vec::new(),
            reinit: None,
            held: BTreeMap::new(),
            probation: None,
            delivered: Vec::new(),
            finished: false,
        })
    }

    /// Answer reinitialization requests synchronously from `service`.
    pub fn with_reinit(mut self, service: Box<dyn ReinitService>) -> Self {
        self.reinit = Some(service);
        self
    }

    pub fn stats(&self) -> ReceiverStats {
        self.stats
    }

    pub fn reports(&self) -> &[WindowReport] {
        &self.reports
    }

    pub fn reinit_requests(&self) -> &[ReinitRequest] {
        &self.requests
    }

    /// Current chain value, `None` while desynchronized.
    pub fn chain(&self) -> Option<ChainCursor> {
        self.chain
    }

    pub fn buffered(&self) -> usize {
        self.open.as_ref().map_or(0, OpenWindow::buffered)
    }

    /// Data packets of Blocks whose digests checked out, in conclusion order.
    pub fn delivered(&self) -> &[Packet] {
        &self.delivered
    }

    pub fn validate_packet(&self, p: &Packet) -> Result<(), RejectReason> {
        if p.header.ssrc != self.cfg.ssrc {
            return Err(RejectReason::ForeignStream);
        }
        if p.rc_index != 0 && p.rc_index as usize != RC_AREA_OFFSET {
            return Err(RejectReason::BadIndex);
        }
        let seq = p.sequence();
        let seen_open = self.open.as_ref().is_some_and(|w| w.seen.contains(&seq));
        if seen_open || self.closed_high_water.is_some_and(|h| seq <= h) {
            return Err(RejectReason::Replay);
        }
        if p.header.window_index < self.next_window
            || self.last_closed_ts.is_some_and(|t| p.header.timestamp < t)
            || self.finished
        {
            return Err(RejectReason::StaleTimestamp);
        }
        Ok(())
    }

    /// Close the open Window if its timeout has passed at `now_ms`.
    pub fn poll(&mut self, now_ms: u32) {
        let timeout = self.cfg.window_timeout_ms();
        if let Some(w) = &self.open {
            if now_ms as f64 >= w.first_ts as f64 + timeout {
                self.close_through(w.index);
            }
        }
    }

    pub fn receive(&mut self, p: Packet) -> Result<(), RejectReason> {
        self.poll(p.header.timestamp);
        if let Err(r) = self.validate_packet(&p) {
            match r {
                RejectReason::Replay => self.stats.replay_rejects += 1,
                RejectReason::BadIndex => self.stats.dropped_bad_index += 1,
                RejectReason::StaleTimestamp => self.stats.stale_rejects += 1,
                RejectReason::ForeignStream => self.stats.foreign_rejects += 1,
            }
            return Err(r);
        }
        let w = p.header.window_index;
        if self.open.as_ref().is_some_and(|o| o.index < w) || (self.open.is_none() && w > self.next_window) {
            self.close_through(w - 1);
        }
        if let Some(t) = p.trailer() {
            if self.layout.is_none() {
                self.layout = Some(StreamLayout::new(
                    t.data_packets(),
                    self.cfg.block_size,
                    self.cfg.strategy.blocks_per_window(),
                ));
            }
        }
        self.stats.accepted += 1;
        let open = self.open.get_or_insert_with(|| {
            let mut o = OpenWindow::empty(w);
            o.first_ts = p.header.timestamp;
            o
        });
        open.seen.insert(p.sequence());
        open.max_ts = open.max_ts.max(p.header.timestamp);
        open.max_seq = open.max_seq.max(p.sequence());
        let is_sync = p.is_sync();
        if is_sync {
            open.sync = Some(p);
        } else {
            open.blocks
                .entry(p.header.block_index)
                .or_default()
                .insert(p.sequence(), p);
        }
        let buffered = open.buffered();
        self.stats.peak_buffered = self.stats.peak_buffered.max(buffered);

        let tsp = self.cfg.strategy.kind == StrategyKind::Tsp;
        if (tsp && is_sync) || (!tsp && self.open_is_complete()) {
            self.close_through(w);
        }
        Ok(())
    }

    /// End of input: close the open Window and every expected Window after it.
    pub fn finish(&mut self) {
        if self.finished {
            return;
        }
        let last = match self.layout {
            Some(l) if l.windows() > 0 => Some(l.windows() as u32 - 1),
            _ => self.open.as_ref().map(|o| o.index),
        };
        if let Some(last) = last {
            if last + 1 > self.next_window {
                self.close_through(last);
            }
        }
        if let Some(p) = self.shhc.pending.take() {
            self.conclude(Concluded::fail(p, FailReason::NoReference));
        }
        for t in std::mem::take(&mut self.shhc.tentative) {
            self.conclude(Concluded::fail(t.index, FailReason::NoReference));
        }
        self.held.clear();
        // nothing follows to contradict the last recovery
        if let Some(p) = self.probation.take() {
            self.delivered.extend(p);
        }
        self.finished = true;
    }

    /// Fraction of expected data packets that never arrived.
    pub fn loss_fraction(&self) -> Option<f64> {
        let expected = self.layout?.data_packets;
        if expected == 0 {
            return Some(0.0);
        }
        let first_block = self.reports.first().map(|r| r.window_index).unwrap_or(0)
            * self.cfg.strategy.blocks_per_window();
        let skipped = first_block as u64 * self.cfg.block_size as u64;
        let expected = expected.saturating_sub(skipped);
        Some(1.0 - self.delivered.len() as f64 / expected.max(1) as f64)
    }

    /// Every Window verified or recovered and losses within tolerance.
    pub fn playback_ok(&self) -> bool {
        self.finished
            && self
                .reports
                .iter()
                .all(|r| r.outcome.status != WindowStatus::Unrecoverable)
            && self
                .loss_fraction()
                .is_some_and(|f| f <= self.cfg.loss_tolerance)
    }

    fn block_range(&self, window: u32) -> (u32, u32) {
        let k = self.cfg.strategy.blocks_per_window();
        let n = self.layout.map_or(k, |l| l.blocks_in_window(window));
        (window * k, n)
    }

    fn expected_len(&self, block: u32) -> u32 {
        self.layout
            .map_or(self.cfg.block_size, |l| l.block_len(block))
    }

    fn is_final_block(&self, block: u32, last: Option<&Packet>) -> bool {
        match self.layout {
            Some(l) => block as u64 + 1 == l.blocks(),
            None => last.is_some_and(|p| p.trailer().is_some()),
        }
    }

    fn open_is_complete(&self) -> bool {
        let Some(o) = &self.open else { return false };
        let (first, n) = self.block_range(o.index);
        n > 0
            && (first..first + n).all(|b| {
                o.blocks
                    .get(&b)
                    .is_some_and(|pk| pk.len() as u32 == self.expected_len(b))
            })
    }

    fn close_through(&mut self, last: u32) {
        while self.next_window <= last {
            let w = match self.open.take() {
                Some(o) if o.index == self.next_window => o,
                other => {
                    self.open = other;
                    OpenWindow::empty(self.next_window)
                }
            };
            self.close(w);
        }
    }

    fn close(&mut self, mut w: OpenWindow) {
        let index = w.index;
        let concluded = self.verify(&w);
        if !w.blocks.is_empty() {
            self.held.insert(index, std::mem::take(&mut w.blocks));
        }
        for c in concluded {
            self.conclude(c);
        }
        if let Some(c) = self.shhc.hold_chain.take() {
            self.chain = Some(c);
        }
        self.next_window = index + 1;
        if !w.seen.is_empty() {
            self.closed_high_water = Some(self.closed_high_water.map_or(w.max_seq, |h| h.max(w.max_seq)));
            self.last_closed_ts = Some(self.last_closed_ts.map_or(w.max_ts, |t| t.max(w.max_ts)));
        }
    }

    fn conclude(&mut self, c: Concluded) {
        // a recovered digest is only confirmed by the next Window's check
        if let Some(p) = self.probation.take() {
            if c.outcome.status != WindowStatus::Unrecoverable {
                self.delivered.extend(p);
            }
        }
        if let Some(blocks) = self.held.remove(&c.index) {
            let keep = blocks
                .into_iter()
                .filter(|(b, _)| Some(*b) != c.outcome.recovered_block)
                .flat_map(|(_, block)| block.into_values());
            match c.outcome.status {
                WindowStatus::Verified => self.delivered.extend(keep),
                WindowStatus::Recovered => self.probation = Some(keep.collect()),
                WindowStatus::Unrecoverable => {}
            }
        }
        match c.outcome.status {
            WindowStatus::Verified => self.stats.verified += 1,
            WindowStatus::Recovered => self.stats.recovered += 1,
            WindowStatus::Unrecoverable => self.stats.unrecoverable += 1,
        }
        if c.decision == Some(Decision::Reinitialize) {
            self.request(c.index);
        }
        match c.outcome.status {
            WindowStatus::Unrecoverable => {
                let grant = self.request(c.index);
                self.shhc.history.clear();
                self.shhc.prev_source = None;
                self.chain = grant.map(|g| {
                    self.shhc.remember(c.index, g.iv);
                    g.cursor()
                });
            }
            _ => self.chain = c.exit,
        }
        self.reports.push(WindowReport {
            window_index: c.index,
            outcome: c.outcome,
            wait_time_s: c.wait,
            decision: c.decision,
        });
    }

    fn request(&mut self, window_index: u32) -> Option<JoinGrant> {
        let req = ReinitRequest { window_index };
        self.stats.reinit_requests += 1;
        self.requests.push(req);
        self.reinit.as_mut().and_then(|s| s.reinitialize(&req))
    }

    fn views<'a>(&self, w: &'a OpenWindow) -> Vec<BlockView<'a>> {
        let (first, n) = self.block_range(w.index);
        (first..first + n)
            .map(|b| {
                let packets = w.blocks.get(&b);
                let count = packets.map_or(0, BTreeMap::len) as u32;
                BlockView {
                    index: b,
                    complete: count == self.expected_len(b),
                    payloads: packets
                        .map(|m| m.values().map(|p| &p.payload[..]).collect())
                        .unwrap_or_default(),
                    last: packets.and_then(|m| m.values().find(|p| p.is_last_of_block())),
                }
            })
            .collect()
    }

    fn record(&self, p: &Packet, i: usize) -> Option<Digest> {
        let d = self.cfg.algorithm.len();
        if p.rc_index == 0 || (p.header.rc_copies as usize) <= i {
            return None;
        }
        Digest::from_slice(self.cfg.algorithm, &p.rc_area[i * d..(i + 1) * d]).ok()
    }

    fn verify(&mut self, w: &OpenWindow) -> Vec<Concluded> {
        let views = self.views(w);
        if views.is_empty() {
            return vec![Concluded::fail(w.index, FailReason::NoReference)];
        }
        match self.cfg.strategy.kind {
            StrategyKind::RcSrs => vec![self.verify_rc(w.index, &views, w)],
            StrategyKind::Tsp => vec![self.verify_tsp(w.index, &views[0], w.sync.as_ref())],
            StrategyKind::Mlhc => vec![self.verify_mlhc(w.index, &views[0])],
            StrategyKind::Tss => vec![self.verify_tss(w.index, &views[0])],
            StrategyKind::ShhcConcat | StrategyKind::ShhcXor => self.verify_shhc(w.index, &views[0]),
        }
    }

    fn verify_rc(&self, index: u32, views: &[BlockView], w: &OpenWindow) -> Concluded {
        let Some(ChainCursor::Single(state)) = self.chain else {
            return Concluded::fail(index, FailReason::ChainBroken);
        };
        let mut copies: Vec<Digest> = Vec::new();
        for p in w.blocks.values().flat_map(BTreeMap::values) {
            if p.header.flags.has(Flags::CARRIES_RC) {
                copies.extend((0..p.header.rc_copies as usize).filter_map(|i| self.record(p, i)));
            }
        }
        if copies.windows(2).any(|c| c[0] != c[1]) {
            return Concluded::fail(index, FailReason::Tamper);
        }
        let rc = copies.first();
        let mut slots: Vec<Option<Digest>> = views
            .iter()
            .map(|v| v.complete.then(|| unit_digest(&state, v.index, &v.payloads)))
            .collect();
        let mut recovered = None;
        let mut wait = None;
        let mut decision = None;
        match rc_recover(rc, &slots) {
            Err(StrategyError::NothingToRecover) => {
                let code = crate::strategies::rc_compute(
                    &slots.iter().flatten().copied().collect::<Vec<_>>(),
                )
                .expect("same algorithm");
                if rc.is_some_and(|r| *r != code) {
                    return Concluded::fail(index, FailReason::Tamper);
                }
            }
            Ok((pos, d)) => {
                slots[pos] = Some(d);
                recovered = Some(views[pos].index);
                let n = views.len() as u32;
                let t = waiting_time(n, pos as u32 + 1, self.cfg.block_rate()).ok();
                wait = t;
                decision = t.map(|t| recovery_decision(t, self.cfg.rtt_s));
            }
            Err(StrategyError::RcLost) => return Concluded::fail(index, FailReason::RcLost),
            Err(_) => return Concluded::fail(index, FailReason::NotRecoverable),
        }
        let last = slots.last().copied().flatten().expect("all slots filled");
        let status = if recovered.is_some() {
            WindowStatus::Recovered
        } else {
            WindowStatus::Verified
        };
        let mut c = Concluded::ok(index, status, ChainCursor::Single(state.advance(last)), recovered);
        c.wait = wait;
        c.decision = decision;
        c
    }

    fn verify_tsp(&self, index: u32, v: &BlockView, sync: Option<&Packet>) -> Concluded {
        let s = sync.and_then(|p| self.record(p, 0));
        let state = match self.chain {
            Some(ChainCursor::Single(s)) => Some(s),
            _ => None,
        };
        let pos = index as u64 + 1;
        match (v.complete, state, s) {
            (true, Some(st), Some(s)) => {
                let d = unit_digest(&st, v.index, &v.payloads);
                if d == s {
                    Concluded::ok(index, WindowStatus::Verified, ChainCursor::Single(st.advance(d)), None)
                } else {
                    Concluded::fail(index, FailReason::Tamper)
                }
            }
            (true, Some(st), None) => {
                let d = unit_digest(&st, v.index, &v.payloads);
                Concluded::ok(index, WindowStatus::Verified, ChainCursor::Single(st.advance(d)), None)
            }
            (_, _, Some(s)) => Concluded::ok(
                index,
                WindowStatus::Recovered,
                ChainCursor::Single(ChainState::at(s, pos)),
                Some(v.index),
            ),
            (_, None, None) => Concluded::fail(index, FailReason::ChainBroken),
            (false, _, None) => Concluded::fail(index, FailReason::NoReference),
        }
    }

    fn verify_mlhc(&self, index: u32, v: &BlockView) -> Concluded {
        let Some(ChainCursor::Layered(state)) = self.chain else {
            return Concluded::fail(index, FailReason::ChainBroken);
        };
        if !v.complete {
            return Concluded::fail(index, FailReason::NoReference);
        }
        let carried = v.last.and_then(|p| self.record(p, 0));
        let unit = unit_bytes(v.index, v.payloads.iter().copied());
        let (_, outer, next) = mlhc_step(&state, &unit);
        if carried == Some(outer) {
            Concluded::ok(index, WindowStatus::Verified, ChainCursor::Layered(next), None)
        } else {
            Concluded::fail(index, FailReason::Tamper)
        }
    }

    fn verify_tss(&mut self, index: u32, v: &BlockView) -> Concluded {
        let pos = index as u64 + 1;
        let state = match self.chain {
            Some(ChainCursor::Single(s)) => Some(s),
            _ => None,
        };
        let d = self.cfg.algorithm.len();
        let carried = v.last.and_then(|p| {
            let probe = ChainState::new(Digest::zero(self.cfg.algorithm));
            tss_decode(&probe, &p.rc_area[..d + 4])
                .ok()
                .filter(|_| p.rc_index != 0)
                .map(|(h, t)| (h, t, p.header.timestamp))
        });
        let Some((h, t, packet_ts)) = carried else {
            return match state {
                None => Concluded::fail(index, FailReason::ChainBroken),
                Some(_) => Concluded::fail(index, FailReason::NoReference),
            };
        };
        if t != packet_ts || self.tss_last_t.is_some_and(|prev| t <= prev) {
            return Concluded::fail(index, FailReason::Tamper);
        }
        self.tss_last_t = Some(t);
        match (v.complete, state) {
            (true, Some(st)) => {
                let prefix = unit_prefix(v.index, v.payloads.len() as u32);
                let link = tss_annotate(
                    &st,
                    std::iter::once(&prefix[..]).chain(v.payloads.iter().copied()),
                    t,
                );
                if link.link == h {
                    Concluded::ok(index, WindowStatus::Verified, ChainCursor::Single(st.advance(h)), None)
                } else {
                    Concluded::fail(index, FailReason::Tamper)
                }
            }
            _ => Concluded::ok(
                index,
                WindowStatus::Recovered,
                ChainCursor::Single(ChainState::at(h, pos)),
                Some(v.index),
            ),
        }
    }

    fn verify_shhc(&mut self, index: u32, v: &BlockView) -> Vec<Concluded> {
        let mode = ShhcMode::of(self.cfg.strategy.kind).expect("shhc kind");
        let alg = self.cfg.algorithm;
        let keys = self.keys.clone();
        let sign = move |d: &Digest| keys.sign(d);
        let role = {
            let fin = self.is_final_block(v.index, v.last);
            let inferred_last = self.layout.is_none()
                && mode == ShhcMode::Concat
                && v.index > 0
                && v.last.is_some_and(|p| p.header.rc_copies == 2);
            ShhcRole::of(v.index, fin || inferred_last)
        };
        let own = v.last.filter(|p| p.rc_index != 0).map(|p| {
            let len = p.header.rc_copies as usize * alg.len();
            ShhcSource {
                block: v.index,
                role,
                bytes: p.rc_area[..len.min(p.rc_area.len())].to_vec(),
            }
        });
        let mut out = Vec::new();

        if let Some(pending) = self.shhc.pending.take() {
            let sources: Vec<ShhcSource> = own.iter().cloned().collect();
            let refs = shhc_references(mode, alg, &sources, &self.shhc.history, &sign, pending);
            match refs.first() {
                Some(h) if refs.iter().all(|r| r == h) => {
                    let next = match self.chain {
                        Some(ChainCursor::Single(s)) => s.advance(*h),
                        _ => ChainState::at(*h, pending as u64 + 1),
                    };
                    self.shhc.remember(pending, *h);
                    self.shhc.prev_source = None;
                    let c = Concluded::ok(pending, WindowStatus::Recovered, ChainCursor::Single(next), Some(pending));
                    self.conclude(c);
                }
                _ => {
                    self.conclude(Concluded::fail(pending, FailReason::NoReference));
                }
            }
        }

        let mut sources: Vec<ShhcSource> = Vec::new();
        sources.extend(own.clone());
        sources.extend(self.shhc.prev_source.clone());
        let state = match self.chain {
            Some(ChainCursor::Single(s)) => Some(s),
            _ => None,
        };
        let pos = index as u64 + 1;
        // links held back until an annotation checks them; each depends on
        // the one before, so a check on the newest vouches for all of them
        let tentative = std::mem::take(&mut self.shhc.tentative);
        let fail = |out: &mut Vec<Concluded>, reason| {
            for t in &tentative {
                out.push(Concluded::fail(t.index, reason));
            }
            out.push(Concluded::fail(index, reason));
        };

        let (status, link) = match (v.complete, state) {
            (true, Some(st)) => (WindowStatus::Verified, unit_digest(&st, v.index, &v.payloads)),
            _ => {
                let refs = shhc_references(mode, alg, &sources, &self.shhc.history, &sign, v.index);
                match refs.first() {
                    Some(h) if refs.iter().all(|r| r == h) => (WindowStatus::Recovered, *h),
                    Some(_) => {
                        fail(&mut out, FailReason::Tamper);
                        return out;
                    }
                    None => {
                        let can_defer = mode == ShhcMode::Concat
                            && own.is_none()
                            && !self.is_final_block(v.index, v.last)
                            && state.is_some();
                        if can_defer {
                            self.shhc.pending = Some(index);
                            self.shhc.prev_source = None;
                        } else if state.is_some() {
                            fail(&mut out, FailReason::NoReference);
                        } else {
                            fail(&mut out, FailReason::ChainBroken);
                        }
                        return out;
                    }
                }
            }
        };
        let mut known = self.shhc.history.clone();
        known.insert(v.index, link);
        if !shhc_consistent(mode, alg, &sources, &known, &sign) {
            fail(&mut out, FailReason::Tamper);
            return out;
        }
        let checked = status == WindowStatus::Verified
            && (shhc_covers(mode, &sources, &known, v.index)
                || tentative
                    .last()
                    .is_some_and(|t| shhc_covers(mode, &sources, &known, t.index)));
        if !checked && tentative.len() >= MAX_TENTATIVE {
            fail(&mut out, FailReason::NoReference);
            return out;
        }
        self.shhc.remember(v.index, link);
        self.shhc.prev_source = own;
        let next = match state {
            Some(s) => s.advance(link),
            None => ChainState::at(link, pos),
        };
        let recovered = (status == WindowStatus::Recovered).then_some(v.index);
        let c = Concluded::ok(index, status, ChainCursor::Single(next), recovered);
        let hold = mode == ShhcMode::Xor && !checked && (status == WindowStatus::Verified || !tentative.is_empty());
        if hold {
            // out is concluded after we return, so the chain moves here
            self.shhc.hold_chain = Some(ChainCursor::Single(next));
            self.shhc.tentative = tentative;
            self.shhc.tentative.push(c);
        } else {
            out.extend(tentative);
            out.push(c);
        }
        out
    }
}

/// Unchecked XOR links the receiver holds before giving up on them.
const MAX_TENTATIVE: usize = 4;

/// CSV rows `window_index,status,recovered_block,wait_time_s,decision`.
pub fn reports_csv(reports: &[WindowReport]) -> Vec<[String; 5]> {
    reports
        .iter()
        .map(|r| {
            [
                r.window_index.to_string(),
                r.outcome.status.to_string(),
                r.outcome
                    .recovered_block
                    .map_or_else(|| "-".into(), |b| b.to_string()),
                r.wait_time_s
                    .map_or_else(|| "-".into(), |t| format!("{t:.6}")),
                r.decision.map_or_else(|| "-".into(), |d| d.to_string()),
            ]
        })
        .collect()
}
