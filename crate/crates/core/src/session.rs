//! End-to-end wiring: packetize, annotate, impair, receive.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::channel::{replay_pattern, transmit, ChannelError, ChannelModel, DropPattern, LossReport};
use crate::hashchain::Algorithm;
use crate::packetizer::{group, packetize, parse_packet, reassemble, serialize_packet, Packet, PacketClock, PacketError};
use crate::receiver::{
    join, JoinMode, Receiver, ReceiverConfig, ReceiverError, ReceiverStats, ReinitRequest, ServerChain,
    WindowReport, WindowStatus,
};
use crate::strategies::{annotate_stream, ChainCursor, SenderOutput, SessionKeys, StrategyConfig, StrategyError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Receiver(#[from] ReceiverError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub strategy: StrategyConfig,
    pub algorithm: Algorithm,
    pub block_size: u32,
    pub vbr_bps: f64,
    pub ssrc: u32,
    pub rtt_s: f64,
    /// Answer reinitialization requests from the sender's chain.
    pub reinit: bool,
    pub keys: SessionKeys,
    pub loss_tolerance: f64,
}

impl SessionConfig {
    pub fn new(strategy: StrategyConfig, algorithm: Algorithm) -> Self {
        SessionConfig {
            strategy,
            algorithm,
            block_size: crate::packetizer::DEFAULT_BLOCK_SIZE,
            vbr_bps: 1_024_000.0,
            ssrc: 0x4843_0001,
            rtt_s: 2.0,
            reinit: false,
            keys: SessionKeys::public(algorithm),
            loss_tolerance: 1.0,
        }
    }

    pub fn clock(&self) -> PacketClock {
        PacketClock::for_bitrate(self.vbr_bps)
    }
}

#[derive(Debug, Clone)]
pub enum Impairment {
    None,
    Model { model: ChannelModel, trial: u64 },
    Sequences(DropPattern),
    /// Drop every data packet of the listed Blocks.
    Blocks(BTreeSet<u32>),
}

#[derive(Debug)]
pub struct SessionResult {
    pub sender: SenderOutput,
    pub loss: LossReport,
    pub reports: Vec<WindowReport>,
    pub stats: ReceiverStats,
    pub requests: Vec<ReinitRequest>,
    pub receiver_chain: Option<ChainCursor>,
    /// Receiver's final chain value equals the sender's.
    pub synchronized: bool,
    pub playback_ok: bool,
    /// The reconstructed stream, when every data packet arrived.
    pub reassembled: Option<Vec<u8>>,
    /// Data packets released for playback.
    pub delivered: Vec<Packet>,
}

impl SessionResult {
    pub fn count(&self, status: WindowStatus) -> usize {
        self.reports
            .iter()
            .filter(|r| r.outcome.status == status)
            .count()
    }

    pub fn all_ok(&self) -> bool {
        self.count(WindowStatus::Unrecoverable) == 0
    }
}

pub fn prepare(stream: &[u8], cfg: &SessionConfig) -> Result<SenderOutput, SessionError> {
    let packets = packetize(stream, cfg.ssrc, &cfg.clock())?;
    let windows = group(packets, cfg.block_size, cfg.strategy.blocks_per_window())?;
    Ok(annotate_stream(windows, &cfg.strategy, &cfg.keys)?)
}

/// Serialize, impair and re-parse the sender's packets.
pub fn deliver(sender: &SenderOutput, impairment: &Impairment) -> Result<(Vec<Packet>, LossReport), SessionError> {
    let wire: Vec<Packet> = sender
        .packets
        .iter()
        .map(|p| parse_packet(&serialize_packet(p)))
        .collect::<Result<_, _>>()?;
    Ok(match impairment {
        Impairment::None => {
            let n = wire.len();
            (
                wire,
                LossReport {
                    sent: n,
                    delivered: n,
                    dropped: Vec::new(),
                },
            )
        }
        Impairment::Model { model, trial } => transmit(wire, model, *trial),
        Impairment::Sequences(pattern) => replay_pattern(wire, pattern)?,
        Impairment::Blocks(blocks) => {
            let seqs = wire
                .iter()
                .filter(|p| !p.is_sync() && blocks.contains(&p.header.block_index))
                .map(Packet::sequence);
            replay_pattern(wire.clone(), &DropPattern::from_iter(seqs))?
        }
    })
}

pub fn receiver_config(cfg: &SessionConfig, sender: Option<&SenderOutput>) -> ReceiverConfig {
    let mut rc = ReceiverConfig::new(cfg.strategy, cfg.algorithm, cfg.block_size, cfg.ssrc);
    rc.packet_rate = cfg.clock().packets_per_second;
    rc.rtt_s = cfg.rtt_s;
    rc.layout = sender.map(|s| s.layout);
    rc.loss_tolerance = cfg.loss_tolerance;
    rc
}

/// Offline receive of `packets` in the order given.
pub fn receive(cfg: &SessionConfig, sender: SenderOutput, packets: Vec<Packet>, loss: LossReport) -> Result<SessionResult, SessionError> {
    let server = ServerChain::from_sender(&sender);
    let grant = join(JoinMode::Offline, 0.0, 1.0, &server)?;
    let mut rx = Receiver::new(receiver_config(cfg, Some(&sender)), cfg.keys.clone(), grant)?;
    if cfg.reinit {
        rx = rx.with_reinit(Box::new(server));
    }
    for p in packets {
        let _ = rx.receive(p);
    }
    rx.finish();
    let receiver_chain = rx.chain();
    let synchronized = receiver_chain == Some(sender.final_cursor)
        || receiver_chain.is_some_and(|c| {
            c.digest() == sender.final_cursor.digest() && c.inner() == sender.final_cursor.inner()
        });
    let reassembled = if loss.dropped.iter().all(|s| sender.packets[*s as usize].is_sync()) {
        reassemble(rx.delivered()).ok()
    } else {
        None
    };
    Ok(SessionResult {
        reports: rx.reports().to_vec(),
        stats: rx.stats(),
        requests: rx.reinit_requests().to_vec(),
        receiver_chain,
        synchronized,
        playback_ok: rx.playback_ok(),
        reassembled,
        delivered: rx.delivered().to_vec(),
        loss,
        sender,
    })
}

pub fn run(stream: &[u8], cfg: &SessionConfig, impairment: &Impairment) -> Result<SessionResult, SessionError> {
    let sender = prepare(stream, cfg)?;
    let (packets, loss) = deliver(&sender, impairment)?;
    receive(cfg, sender, packets, loss)
}
