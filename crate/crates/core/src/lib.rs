//! Hash-chain resynchronization for lossy packet streams.

pub mod hashchain;
pub mod packetizer;
pub mod strategies;
pub mod channel;
pub mod keyexchange;
pub mod receiver;
pub mod session;
pub mod analytics;
