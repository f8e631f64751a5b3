//! Agent-to-agent messaging with x402 micropayments settled on a simulated
//! EVM-style ledger, plus on-ledger agent discovery.

pub mod card;
pub mod client;
pub mod crypto;
pub mod demo;
pub mod discovery;
pub mod facilitator;
pub mod ledger;
pub mod net;
pub mod protocol;
pub mod server;
pub mod util;
pub mod wire;
