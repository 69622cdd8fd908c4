//! Masked secure aggregation: wire format, transports, client and server
//! roles, and end-to-end run drivers.

pub mod client;
pub mod protocol;
pub mod server;
pub mod transport;
pub mod wire;

pub use client::{client_receive, client_send, receive_update, RoundMasks};
pub use protocol::{
    connect_tcp, run_central, run_client, run_local, run_loopback_tcp, run_tcp_client, serve_tcp, ClientOutcome, ClientSession,
    RoundPlan, RunOutcome, RunPlan, TransportOptions,
};
pub use server::{server_aggregate, AggregationServer, Noise, NoiseSource, RoundNoise, RoundTranscript, ServerSummary};
pub use transport::{pipe, ByteStream, Link, LinkStats, PipeEnd, DEFAULT_TIMEOUT};
pub use wire::{MsaMessage, MsgKind};
