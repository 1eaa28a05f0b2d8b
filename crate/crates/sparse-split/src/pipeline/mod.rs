//! Distributed execution: framed activation transport, edge/remote runners,
//! the channel cost model, and the offloading-policy comparison.

pub mod channel;
pub mod edge;
pub mod frame;
pub mod policies;
pub mod remote;

use thiserror::Error;

pub use channel::{ChannelError, ChannelMode, ChannelModel};
pub use edge::{run_edge, EdgeReport, TailEndpoint, TrafficLog, TrafficRow};
pub use frame::{
    activation_frame_len, decode_frame, encode_frame, read_frame, write_frame, Frame, FrameError,
    MsgType, HEADER_LEN, MAX_PAYLOAD, PROTOCOL_VERSION,
};
pub use policies::{compare_policies, Policy, PolicyReport, PolicyRow};
pub use remote::{serve_tail, spawn_tail_server, TailServerHandle};

use crate::mlp::ModelError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("connection to the tail lost at sample {sample_id} (reconnect failed)")]
    ConnectionLost { sample_id: u64 },
    #[error("protocol violation: {what}")]
    BadResponse { what: &'static str },
}
