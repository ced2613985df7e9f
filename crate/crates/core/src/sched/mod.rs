//! Shared-chip experiment service.
//!
//! Clients submit serialized playback programs over TCP. A single worker
//! executes them one at a time, interleaving users round-robin so a short
//! experiment is not stuck behind another user's long sweep. The chip is
//! fully reset whenever the next job belongs to a different user; consecutive
//! jobs of the same user see the state left by the previous one.

mod client;
mod proto;
mod queue;
mod server;

pub use client::{Client, ClientError, JobReport, RemoteExecutor};
pub use proto::{error_code, Frame, FrameError, JobStatus, Message, MsgType, HEADER_LEN, MAGIC, MAX_PAYLOAD, VERSION};
pub use queue::{Job, Outcome, QueueState};
pub use server::{Dispatch, Server, ServerHandle};
