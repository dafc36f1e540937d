//! Streaming duplex inference: sessions that take listening frames and emit
//! speaking tokens one step at a time.

mod sampler;
mod session;
mod trace;

pub use sampler::{argmax, nucleus, sample_token, SamplerConfig};
pub use session::{max_len_for, run_offline, MissingFrame, OfflineResult, Session, Stop, StepOutput, StopReason};
pub use trace::{read_traces, write_traces, IrqTrace, PROB_FLOOR};
