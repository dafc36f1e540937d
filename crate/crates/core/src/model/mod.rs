//! The listen-while-speaking model: decoder-only backbone, streaming
//! listener encoder, projection, the three fusion strategies and losses.

mod config;
mod infer;
mod io;
mod layout;
mod loss;
mod lslm;

pub use config::{FusionStrategy, ListenerConfig, ModelConfig};
pub use infer::{DecoderCache, ListenerState};
pub use io::{load_listener, save_listener};
pub use layout::{context_ids, context_row, Layout};
pub use loss::{fdm_loss, sequence_loss, tts_loss, tts_loss_in, ListenMode, LossOutput};
pub use lslm::{
    alignment_index, encode_listen_with, Batch, LslmModel, ParamGroup, EMBED_ROWS, ENCODER_GROUP,
    HEAD_B, LISTENING_GROUP, PROJ_B, PROJ_W, SPEAKING_GROUP,
};
