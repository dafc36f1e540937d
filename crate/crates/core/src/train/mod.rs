//! Optimization loops: vanilla TTS pretraining, listener pretraining and
//! duplex training under the scratch / frozen / finetune init matrix.

mod config;
mod history;
mod loops;
mod schedule;

pub use config::{ListeningInit, SpeakingInit, TrainConfig};
pub use history::{EpochRecord, LogLine, StepRecord, TrainLog};
pub use loops::{
    fdm_val_loss, init_lslm, mean_loss, pretrain_listener, pretrain_tts, train_lslm, tts_val_loss,
    ListenerRun, Pretrained, TrainRun,
};
pub use schedule::Schedule;
