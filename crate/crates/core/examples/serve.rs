//! Serves a checkpoint over WebSocket (`/ws`, `/manifest`, `/healthz`) and
//! newline-delimited JSON over TCP. Without a checkpoint an untrained tiny
//! model is served, which is enough to exercise the protocol.
//!
//!     cargo run --release --example serve -- [lslm.ckpt]
//!     printf '{"type":"start","context":"hello","seed":1,"mode":"lockstep"}\n' | nc 127.0.0.1 8081

use std::sync::Arc;

use lslm::model::{LslmModel, ModelConfig};
use lslm::server::{serve, ServerState};
use lslm::world::WorldConfig;

#[tokio::main]
async fn main() -> lslm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let model = match std::env::args().nth(1) {
        Some(path) => LslmModel::load(path)?,
        None => LslmModel::new(ModelConfig::tiny())?,
    };
    let state = Arc::new(ServerState::new(model, WorldConfig::default())?);
    let http = "127.0.0.1:8080".parse().expect("valid address");
    let tcp = "127.0.0.1:8081".parse().expect("valid address");
    serve(state, http, tcp).await?;
    Ok(())
}
