//! Duplex session server: newline-delimited JSON over TCP and the same
//! messages as WebSocket text frames, plus `/healthz` and `/manifest`.

mod session;
mod transport;
mod wire;

use std::net::SocketAddr;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use axum::extract::ws::WebSocketUpgrade;
use axum::extract::State;
use axum::response::{IntoResponse, Json};
use axum::routing::get;
use axum::Router;
use serde::Serialize;
use tokio::io::BufReader;
use tokio::net::TcpListener;

pub use session::handle_connection;
pub use transport::{Ndjson, Transport, Ws};
pub use wire::{
    parse_client, ClientMessage, ParseError, ServerMessage, SessionMode, StartMessage, CLIENT_TYPES,
    DEFAULT_TICK_MS, QUEUE_CAPACITY,
};

use crate::error::Result;
use crate::model::LslmModel;
use crate::vocab::{BURST_NOISE, COMMAND_SYMBOLS, SIL, STEADY_NOISE};
use crate::world::{Codebook, Split, WorldConfig, WorldGen};

/// Shared, read-only state of a running server.
pub struct ServerState {
    pub model: Arc<LslmModel>,
    pub world: WorldConfig,
    pub codebook: Codebook,
    pub manifest: serde_json::Value,
    pub(crate) next_session: AtomicU64,
}

#[derive(Debug, Clone, Serialize)]
struct RenderedCommand {
    word: String,
    speaker: usize,
    symbols: Vec<usize>,
}

impl ServerState {
    pub fn new(model: LslmModel, world: WorldConfig) -> Result<Self> {
        let gen = WorldGen::new(world.clone())?;
        let speakers = world.speaker_table();
        let mut commands = Vec::new();
        for word in gen.lexicon.words() {
            for id in world.split_speakers(Split::Test) {
                let symbols = gen.lexicon.render_id(word, &speakers, id)?.to_vec();
                commands.push(RenderedCommand { word: word.to_string(), speaker: id, symbols });
            }
        }
        let manifest = serde_json::json!({
            "scenario": world.scenario,
            "mu_frames": world.mu_frames,
            "detection_window": world.detection_window(),
            "fusion": model.fusion(),
            "tick_ms_default": DEFAULT_TICK_MS,
            "tick_ms_options": [25, 50, 100, 200],
            "queue_capacity": QUEUE_CAPACITY,
            "symbols": {
                "silence": SIL,
                "steady_noise": STEADY_NOISE.collect::<Vec<_>>(),
                "burst_noise": BURST_NOISE.collect::<Vec<_>>(),
                "command": COMMAND_SYMBOLS.collect::<Vec<_>>(),
            },
            "lexicon": gen.lexicon.words().collect::<Vec<_>>(),
            "commands": commands,
        });
        Ok(Self { codebook: world.codebook(), model: Arc::new(model), world, manifest, next_session: AtomicU64::new(1) })
    }
}

async fn healthz() -> &'static str {
    "ok\n"
}

async fn manifest(State(state): State<Arc<ServerState>>) -> Json<serde_json::Value> {
    Json(state.manifest.clone())
}

async fn ws(State(state): State<Arc<ServerState>>, upgrade: WebSocketUpgrade) -> impl IntoResponse {
    upgrade.on_upgrade(move |socket| handle_connection(state, Ws(socket)))
}

/// HTTP routes: `/healthz`, `/manifest`, and the `/ws` session endpoint.
pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/manifest", get(manifest))
        .route("/ws", get(ws))
        .with_state(state)
}

/// Accepts newline-delimited JSON sessions until the listener fails.
pub async fn serve_tcp(listener: TcpListener, state: Arc<ServerState>) -> std::io::Result<()> {
    loop {
        let (stream, peer) = listener.accept().await?;
        log::debug!("tcp connection from {peer}");
        let state = Arc::clone(&state);
        tokio::spawn(async move {
            let (r, w) = stream.into_split();
            handle_connection(state, Ndjson::new(BufReader::new(r), w)).await;
        });
    }
}

pub async fn serve_http(listener: TcpListener, state: Arc<ServerState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Runs both listeners until one fails.
pub async fn serve(state: Arc<ServerState>, http: SocketAddr, tcp: SocketAddr) -> std::io::Result<()> {
    let http_listener = TcpListener::bind(http).await?;
    let tcp_listener = TcpListener::bind(tcp).await?;
    log::info!("http/ws on {}, ndjson on {}", http_listener.local_addr()?, tcp_listener.local_addr()?);
    tokio::try_join!(serve_http(http_listener, Arc::clone(&state)), serve_tcp(tcp_listener, state))?;
    Ok(())
}
