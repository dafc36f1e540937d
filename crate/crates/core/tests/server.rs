mod common;

use std::net::SocketAddr;
use std::sync::Arc;

use common::{expected_lines, lockstep_lines, start, Client};
use futures::{SinkExt, StreamExt};
use lslm::model::{FusionStrategy, LslmModel, ModelConfig};
use lslm::server::{serve_http, serve_tcp, ServerMessage, ServerState};
use lslm::world::WorldConfig;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

fn model() -> LslmModel {
    LslmModel::new(ModelConfig::tiny().with_fusion(FusionStrategy::Middle).with_seed(11)).unwrap()
}

async fn spawn(model: LslmModel) -> (SocketAddr, SocketAddr, Arc<ServerState>) {
    let state = Arc::new(ServerState::new(model, WorldConfig::default()).unwrap());
    let tcp = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let http = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let (ta, ha) = (tcp.local_addr().unwrap(), http.local_addr().unwrap());
    tokio::spawn(serve_tcp(tcp, Arc::clone(&state)));
    tokio::spawn(serve_http(http, Arc::clone(&state)));
    (ta, ha, state)
}

#[tokio::test]
async fn lockstep_matches_offline_byte_for_byte() {
    let (tcp, _, state) = spawn(model()).await;
    let frames: Vec<usize> = (0..60).map(|i| (i * 7) % 41).collect();
    for (ctx, seed) in [("hello", 1u64), ("abcdefgh", 2), ("zz", 3)] {
        let mut c = Client::connect(tcp).await;
        let got = lockstep_lines(&mut c, ctx, seed, &frames).await;
        assert_eq!(got, expected_lines(&state.model, ctx, seed, &frames, &state.world), "{ctx}");
    }
}

#[tokio::test]
async fn concurrent_sessions_are_isolated() {
    let (tcp, _, state) = spawn(model()).await;
    let mut tasks = Vec::new();
    for i in 0..6u64 {
        tasks.push(tokio::spawn(async move {
            let frames: Vec<usize> = (0..60).map(|k| ((k as u64 * (i + 3)) % 41) as usize).collect();
            let mut c = Client::connect(tcp).await;
            let ctx = ["abc", "hello", "xyzzy"][i as usize % 3];
            (ctx, i, frames.clone(), lockstep_lines(&mut c, ctx, i, &frames).await)
        }));
    }
    for t in tasks {
        let (ctx, seed, frames, got) = t.await.unwrap();
        assert_eq!(got, expected_lines(&state.model, ctx, seed, &frames, &state.world));
    }
}

#[tokio::test]
async fn malformed_second_message_closes_without_tokens() {
    let (tcp, _, _) = spawn(model()).await;
    let mut c = Client::connect(tcp).await;
    c.send(r#"{"type":"start","context":"abc","mode":"realtime","tick_ms":100000}"#).await;
    assert!(matches!(c.recv().await, Some(ServerMessage::Ready { .. })));
    c.send("{not json").await;
    match c.recv().await {
        Some(ServerMessage::Error { code, .. }) => assert_eq!(code, "bad_message"),
        other => panic!("{other:?}"),
    }
    assert!(c.recv().await.is_none());
}

#[tokio::test]
async fn protocol_errors() {
    let (tcp, _, _) = spawn(model()).await;
    let mut c = Client::connect(tcp).await;
    c.send(r#"{"type":"wave"}"#).await;
    match c.recv().await {
        Some(ServerMessage::Error { code, .. }) => assert_eq!(code, "unknown_type"),
        other => panic!("{other:?}"),
    }
    let mut c = Client::connect(tcp).await;
    c.send(r#"{"type":"start","context":"a1"}"#).await;
    assert!(matches!(c.recv().await, Some(ServerMessage::Error { .. })));
    let mut c = Client::connect(tcp).await;
    c.send(r#"{"type":"start","context":"ab","fusion":"late"}"#).await;
    assert!(matches!(c.recv().await, Some(ServerMessage::Error { .. })));
}

#[tokio::test]
async fn listen_after_done_is_ignored_and_new_session_starts() {
    let (tcp, _, _) = spawn(model()).await;
    let mut c = Client::connect(tcp).await;
    let first = lockstep_lines(&mut c, "abc", 5, &[]).await;
    assert!(first.last().unwrap().contains(r#""type":"done""#));
    c.send(r#"{"type":"listen","symbols":[0,0]}"#).await;
    let second = lockstep_lines(&mut c, "abc", 5, &[]).await;
    assert_eq!(first, second);
}

#[tokio::test]
async fn client_stop_ends_session() {
    let (tcp, _, _) = spawn(model()).await;
    let mut c = Client::connect(tcp).await;
    c.send(&start("abcdef", 0, "lockstep")).await;
    assert!(matches!(c.recv().await, Some(ServerMessage::Ready { .. })));
    assert!(matches!(c.recv().await, Some(ServerMessage::Token { step: 0, .. })));
    c.send(r#"{"type":"stop"}"#).await;
    match c.recv().await {
        Some(ServerMessage::Done { reason, .. }) => assert_eq!(reason, "ClientStop"),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn realtime_without_frames_runs_to_a_stop() {
    let (tcp, _, _) = spawn(model()).await;
    let mut c = Client::connect(tcp).await;
    c.send(&start("abc", 1, "realtime")).await;
    let max_len = match c.recv().await {
        Some(ServerMessage::Ready { max_len, .. }) => max_len,
        other => panic!("{other:?}"),
    };
    let mut expected_step = 0;
    loop {
        match c.recv().await.unwrap() {
            ServerMessage::Token { step, .. } => {
                assert_eq!(step, expected_step);
                expected_step += 1;
            }
            ServerMessage::Done { reason, dropped, .. } => {
                assert!(["EOS", "IRQ", "MaxLen"].contains(&reason.as_str()));
                assert!(expected_step <= max_len);
                assert_eq!(dropped, 0);
                break;
            }
            other => panic!("{other:?}"),
        }
    }
}

#[tokio::test]
async fn realtime_queue_overflow_is_counted() {
    let (tcp, _, _) = spawn(model()).await;
    let mut c = Client::connect(tcp).await;
    c.send(r#"{"type":"start","context":"abc","mode":"realtime","tick_ms":200}"#).await;
    assert!(matches!(c.recv().await, Some(ServerMessage::Ready { .. })));
    let burst = vec!["0"; 100].join(",");
    c.send(&format!(r#"{{"type":"listen","symbols":[{burst}]}}"#)).await;
    c.send(r#"{"type":"stop"}"#).await;
    loop {
        match c.recv().await.unwrap() {
            ServerMessage::Done { dropped, .. } => {
                assert_eq!(dropped, 100 - 64);
                break;
            }
            ServerMessage::Token { .. } => {}
            other => panic!("{other:?}"),
        }
    }
}

#[tokio::test]
async fn http_endpoints_and_websocket() {
    let (_, http, state) = spawn(model()).await;
    let mut s = TcpStream::connect(http).await.unwrap();
    s.write_all(b"GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200") && body.ends_with("ok\n"));

    let mut s = TcpStream::connect(http).await.unwrap();
    s.write_all(b"GET /manifest HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).await.unwrap();
    let json = &body[body.find("\r\n\r\n").unwrap() + 4..];
    let manifest: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(manifest["mu_frames"], 4);
    assert_eq!(manifest["commands"][0]["symbols"].as_array().unwrap().len(), 8);

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{http}/ws")).await.unwrap();
    use tokio_tungstenite::tungstenite::Message;
    ws.send(Message::text(start("hello", 4, "lockstep"))).await.unwrap();
    let mut got = Vec::new();
    let frames: Vec<usize> = vec![];
    while let Some(Ok(msg)) = ws.next().await {
        let text = msg.into_text().unwrap().to_string();
        let parsed: ServerMessage = serde_json::from_str(&text).unwrap();
        match parsed {
            ServerMessage::Ready { .. } => continue,
            ServerMessage::Token { .. } => {
                got.push(text);
                ws.send(Message::text(r#"{"type":"listen","symbols":[0]}"#)).await.unwrap();
            }
            _ => {
                got.push(text);
                break;
            }
        }
    }
    assert_eq!(got, expected_lines(&state.model, "hello", 4, &frames, &state.world));
}
