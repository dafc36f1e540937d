use std::collections::VecDeque;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use tokio::time::{interval, MissedTickBehavior};

use super::transport::Transport;
use super::wire::{parse_client, ClientMessage, ServerMessage, SessionMode, StartMessage, DEFAULT_TICK_MS, QUEUE_CAPACITY};
use super::ServerState;
use crate::runtime::{MissingFrame, PROB_FLOOR, SamplerConfig, Session, StepOutput, StopReason};
use crate::vocab::LISTEN_VOCAB;

/// Why a session loop returned.
enum Ended {
    /// `done` sent; the connection may start another session.
    Done,
    /// `error` sent or peer gone; close the connection.
    Close,
}

struct Live {
    session: Session,
    /// Absolute frame index of the most recent tagged command start.
    command_start: Option<usize>,
    received: usize,
    dropped: usize,
}

impl Live {
    fn token(out: &StepOutput) -> ServerMessage {
        ServerMessage::Token {
            step: out.step,
            token: out.token,
            irq_p: out.irq_prob,
            irq_log10: out.irq_prob.max(PROB_FLOOR).log10(),
        }
    }

    fn done(&self, state: &ServerState, client_stop: bool) -> ServerMessage {
        let stop = self.session.stop();
        let reason = match (client_stop, stop) {
            (true, _) | (false, None) => "ClientStop".to_string(),
            (false, Some(s)) => s.reason.name().to_string(),
        };
        let speech = match stop {
            Some(s) if s.reason != StopReason::MaxLen => &self.session.tokens()[..self.session.steps() - 1],
            _ => self.session.tokens(),
        };
        let latency_frames = match (stop, self.command_start) {
            (Some(s), Some(c)) if s.reason == StopReason::Irq => Some(s.step as i64 - c as i64),
            _ => None,
        };
        ServerMessage::Done {
            reason,
            step: stop.map(|s| s.step),
            transcript: state.codebook.invert(speech).0,
            latency_frames,
            dropped: self.dropped,
        }
    }

    fn tag(&mut self, command_start: Option<usize>, len: usize) {
        if let Some(off) = command_start.filter(|&o| o < len) {
            self.command_start = Some(self.received + off);
        }
    }
}

async fn send<T: Transport>(t: &mut T, msg: &ServerMessage) -> bool {
    t.send(msg.to_line()).await.is_ok()
}

fn start_session(state: &ServerState, start: &StartMessage) -> Result<Session, ServerMessage> {
    if let Some(f) = start.fusion {
        if f != state.model.fusion() {
            return Err(ServerMessage::error(
                "bad_start",
                format!("server model uses {} fusion, {} requested", state.model.fusion().name(), f.name()),
            ));
        }
    }
    let d = SamplerConfig::default();
    let sampler = SamplerConfig {
        top_p: start.top_p.unwrap_or(d.top_p),
        temperature: start.temperature.unwrap_or(d.temperature),
        seed: start.seed,
        greedy: start.greedy,
    };
    let missing = match start.mode {
        SessionMode::Lockstep => MissingFrame::Reject,
        SessionMode::Realtime => MissingFrame::Silence,
    };
    Session::start(Arc::clone(&state.model), &start.context, sampler, missing)
        .map_err(|e| ServerMessage::error("bad_start", e.to_string()))
}

fn check_symbols(symbols: &[usize]) -> Result<(), ServerMessage> {
    match symbols.iter().find(|&&s| s >= LISTEN_VOCAB) {
        Some(s) => Err(ServerMessage::error("bad_message", format!("listening symbol {s} outside 0..{LISTEN_VOCAB}"))),
        None => Ok(()),
    }
}

/// Serves one connection: any number of sequential sessions, each opened
/// by `start` and closed by exactly one `done` or `error`.
pub async fn handle_connection<T: Transport>(state: Arc<ServerState>, mut t: T) {
    let mut ignored = 0usize;
    while let Some(text) = t.recv().await {
        let msg = match parse_client(&text) {
            Ok(m) => m,
            Err(e) => {
                send(&mut t, &e.to_message()).await;
                return;
            }
        };
        match msg {
            ClientMessage::Start(start) => {
                let session = match start_session(&state, &start) {
                    Ok(s) => s,
                    Err(e) => {
                        send(&mut t, &e).await;
                        return;
                    }
                };
                let id = state.next_session.fetch_add(1, Ordering::Relaxed);
                let ready = ServerMessage::Ready { session_id: id, max_len: session.max_len(), mu_frames: state.world.mu_frames };
                if !send(&mut t, &ready).await {
                    return;
                }
                let live = Live { session, command_start: None, received: 0, dropped: 0 };
                let ended = match start.mode {
                    SessionMode::Lockstep => lockstep(&state, &mut t, live).await,
                    SessionMode::Realtime => {
                        let tick = Duration::from_millis(start.tick_ms.unwrap_or(DEFAULT_TICK_MS).max(1));
                        realtime(&state, &mut t, live, tick).await
                    }
                };
                if let Ended::Close = ended {
                    return;
                }
            }
            // between sessions: frames and stops have nothing to act on
            ClientMessage::Listen { .. } | ClientMessage::Stop {} => {
                ignored += 1;
                log::warn!("message outside a session ignored ({ignored} so far)");
            }
        }
    }
}

/// Takes one step and reports it; `Some` when the session ended.
async fn advance<T: Transport>(state: &ServerState, t: &mut T, live: &mut Live) -> Option<Ended> {
    let out = match live.session.step() {
        Ok(o) => o,
        Err(e) => {
            send(t, &ServerMessage::error("internal", e.to_string())).await;
            return Some(Ended::Close);
        }
    };
    if !send(t, &Live::token(&out)).await {
        return Some(Ended::Close);
    }
    if out.stop.is_some() {
        let done = live.done(state, false);
        return Some(if send(t, &done).await { Ended::Done } else { Ended::Close });
    }
    None
}

/// Step 0 needs no listening frame; afterwards each received frame
/// releases exactly one step.
async fn lockstep<T: Transport>(state: &ServerState, t: &mut T, mut live: Live) -> Ended {
    if let Some(end) = advance(state, t, &mut live).await {
        return end;
    }
    while let Some(text) = t.recv().await {
        match parse_client(&text) {
            Err(e) => {
                send(t, &e.to_message()).await;
                return Ended::Close;
            }
            Ok(ClientMessage::Start(_)) => {
                send(t, &ServerMessage::error("bad_message", "start inside a running session")).await;
                return Ended::Close;
            }
            Ok(ClientMessage::Stop {}) => {
                let done = live.done(state, true);
                return if send(t, &done).await { Ended::Done } else { Ended::Close };
            }
            Ok(ClientMessage::Listen { symbols, command_start }) => {
                if let Err(e) = check_symbols(&symbols) {
                    send(t, &e).await;
                    return Ended::Close;
                }
                live.tag(command_start, symbols.len());
                for &sym in &symbols {
                    live.received += 1;
                    if live.session.feed_listen(&[sym]).is_err() {
                        break;
                    }
                    if let Some(end) = advance(state, t, &mut live).await {
                        return end;
                    }
                }
            }
        }
    }
    Ended::Close
}

async fn realtime<T: Transport>(state: &ServerState, t: &mut T, mut live: Live, tick: Duration) -> Ended {
    let mut queue: VecDeque<usize> = VecDeque::with_capacity(QUEUE_CAPACITY);
    let mut timer = interval(tick);
    timer.set_missed_tick_behavior(MissedTickBehavior::Delay);
    timer.tick().await;
    let started = std::time::Instant::now();
    loop {
        tokio::select! {
            biased;
            msg = t.recv() => {
                let Some(text) = msg else { return Ended::Close };
                match parse_client(&text) {
                    Err(e) => {
                        send(t, &e.to_message()).await;
                        return Ended::Close;
                    }
                    Ok(ClientMessage::Start(_)) => {
                        send(t, &ServerMessage::error("bad_message", "start inside a running session")).await;
                        return Ended::Close;
                    }
                    Ok(ClientMessage::Stop {}) => {
                        let done = live.done(state, true);
                        return if send(t, &done).await { Ended::Done } else { Ended::Close };
                    }
                    Ok(ClientMessage::Listen { symbols, command_start }) => {
                        if let Err(e) = check_symbols(&symbols) {
                            send(t, &e).await;
                            return Ended::Close;
                        }
                        // the tag refers to the frame's eventual position in the stream
                        if let Some(off) = command_start.filter(|&o| o < symbols.len()) {
                            live.command_start = Some(live.session.frames().len() + queue.len() + off);
                        }
                        for sym in symbols {
                            if queue.len() == QUEUE_CAPACITY {
                                queue.pop_front();
                                live.dropped += 1;
                            }
                            queue.push_back(sym);
                        }
                    }
                }
            }
            _ = timer.tick() => {
                if let Some(sym) = queue.pop_front() {
                    if live.session.feed_listen(&[sym]).is_err() {
                        return Ended::Close;
                    }
                }
                if let Some(end) = advance(state, t, &mut live).await {
                    log::info!("realtime session: {} steps in {:.2}s", live.session.steps(), started.elapsed().as_secs_f64());
                    return end;
                }
            }
        }
    }
}
