use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampler::{sample_token, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::{context_ids, context_row, DecoderCache, ListenerState, LslmModel};
use crate::tensor::softmax_in_place;
use crate::vocab::{BOC, BOS, EOC, EOS, IRQ, LISTEN_VOCAB, SIL};
use crate::world::CODE_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    #[serde(rename = "EOS")]
    Eos,
    #[serde(rename = "IRQ")]
    Irq,
    MaxLen,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            Self::Eos => "EOS",
            Self::Irq => "IRQ",
            Self::MaxLen => "MaxLen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stop {
    pub reason: StopReason,
    /// Zero-based index of the last step taken.
    pub step: usize,
}

/// What `step` does when the listening frame for the current step has not
/// arrived yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingFrame {
    /// Contract error (lockstep).
    Reject,
    /// Substitute silence (real time).
    Silence,
}

/// Step budget for a context of `n_chars` characters.
pub fn max_len_for(n_chars: usize) -> usize {
    CODE_LEN * n_chars + 16
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub step: usize,
    pub token: usize,
    /// P(IRQ) before temperature and nucleus filtering.
    pub irq_prob: f32,
    pub stop: Option<Stop>,
}

/// One streaming generation: step `j` conditions on the context, tokens
/// `0..j` and listening frames `0..j`.
#[derive(Debug, Clone)]
pub struct Session {
    model: Arc<LslmModel>,
    context: String,
    sampler: SamplerConfig,
    rng: ChaCha8Rng,
    cache: DecoderCache,
    listener: Option<ListenerState>,
    /// Projected listening vectors, one per received frame.
    listen_vectors: Vec<Vec<f32>>,
    frames: Vec<usize>,
    tokens: Vec<usize>,
    irq_trace: Vec<f32>,
    stop: Option<Stop>,
    max_len: usize,
    missing: MissingFrame,
    substituted: usize,
}

impl Session {
    /// Primes the decoder with `[BOC, context…, EOC]`; BOS enters with the
    /// first step.
    pub fn start(model: Arc<LslmModel>, context: &str, sampler: SamplerConfig, missing: MissingFrame) -> Result<Self> {
        sampler.validate()?;
        let ids = context_ids(context)?;
        let prefix = ids.len() + 2;
        let max_seq = model.config.max_seq_len;
        if prefix + CODE_LEN * ids.len() + 1 > max_seq {
            return Err(Error::Length(format!(
                "context of {} characters does not fit max_seq_len {max_seq}",
                ids.len()
            )));
        }
        let max_len = max_len_for(ids.len()).min(max_seq - prefix);
        let mut cache = model.new_cache();
        for &id in std::iter::once(&BOC).chain(&ids).chain(std::iter::once(&EOC)) {
            model.decode_step(&mut cache, context_row(id), None)?;
        }
        let listener = model.has_listener().then(|| model.new_listener_state());
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(sampler.seed),
            context: context.to_string(),
            model,
            sampler,
            cache,
            listener,
            listen_vectors: Vec::new(),
            frames: Vec::new(),
            tokens: Vec::new(),
            irq_trace: Vec::new(),
            stop: None,
            max_len,
            missing,
            substituted: 0,
        })
    }

    /// Encodes newly arrived listening frames.
    pub fn feed_listen(&mut self, symbols: &[usize]) -> Result<()> {
        if self.stop.is_some() {
            return Err(Error::Contract("session already stopped".into()));
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s >= LISTEN_VOCAB) {
            return Err(Error::Index(format!("listening symbol {bad} outside vocabulary of {LISTEN_VOCAB}")));
        }
        for &s in symbols {
            self.push_frame(s)?;
        }
        Ok(())
    }

    fn push_frame(&mut self, symbol: usize) -> Result<()> {
        if let Some(state) = &mut self.listener {
            let features = self.model.listen_step(state, symbol)?;
            self.listen_vectors.push(self.model.project_frame(&features)?);
        }
        self.frames.push(symbol);
        Ok(())
    }

    /// Generates one token.
    pub fn step(&mut self) -> Result<StepOutput> {
        if self.stop.is_some() {
            return Err(Error::Contract("session already stopped".into()));
        }
        let j = self.tokens.len();
        if self.frames.len() < j {
            match self.missing {
                MissingFrame::Reject => {
                    return Err(Error::Contract(format!("step {j} needs {j} listening frames, {} received", self.frames.len())))
                }
                MissingFrame::Silence => {
                    while self.frames.len() < j {
                        self.push_frame(SIL)?;
                        self.substituted += 1;
                    }
                }
            }
        }
        let input = if j == 0 { BOS } else { self.tokens[j - 1] };
        let listen = j.checked_sub(1).and_then(|f| self.listen_vectors.get(f)).map(Vec::as_slice);
        let logits = self.model.decode_step(&mut self.cache, input, listen)?;
        let mut probs = logits.clone();
        softmax_in_place(&mut probs);
        let irq_prob = probs[IRQ];
        let token = sample_token(&logits, &self.sampler, &mut self.rng);
        self.tokens.push(token);
        self.irq_trace.push(irq_prob);
        let reason = match token {
            EOS => Some(StopReason::Eos),
            IRQ => Some(StopReason::Irq),
            _ if self.tokens.len() >= self.max_len => Some(StopReason::MaxLen),
            _ => None,
        };
        self.stop = reason.map(|reason| Stop { reason, step: j });
        Ok(StepOutput { step: j, token, irq_prob, stop: self.stop })
    }

    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn steps(&self) -> usize {
        self.tokens.len()
    }

    /// Every sampled token, including a terminal one.
    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn irq_trace(&self) -> &[f32] {
        &self.irq_trace
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn stop(&self) -> Option<Stop> {
        self.stop
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Frames filled with SIL because they had not arrived in time.
    pub fn substituted_frames(&self) -> usize {
        self.substituted
    }

    pub fn into_result(self, onset: Option<usize>) -> Result<OfflineResult> {
        let stop = self.stop.ok_or_else(|| Error::Contract("session has not stopped".into()))?;
        Ok(OfflineResult { context: self.context, tokens: self.tokens, stop, irq_trace: self.irq_trace, onset })
    }
}

/// A finished lockstep run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineResult {
    pub context: String,
    pub tokens: Vec<usize>,
    pub stop: Stop,
    pub irq_trace: Vec<f32>,
    pub onset: Option<usize>,
}

impl OfflineResult {
    /// Generated tokens without the terminal one.
    pub fn speech(&self) -> &[usize] {
        match self.stop.reason {
            StopReason::MaxLen => &self.tokens,
            _ => &self.tokens[..self.tokens.len() - 1],
        }
    }
}

/// Lockstep loop: feed frame `j − 1`, take step `j`, until a stop. The
/// stream is padded with SIL when shorter than the step budget.
pub fn run_offline(
    model: &Arc<LslmModel>,
    context: &str,
    listen: &[usize],
    sampler: SamplerConfig,
) -> Result<OfflineResult> {
    let mut s = Session::start(Arc::clone(model), context, sampler, MissingFrame::Reject)?;
    loop {
        let j = s.steps();
        if j > 0 {
            s.feed_listen(&[listen.get(j - 1).copied().unwrap_or(SIL)])?;
        }
        if s.step()?.stop.is_some() {
            break;
        }
    }
    s.into_result(None)
}
