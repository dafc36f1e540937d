use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FusionStrategy, ModelConfig};
use super::layout::Layout;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};
use crate::vocab::{CONTEXT_VOCAB, SIL, SPEAK_VOCAB, SPAD};

pub const INIT_STD: f32 = 0.02;

/// Name prefix of the speaking (backbone) parameter group.
pub const SPEAKING_GROUP: &str = "speak.";
/// Name prefix of the listening parameter group.
pub const LISTENING_GROUP: &str = "listen.";
/// Streaming encoder sub-group; the part a pretrained listener provides.
pub const ENCODER_GROUP: &str = "listen.encoder.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Speaking,
    Listening,
}

impl ParamGroup {
    pub fn of(name: &str) -> Option<Self> {
        if name.starts_with(SPEAKING_GROUP) {
            Some(Self::Speaking)
        } else if name.starts_with(LISTENING_GROUP) {
            Some(Self::Listening)
        } else {
            None
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Self::Speaking => SPEAKING_GROUP,
            Self::Listening => LISTENING_GROUP,
        }
    }
}

/// Parameter names of one transformer block.
#[derive(Debug, Clone)]
pub(crate) struct BlockNames {
    pub ln1_gain: String,
    pub ln1_bias: String,
    pub qkv_w: String,
    pub qkv_b: String,
    pub out_w: String,
    pub out_b: String,
    pub ln2_gain: String,
    pub ln2_bias: String,
    pub fc_w: String,
    pub fc_b: String,
    pub proj_w: String,
    pub proj_b: String,
}

impl BlockNames {
    fn new(i: usize) -> Self {
        let p = |s: &str| format!("speak.blocks.{i}.{s}");
        Self {
            ln1_gain: p("ln1.gain"),
            ln1_bias: p("ln1.bias"),
            qkv_w: p("attn.qkv.weight"),
            qkv_b: p("attn.qkv.bias"),
            out_w: p("attn.out.weight"),
            out_b: p("attn.out.bias"),
            ln2_gain: p("ln2.gain"),
            ln2_bias: p("ln2.bias"),
            fc_w: p("mlp.fc.weight"),
            fc_b: p("mlp.fc.bias"),
            proj_w: p("mlp.proj.weight"),
            proj_b: p("mlp.proj.bias"),
        }
    }
}

pub const EMBED: &str = "speak.embed.weight";
pub const POS: &str = "speak.pos.weight";
pub const SPEECH_POS: &str = "speak.speech_pos.weight";
pub const LNF_GAIN: &str = "speak.ln_f.gain";
pub const LNF_BIAS: &str = "speak.ln_f.bias";
pub const HEAD_W: &str = "speak.head.weight";
pub const HEAD_B: &str = "speak.head.bias";
pub const LISTEN_EMBED: &str = "listen.encoder.embed.weight";
pub const PROJ_W: &str = "listen.proj.weight";
pub const PROJ_B: &str = "listen.proj.bias";
pub const LATE_W: &str = "listen.late_head.weight";

pub(crate) fn conv_names(i: usize) -> (String, String) {
    (format!("listen.encoder.conv.{i}.weight"), format!("listen.encoder.conv.{i}.bias"))
}

/// Rows of the shared embedding table: speaking tokens, then context ids.
pub const EMBED_ROWS: usize = SPEAK_VOCAB + CONTEXT_VOCAB;

/// Decoder-only backbone plus, unless built as a vanilla TTS model, the
/// streaming listener, its projection and (late fusion) a logit head.
#[derive(Debug, Clone)]
pub struct LslmModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub(crate) blocks: Vec<BlockNames>,
}

fn weight(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    Tensor::randn(shape, INIT_STD, rng).with_grad()
}

fn zeros(shape: Vec<usize>) -> Tensor {
    Tensor::zeros(shape).with_grad()
}

fn ones(shape: Vec<usize>) -> Tensor {
    Tensor::full(shape, 1.0).with_grad()
}

impl LslmModel {
    /// Full listen-while-speaking model.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut m = Self::vanilla(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(m.config.seed ^ 0x4C15_7E4E);
        m.add_listener(&mut rng)?;
        Ok(m)
    }

    /// Speaking parameters only.
    pub fn vanilla(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let mut p = ParamStore::new();
        p.insert(EMBED, weight(&mut rng, vec![EMBED_ROWS, d]))?;
        p.insert(POS, weight(&mut rng, vec![config.max_seq_len, d]))?;
        p.insert(SPEECH_POS, weight(&mut rng, vec![config.max_seq_len, d]))?;
        let blocks: Vec<BlockNames> = (0..config.n_blocks).map(BlockNames::new).collect();
        for b in &blocks {
            p.insert(&b.ln1_gain, ones(vec![d]))?;
            p.insert(&b.ln1_bias, zeros(vec![d]))?;
            p.insert(&b.qkv_w, weight(&mut rng, vec![d, 3 * d]))?;
            p.insert(&b.qkv_b, zeros(vec![3 * d]))?;
            p.insert(&b.out_w, weight(&mut rng, vec![d, d]))?;
            p.insert(&b.out_b, zeros(vec![d]))?;
            p.insert(&b.ln2_gain, ones(vec![d]))?;
            p.insert(&b.ln2_bias, zeros(vec![d]))?;
            p.insert(&b.fc_w, weight(&mut rng, vec![d, config.d_ff]))?;
            p.insert(&b.fc_b, zeros(vec![config.d_ff]))?;
            p.insert(&b.proj_w, weight(&mut rng, vec![config.d_ff, d]))?;
            p.insert(&b.proj_b, zeros(vec![d]))?;
        }
        p.insert(LNF_GAIN, ones(vec![d]))?;
        p.insert(LNF_BIAS, zeros(vec![d]))?;
        p.insert(HEAD_W, weight(&mut rng, vec![d, SPEAK_VOCAB]))?;
        p.insert(HEAD_B, zeros(vec![SPEAK_VOCAB]))?;
        Ok(Self { config, params: p, blocks })
    }

    /// Streaming encoder parameters alone (plus nothing else).
    pub fn listener_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4C15_7E4E);
        let mut p = ParamStore::new();
        Self::insert_encoder(config, &mut p, &mut rng)?;
        Ok(p)
    }

    fn insert_encoder(config: &ModelConfig, p: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let l = &config.listener;
        p.insert(LISTEN_EMBED, weight(rng, vec![l.listen_vocab_size, l.d_enc]))?;
        for i in 0..l.conv_depth {
            let (w, b) = conv_names(i);
            p.insert(w, weight(rng, vec![l.kernel_size * l.d_enc, l.d_enc]))?;
            p.insert(b, zeros(vec![l.d_enc]))?;
        }
        Ok(())
    }

    fn add_listener(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let cfg = self.config.clone();
        Self::insert_encoder(&cfg, &mut self.params, rng)?;
        self.params.insert(PROJ_W, weight(rng, vec![cfg.listener.d_enc, cfg.d_model]))?;
        self.params.insert(PROJ_B, zeros(vec![cfg.d_model]))?;
        if cfg.fusion == FusionStrategy::Late {
            self.params.insert(LATE_W, weight(rng, vec![cfg.d_model, SPEAK_VOCAB]))?;
        }
        Ok(())
    }

    /// Rebuilds a model around parameters loaded from a checkpoint.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let has_listener = params.contains(PROJ_W);
        let reference = if has_listener { Self::new(config.clone())? } else { Self::vanilla(config.clone())? };
        for (name, t) in reference.params.iter() {
            let got = params
                .get(name)
                .map_err(|_| Error::Checkpoint(format!("missing parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected {:?}, found {:?}",
                    t.shape(),
                    got.shape()
                )));
            }
        }
        let mut params = params;
        for (_, t) in params.iter_mut() {
            t.requires_grad = true;
        }
        Ok(Self { blocks: reference.blocks, config, params })
    }

    pub fn has_listener(&self) -> bool {
        self.params.contains(PROJ_W)
    }

    pub fn fusion(&self) -> FusionStrategy {
        self.config.fusion
    }

    /// Names of every parameter in a group, in store order.
    pub fn group_names(&self, group: ParamGroup) -> Vec<String> {
        self.params.names().filter(|n| ParamGroup::of(n) == Some(group)).cloned().collect()
    }

    /// Checkpoint header metadata: config, fusion, vocabulary version and
    /// the parameter-group manifest.
    pub fn checkpoint_metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": if self.has_listener() { "lslm" } else { "vanilla_tts" },
            "model_config": self.config,
            "fusion": self.config.fusion,
            "vocab_version": crate::vocab::VOCAB_VERSION,
            "groups": {
                "speaking": self.group_names(ParamGroup::Speaking),
                "listening": self.group_names(ParamGroup::Listening),
            },
        })
    }

    // ---- tape forward ---------------------------------------------------

    /// Streaming listener over equal-length symbol streams packed as
    /// `[B·L]`; returns features `[B·L × d_enc]`.
    pub fn encode_listen(&self, tape: &mut Tape, streams: &[Vec<usize>]) -> Result<Var> {
        encode_listen_with(&self.params, &self.config, tape, streams)
    }

    /// Per-frame affine map `d_enc → d_model`.
    pub fn project_listen(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let w = tape.param(&self.params, PROJ_W)?;
        let b = tape.param(&self.params, PROJ_B)?;
        let y = tape.matmul(features, w)?;
        tape.add_row(y, b)
    }

    /// Places frame `j − 1` of each stream at the position predicting
    /// speaking step `j`; context, step-0 and padding positions get zero rows.
    pub fn align_listen(
        &self,
        tape: &mut Tape,
        projected: Var,
        stream_len: usize,
        layouts: &[Layout],
        seq_len: usize,
    ) -> Result<Var> {
        let index = alignment_index(layouts, stream_len, seq_len)?;
        tape.gather_rows(projected, &index)
    }

    /// Listening contribution aligned to `batch`, or `None` in vanilla mode.
    pub fn listen_pathway(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        streams: Option<&[Vec<usize>]>,
    ) -> Result<Option<Var>> {
        let Some(streams) = streams else { return Ok(None) };
        if !self.has_listener() {
            return Err(Error::Contract("vanilla model cannot take a listening stream".into()));
        }
        if streams.len() != batch.layouts.len() {
            return Err(Error::Shape(format!(
                "{} listening streams for a batch of {}",
                streams.len(),
                batch.layouts.len()
            )));
        }
        let len = streams.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let padded: Vec<Vec<usize>> = streams
            .iter()
            .map(|s| {
                let mut p = s.clone();
                p.resize(len, SIL);
                p
            })
            .collect();
        for (s, l) in streams.iter().zip(&batch.layouts) {
            if s.len() + 1 < l.n_predictions() {
                return Err(Error::Alignment(format!(
                    "listening stream of {} frames for {} speaking steps",
                    s.len(),
                    l.n_predictions()
                )));
            }
        }
        let feats = self.encode_listen(tape, &padded)?;
        let proj = self.project_listen(tape, feats)?;
        Ok(Some(self.align_listen(tape, proj, len, &batch.layouts, batch.seq_len)?))
    }

    /// Logits `[B·T × 68]`. With `listen = None` no listening parameter
    /// participates (vanilla TTS mode).
    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        streams: Option<&[Vec<usize>]>,
    ) -> Result<Var> {
        let aligned = self.listen_pathway(tape, batch, streams)?;
        self.forward_aligned(tape, batch, aligned)
    }

    /// Forward pass given an already aligned `[B·T × d_model]` listening
    /// contribution.
    pub fn forward_aligned(&self, tape: &mut Tape, batch: &Batch, aligned: Option<Var>) -> Result<Var> {
        let p = &self.params;
        let t = batch.seq_len;
        if t > self.config.max_seq_len {
            return Err(Error::Length(format!(
                "batch sequence length {t} exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        let embed = tape.param(p, EMBED)?;
        let tok = tape.gather_rows(embed, &batch.rows.iter().map(|&r| Some(r)).collect::<Vec<_>>())?;
        let ctx_table = tape.param(p, POS)?;
        let ctx_pos = tape.gather_rows(ctx_table, &batch.context_pos)?;
        let speech_table = tape.param(p, SPEECH_POS)?;
        let speech_pos = tape.gather_rows(speech_table, &batch.speech_pos)?;
        let x = tape.add(tok, ctx_pos)?;
        let mut x = tape.add(x, speech_pos)?;
        let fusion = self.config.fusion;
        if let (Some(a), FusionStrategy::Early) = (aligned, fusion) {
            x = tape.add(x, a)?;
        }
        for names in &self.blocks {
            if let (Some(a), FusionStrategy::Middle) = (aligned, fusion) {
                x = tape.add(x, a)?;
            }
            x = self.block(tape, names, x, t)?;
        }
        let g = tape.param(p, LNF_GAIN)?;
        let b = tape.param(p, LNF_BIAS)?;
        let h = tape.layer_norm(x, g, b)?;
        let w = tape.param(p, HEAD_W)?;
        let hb = tape.param(p, HEAD_B)?;
        let logits = tape.matmul(h, w)?;
        let mut logits = tape.add_row(logits, hb)?;
        if let (Some(a), FusionStrategy::Late) = (aligned, fusion) {
            let lw = tape.param(p, LATE_W)?;
            let extra = tape.matmul(a, lw)?;
            logits = tape.add(logits, extra)?;
        }
        Ok(logits)
    }

    fn block(&self, tape: &mut Tape, n: &BlockNames, x: Var, seq_len: usize) -> Result<Var> {
        let p = &self.params;
        let g1 = tape.param(p, &n.ln1_gain)?;
        let b1 = tape.param(p, &n.ln1_bias)?;
        let h = tape.layer_norm(x, g1, b1)?;
        let wqkv = tape.param(p, &n.qkv_w)?;
        let bqkv = tape.param(p, &n.qkv_b)?;
        let qkv = tape.matmul(h, wqkv)?;
        let qkv = tape.add_row(qkv, bqkv)?;
        let att = tape.causal_attention(qkv, seq_len, self.config.n_heads)?;
        let wo = tape.param(p, &n.out_w)?;
        let bo = tape.param(p, &n.out_b)?;
        let o = tape.matmul(att, wo)?;
        let o = tape.add_row(o, bo)?;
        let x = tape.add(x, o)?;
        let g2 = tape.param(p, &n.ln2_gain)?;
        let b2 = tape.param(p, &n.ln2_bias)?;
        let h = tape.layer_norm(x, g2, b2)?;
        let w1 = tape.param(p, &n.fc_w)?;
        let bf = tape.param(p, &n.fc_b)?;
        let f = tape.matmul(h, w1)?;
        let f = tape.add_row(f, bf)?;
        let f = tape.gelu(f);
        let w2 = tape.param(p, &n.proj_w)?;
        let bp = tape.param(p, &n.proj_b)?;
        let f = tape.matmul(f, w2)?;
        let f = tape.add_row(f, bp)?;
        tape.add(x, f)
    }
}

/// Streaming encoder forward using parameters from any store that holds
/// the `listen.encoder.*` tensors.
pub fn encode_listen_with(
    params: &ParamStore,
    config: &ModelConfig,
    tape: &mut Tape,
    streams: &[Vec<usize>],
) -> Result<Var> {
    let l = &config.listener;
    let len = streams.first().map(Vec::len).unwrap_or(0);
    if len == 0 || streams.iter().any(|s| s.len() != len) {
        return Err(Error::Shape("listening streams must be non-empty and equal length".into()));
    }
    let mut index = Vec::with_capacity(streams.len() * len);
    for s in streams {
        for &sym in s {
            if sym >= l.listen_vocab_size {
                return Err(Error::Index(format!(
                    "listening symbol {sym} outside vocabulary of {}",
                    l.listen_vocab_size
                )));
            }
            index.push(Some(sym));
        }
    }
    let table = tape.param(params, LISTEN_EMBED)?;
    let mut h = tape.gather_rows(table, &index)?;
    for i in 0..l.conv_depth {
        let (wn, bn) = conv_names(i);
        let win = tape.causal_window(h, len, l.kernel_size)?;
        let w = tape.param(params, &wn)?;
        let b = tape.param(params, &bn)?;
        let c = tape.matmul(win, w)?;
        let c = tape.add_row(c, b)?;
        let c = tape.gelu(c);
        h = tape.add(h, c)?;
    }
    Ok(h)
}

/// Gather index mapping packed `[B·L]` listening frames onto `[B·T]`
/// sequence positions: step `j` receives frame `j − 1`.
pub fn alignment_index(
    layouts: &[Layout],
    stream_len: usize,
    seq_len: usize,
) -> Result<Vec<Option<usize>>> {
    let mut index = vec![None; layouts.len() * seq_len];
    for (b, l) in layouts.iter().enumerate() {
        let frames = l.n_predictions() - 1;
        if stream_len < frames {
            return Err(Error::Alignment(format!(
                "listening stream of {stream_len} frames for {} speaking steps",
                l.n_predictions()
            )));
        }
        for j in 1..l.n_predictions() {
            index[b * seq_len + l.prefix_len() + j] = Some(b * stream_len + j - 1);
        }
    }
    Ok(index)
}

/// Padded, packed batch of layouts.
#[derive(Debug, Clone)]
pub struct Batch {
    pub layouts: Vec<Layout>,
    pub seq_len: usize,
    /// Embedding rows, `[B·T]`.
    pub rows: Vec<usize>,
    /// Next-token targets, `[B·T]` (0 where masked).
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
    /// Context-segment position of each row, `None` outside the context.
    pub context_pos: Vec<Option<usize>>,
    /// Speech-segment position (0 at BOS), `None` in the context.
    pub speech_pos: Vec<Option<usize>>,
}

impl Batch {
    pub fn new(layouts: Vec<Layout>) -> Self {
        let seq_len = layouts.iter().map(Layout::len).max().unwrap_or(1).max(1);
        let mut rows = Vec::with_capacity(layouts.len() * seq_len);
        let mut targets = Vec::with_capacity(layouts.len() * seq_len);
        let mut mask = Vec::with_capacity(layouts.len() * seq_len);
        let mut context_pos = Vec::with_capacity(layouts.len() * seq_len);
        let mut speech_pos = Vec::with_capacity(layouts.len() * seq_len);
        for l in &layouts {
            let n = l.prefix_len();
            for i in 0..seq_len {
                context_pos.push((i < n).then_some(i));
                speech_pos.push((i >= n).then(|| i - n));
            }
            let r = l.embed_rows();
            let pad = seq_len - r.len();
            rows.extend(r);
            rows.extend(std::iter::repeat_n(SPAD, pad));
            for t in l.position_targets() {
                targets.push(t.unwrap_or(0));
                mask.push(t.is_some());
            }
            targets.extend(std::iter::repeat_n(0, pad));
            mask.extend(std::iter::repeat_n(false, pad));
        }
        Self { layouts, seq_len, rows, targets, mask, context_pos, speech_pos }
    }

    pub fn len(&self) -> usize {
        self.layouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layouts.is_empty()
    }

    /// Number of loss terms.
    pub fn terms(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}
