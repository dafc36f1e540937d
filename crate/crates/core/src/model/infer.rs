//! Incremental (one position at a time) evaluation: a key/value cache for
//! the backbone and a left-context buffer for the streaming listener.

use std::collections::VecDeque;

use super::config::FusionStrategy;
use super::lslm::*;
use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, MatRef};
use crate::tensor::{gelu_scalar, layer_norm_row, softmax_in_place, Tensor};
use crate::vocab::SPEAK_VOCAB;

fn vecmat(x: &[f32], w: &Tensor) -> Vec<f32> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(x.len(), k);
    let mut out = vec![0.0; n];
    gemm(1.0, MatRef::new(x, 1, k), MatRef::new(w.data(), k, n), 0.0, &mut out, n);
    out
}

fn linear(x: &[f32], w: &Tensor, b: &Tensor) -> Vec<f32> {
    let mut y = vecmat(x, w);
    y.iter_mut().zip(b.data()).for_each(|(a, c)| *a += c);
    y
}

/// Appended keys and values of every block.
#[derive(Debug, Clone)]
pub struct DecoderCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
    context_len: usize,
}

impl DecoderCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Left context of each causal convolution layer.
#[derive(Debug, Clone)]
pub struct ListenerState {
    history: Vec<VecDeque<Vec<f32>>>,
    frames: usize,
}

impl ListenerState {
    pub fn frames(&self) -> usize {
        self.frames
    }
}

impl LslmModel {
    pub fn new_cache(&self) -> DecoderCache {
        let n = self.config.n_blocks;
        DecoderCache { keys: vec![Vec::new(); n], values: vec![Vec::new(); n], len: 0, context_len: 0 }
    }

    /// Logits for the next position given its embedding row and, in
    /// listening mode, its projected listening vector. Context rows advance
    /// the context segment; speaking rows the speech segment.
    pub fn decode_step(
        &self,
        cache: &mut DecoderCache,
        embed_row: usize,
        listen: Option<&[f32]>,
    ) -> Result<Vec<f32>> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let pos = cache.len;
        if pos >= cfg.max_seq_len {
            return Err(Error::Length(format!("position {pos} exceeds max_seq_len {}", cfg.max_seq_len)));
        }
        if embed_row >= EMBED_ROWS {
            return Err(Error::Index(format!("embedding row {embed_row}")));
        }
        if let Some(l) = listen {
            if !self.has_listener() {
                return Err(Error::Contract("vanilla model cannot take a listening vector".into()));
            }
            if l.len() != d {
                return Err(Error::Shape(format!("listening vector of {} for d_model {d}", l.len())));
            }
        }
        let p = &self.params;
        let emb = p.get(EMBED)?.data();
        let (table, seg_pos) = if embed_row >= SPEAK_VOCAB {
            if cache.context_len < cache.len {
                return Err(Error::Contract("context token after the speech segment began".into()));
            }
            (POS, cache.context_len)
        } else {
            (SPEECH_POS, pos - cache.context_len)
        };
        let pe = p.get(table)?.data();
        let mut x: Vec<f32> = (0..d).map(|i| emb[embed_row * d + i] + pe[seg_pos * d + i]).collect();
        let add = |x: &mut Vec<f32>, v: &[f32]| x.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        if let (Some(l), FusionStrategy::Early) = (listen, cfg.fusion) {
            add(&mut x, l);
        }
        let heads = cfg.n_heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let mut h = vec![0.0; d];
        for (bi, n) in self.blocks.iter().enumerate() {
            if let (Some(l), FusionStrategy::Middle) = (listen, cfg.fusion) {
                add(&mut x, l);
            }
            layer_norm_row(&x, p.get(&n.ln1_gain)?.data(), p.get(&n.ln1_bias)?.data(), &mut h);
            let qkv = linear(&h, p.get(&n.qkv_w)?, p.get(&n.qkv_b)?);
            cache.keys[bi].extend_from_slice(&qkv[d..2 * d]);
            cache.values[bi].extend_from_slice(&qkv[2 * d..]);
            let keys = &cache.keys[bi];
            let values = &cache.values[bi];
            let n_pos = pos + 1;
            let mut att = vec![0.0; d];
            let mut scores = vec![0.0; n_pos];
            for hh in 0..heads {
                let q = &qkv[hh * hd..(hh + 1) * hd];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &keys[j * d + hh * hd..j * d + (hh + 1) * hd];
                    *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                softmax_in_place(&mut scores);
                let o = &mut att[hh * hd..(hh + 1) * hd];
                for (j, &w) in scores.iter().enumerate() {
                    let v = &values[j * d + hh * hd..j * d + (hh + 1) * hd];
                    o.iter_mut().zip(v).for_each(|(a, b)| *a += w * b);
                }
            }
            let o = linear(&att, p.get(&n.out_w)?, p.get(&n.out_b)?);
            add(&mut x, &o);
            layer_norm_row(&x, p.get(&n.ln2_gain)?.data(), p.get(&n.ln2_bias)?.data(), &mut h);
            let mut f = linear(&h, p.get(&n.fc_w)?, p.get(&n.fc_b)?);
            f.iter_mut().for_each(|v| *v = gelu_scalar(*v));
            let f = linear(&f, p.get(&n.proj_w)?, p.get(&n.proj_b)?);
            add(&mut x, &f);
        }
        layer_norm_row(&x, p.get(LNF_GAIN)?.data(), p.get(LNF_BIAS)?.data(), &mut h);
        let mut logits = linear(&h, p.get(HEAD_W)?, p.get(HEAD_B)?);
        if let (Some(l), FusionStrategy::Late) = (listen, cfg.fusion) {
            let extra = vecmat(l, p.get(LATE_W)?);
            add(&mut logits, &extra);
        }
        cache.len += 1;
        if embed_row >= SPEAK_VOCAB {
            cache.context_len += 1;
        }
        Ok(logits)
    }

    pub fn new_listener_state(&self) -> ListenerState {
        let l = &self.config.listener;
        let zeros = vec![0.0; l.d_enc];
        let history = (0..l.conv_depth)
            .map(|_| std::iter::repeat_n(zeros.clone(), l.kernel_size - 1).collect())
            .collect();
        ListenerState { history, frames: 0 }
    }

    /// Encodes one more frame; equals row `t` of the whole-stream encoding.
    pub fn listen_step(&self, state: &mut ListenerState, symbol: usize) -> Result<Vec<f32>> {
        let l = &self.config.listener;
        if symbol >= l.listen_vocab_size {
            return Err(Error::Index(format!(
                "listening symbol {symbol} outside vocabulary of {}",
                l.listen_vocab_size
            )));
        }
        let p = &self.params;
        let c = l.d_enc;
        let table = p.get(LISTEN_EMBED)?.data();
        let mut h = table[symbol * c..(symbol + 1) * c].to_vec();
        let mut window = Vec::with_capacity(l.kernel_size * c);
        for (i, hist) in state.history.iter_mut().enumerate() {
            window.clear();
            for past in hist.iter() {
                window.extend_from_slice(past);
            }
            window.extend_from_slice(&h);
            let (wn, bn) = conv_names(i);
            let mut conv = linear(&window, p.get(&wn)?, p.get(&bn)?);
            conv.iter_mut().for_each(|v| *v = gelu_scalar(*v));
            if l.kernel_size > 1 {
                hist.pop_front();
                hist.push_back(h.clone());
            }
            h.iter_mut().zip(&conv).for_each(|(a, b)| *a += b);
        }
        state.frames += 1;
        Ok(h)
    }

    /// Projection of one feature frame into the backbone width.
    pub fn project_frame(&self, features: &[f32]) -> Result<Vec<f32>> {
        Ok(linear(features, self.params.get(PROJ_W)?, self.params.get(PROJ_B)?))
    }
}
