use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ListeningInit, SpeakingInit, TrainConfig};
use super::history::{EpochRecord, StepRecord, TrainLog};
use super::schedule::Schedule;
use crate::error::{Error, Result};
use crate::model::{
    encode_listen_with, fdm_loss, load_listener, tts_loss, LossOutput, LslmModel, ModelConfig,
    ENCODER_GROUP, SPEAKING_GROUP,
};
use crate::tensor::{AdamWConfig, AdamWState, ParamStore, Tape, Tensor};
use crate::vocab::{ListenClass, SIL};
use crate::world::SampleRecord;

/// A finished run: the lowest-validation-loss parameters and the log.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: LslmModel,
    pub log: TrainLog,
}

/// Result of listener pretraining: encoder weights only.
#[derive(Debug, Clone)]
pub struct ListenerRun {
    pub encoder: ParamStore,
    pub log: TrainLog,
    /// Frame-classification accuracy of the retained weights on the
    /// validation streams.
    pub val_accuracy: f32,
}

/// Pretrained weights available to [`train_lslm`].
#[derive(Debug, Clone, Default)]
pub struct Pretrained {
    /// Speaking parameters (a vanilla TTS checkpoint).
    pub tts: Option<ParamStore>,
    /// `listen.encoder.*` parameters.
    pub listener: Option<ParamStore>,
}

impl Pretrained {
    /// Reads the checkpoints the init modes need. Scratch modes ignore their
    /// path even when one is given.
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        cfg.require_paths()?;
        let tts = match (cfg.speaking_init, &cfg.pretrained_tts) {
            (SpeakingInit::Scratch, _) => None,
            (_, Some(p)) => Some(LslmModel::load(p)?.params.subset(SPEAKING_GROUP)),
            (_, None) => unreachable!("checked by require_paths"),
        };
        let listener = match (cfg.listening_init, &cfg.pretrained_listener) {
            (ListeningInit::Scratch, _) => None,
            (_, Some(p)) => Some(load_listener(p)?),
            (_, None) => unreachable!("checked by require_paths"),
        };
        Ok(Self { tts, listener })
    }
}

fn val_slice<'a>(cfg: &TrainConfig, val: &'a [SampleRecord]) -> &'a [SampleRecord] {
    match cfg.val_limit {
        Some(n) => &val[..n.min(val.len())],
        None => val,
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shared optimization loop: shuffled mini-batches, warm-up + cosine
/// schedule, global-norm clipping, AdamW, and validation after every epoch
/// with the best parameters kept.
fn optimize<S>(
    cfg: &TrainConfig,
    n_train: usize,
    state: &mut S,
    params: fn(&mut S) -> &mut ParamStore,
    mut batch_loss: impl FnMut(&S, &[usize]) -> Result<LossOutput>,
    mut validate: impl FnMut(&S) -> Result<f32>,
) -> Result<(TrainLog, ParamStore)> {
    if n_train == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    cfg.validate(n_train)?;
    let total = cfg.resolved_total_steps(n_train);
    let schedule = Schedule::new(cfg.lr_max, cfg.warmup_steps, total)?;
    let mut opt = AdamWState::new(AdamWConfig { lr: cfg.lr_max, ..AdamWConfig::default() });
    let mut log = TrainLog::default();
    let mut best = params(state).clone();
    let steps_per_epoch = cfg.steps_per_epoch(n_train);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut step = 0;
    let mut epoch = 0;
    while step < total {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        for chunk in order.chunks(cfg.batch_size).take(steps_per_epoch) {
            if step == total {
                break;
            }
            let out = batch_loss(state, chunk)?;
            let p = params(state);
            let loss = out.backward_mean_into(p)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {step}")));
            }
            let grad_norm = if cfg.grad_clip > 0.0 { p.clip_grad_norm(cfg.grad_clip) } else { p.global_grad_norm() };
            let lr = schedule.lr_at(step + 1)?;
            opt.step(p, lr)?;
            step += 1;
            if step % cfg.log_every.max(1) == 0 || step == total {
                log.steps.push(StepRecord { step, loss, lr, grad_norm });
            }
            if step % 100 == 0 {
                log::debug!("step {step}/{total} loss {loss:.4} lr {lr:.2e}");
            }
        }
        let val_loss = validate(state)?;
        log::info!("epoch {epoch} step {step} val_loss {val_loss:.5}");
        if log.push_epoch(EpochRecord { epoch, step, val_loss }) {
            best = params(state).clone();
        }
        epoch += 1;
    }
    Ok((log, best))
}

/// Mean per-term loss over `records` in chunks of `batch`.
pub fn mean_loss(
    records: &[SampleRecord],
    batch: usize,
    mut f: impl FnMut(&[&SampleRecord]) -> Result<LossOutput>,
) -> Result<f32> {
    let mut sum = 0.0f64;
    let mut terms = 0usize;
    for chunk in records.chunks(batch.max(1)) {
        let refs: Vec<&SampleRecord> = chunk.iter().collect();
        let out = f(&refs)?;
        sum += f64::from(out.value());
        terms += out.terms;
    }
    Ok((sum / terms.max(1) as f64) as f32)
}

/// Vanilla TTS loss (mean per term) of a model over records.
pub fn tts_val_loss(model: &LslmModel, records: &[SampleRecord], batch: usize) -> Result<f32> {
    mean_loss(records, batch, |r| tts_loss(model, r))
}

/// Duplex loss (mean per term) of a model over records.
pub fn fdm_val_loss(model: &LslmModel, records: &[SampleRecord], mu: usize, batch: usize) -> Result<f32> {
    mean_loss(records, batch, |r| fdm_loss(model, r, mu))
}

/// Trains the speaking backbone alone with the EOS-terminated loss.
/// Listening streams are ignored.
pub fn pretrain_tts(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    train: &[SampleRecord],
    val: &[SampleRecord],
) -> Result<TrainRun> {
    let mut model = LslmModel::vanilla(model_cfg.clone())?;
    let val = val_slice(cfg, val);
    let (log, best) = optimize(
        cfg,
        train.len(),
        &mut model,
        |m| &mut m.params,
        |m, idx| {
            let refs: Vec<&SampleRecord> = idx.iter().map(|&i| &train[i]).collect();
            tts_loss(m, &refs)
        },
        |m| tts_val_loss(m, val, cfg.batch_size),
    )?;
    model.params = best;
    Ok(TrainRun { model, log })
}

const CLASSIFIER_W: &str = "listen.classifier.weight";
const CLASSIFIER_B: &str = "listen.classifier.bias";

struct ListenerProxy {
    config: ModelConfig,
    params: ParamStore,
}

/// Streams padded with SIL to a common length plus per-frame class labels
/// and a mask over real frames.
fn frame_batch(records: &[&SampleRecord]) -> (Vec<Vec<usize>>, Vec<usize>, Vec<bool>) {
    let len = records.iter().map(|r| r.listen.len()).max().unwrap_or(0);
    let mut streams = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len() * len);
    let mut mask = Vec::with_capacity(records.len() * len);
    for r in records {
        let mut s = r.listen.clone();
        for &sym in &s {
            labels.push(ListenClass::of(sym).map(ListenClass::index).unwrap_or(0));
            mask.push(true);
        }
        labels.extend(std::iter::repeat_n(0, len - s.len()));
        mask.extend(std::iter::repeat_n(false, len - s.len()));
        s.resize(len, SIL);
        streams.push(s);
    }
    (streams, labels, mask)
}

fn classifier_logits(p: &ListenerProxy, tape: &mut Tape, streams: &[Vec<usize>]) -> Result<crate::tensor::Var> {
    let h = encode_listen_with(&p.params, &p.config, tape, streams)?;
    let w = tape.param(&p.params, CLASSIFIER_W)?;
    let b = tape.param(&p.params, CLASSIFIER_B)?;
    let y = tape.matmul(h, w)?;
    tape.add_row(y, b)
}

fn classifier_loss(p: &ListenerProxy, records: &[&SampleRecord]) -> Result<LossOutput> {
    let (streams, labels, mask) = frame_batch(records);
    let mut tape = Tape::new();
    let logits = classifier_logits(p, &mut tape, &streams)?;
    let loss = tape.cross_entropy(logits, &labels, &mask)?;
    let terms = mask.iter().filter(|m| **m).count();
    Ok(LossOutput { tape, loss, terms, sample_terms: records.iter().map(|r| r.listen.len()).collect() })
}

fn classifier_accuracy(p: &ListenerProxy, records: &[SampleRecord], batch: usize) -> Result<f32> {
    let (mut hit, mut total) = (0usize, 0usize);
    for chunk in records.chunks(batch.max(1)) {
        let refs: Vec<&SampleRecord> = chunk.iter().collect();
        let (streams, labels, mask) = frame_batch(&refs);
        let mut tape = Tape::new();
        let logits = classifier_logits(p, &mut tape, &streams)?;
        let v = tape.value(logits);
        let k = ListenClass::COUNT;
        for (i, (&label, &m)) in labels.iter().zip(&mask).enumerate() {
            if !m {
                continue;
            }
            let row = &v[i * k..(i + 1) * k];
            let arg = (0..k).fold(0, |a, j| if row[j] > row[a] { j } else { a });
            hit += usize::from(arg == label);
            total += 1;
        }
    }
    Ok(hit as f32 / total.max(1) as f32)
}

/// Trains the streaming encoder on per-frame silence/noise/command
/// classification and exports the encoder weights; the classifier head is
/// discarded.
pub fn pretrain_listener(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    train: &[SampleRecord],
    val: &[SampleRecord],
) -> Result<ListenerRun> {
    let mut params = LslmModel::listener_params(model_cfg, model_cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(model_cfg.seed ^ 0xC1A5_5EED);
    let d_enc = model_cfg.listener.d_enc;
    params.insert(CLASSIFIER_W, Tensor::randn(vec![d_enc, ListenClass::COUNT], 0.02, &mut rng).with_grad())?;
    params.insert(CLASSIFIER_B, Tensor::zeros(vec![ListenClass::COUNT]).with_grad())?;
    let mut proxy = ListenerProxy { config: model_cfg.clone(), params };
    let val = val_slice(cfg, val);
    let (log, best) = optimize(
        cfg,
        train.len(),
        &mut proxy,
        |p| &mut p.params,
        |p, idx| {
            let refs: Vec<&SampleRecord> = idx.iter().map(|&i| &train[i]).collect();
            classifier_loss(p, &refs)
        },
        |p| mean_loss(val, cfg.batch_size, |r| classifier_loss(p, r)),
    )?;
    proxy.params = best;
    let val_accuracy = classifier_accuracy(&proxy, val, cfg.batch_size)?;
    Ok(ListenerRun { encoder: proxy.params.subset(ENCODER_GROUP), log, val_accuracy })
}

/// Builds the duplex model for the configured init modes: loads and
/// (optionally) freezes the speaking backbone and listener encoder.
pub fn init_lslm(cfg: &TrainConfig, model_cfg: &ModelConfig, pretrained: &Pretrained) -> Result<LslmModel> {
    let mut model = LslmModel::new(model_cfg.clone())?;
    if cfg.speaking_init != SpeakingInit::Scratch {
        let tts = pretrained.tts.as_ref().ok_or_else(|| {
            Error::Config(format!("speaking_init {:?} requires a pretrained TTS checkpoint", cfg.speaking_init))
        })?;
        model.params.load_values(&tts.subset(SPEAKING_GROUP))?;
        if cfg.speaking_init == SpeakingInit::Frozen {
            model.params.set_trainable(SPEAKING_GROUP, false);
        }
    }
    if cfg.listening_init != ListeningInit::Scratch {
        let enc = pretrained.listener.as_ref().ok_or_else(|| {
            Error::Config(format!("listening_init {:?} requires a pretrained listener checkpoint", cfg.listening_init))
        })?;
        model.params.load_values(&enc.subset(ENCODER_GROUP))?;
        if cfg.listening_init == ListeningInit::Frozen {
            model.params.set_trainable(ENCODER_GROUP, false);
        }
    }
    Ok(model)
}

/// Trains the listen-while-speaking model with the duplex loss and keeps
/// the checkpoint with the lowest validation duplex loss.
pub fn train_lslm(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    mu: usize,
    pretrained: &Pretrained,
    train: &[SampleRecord],
    val: &[SampleRecord],
) -> Result<TrainRun> {
    let mut model = init_lslm(cfg, model_cfg, pretrained)?;
    let val = val_slice(cfg, val);
    let (log, best) = optimize(
        cfg,
        train.len(),
        &mut model,
        |m| &mut m.params,
        |m, idx| {
            let refs: Vec<&SampleRecord> = idx.iter().map(|&i| &train[i]).collect();
            fdm_loss(m, &refs, mu)
        },
        |m| fdm_val_loss(m, val, mu, cfg.batch_size),
    )?;
    model.params = best;
    Ok(TrainRun { model, log })
}
