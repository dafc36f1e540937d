use super::layout::{context_ids, Layout};
use super::lslm::{Batch, LslmModel};
use crate::error::Result;
use crate::tensor::{ParamStore, Tape, Var};
use crate::world::SampleRecord;

/// A recorded loss ready for differentiation.
pub struct LossOutput {
    pub tape: Tape,
    pub loss: Var,
    /// Number of summed cross-entropy terms.
    pub terms: usize,
    /// Terms contributed by each sample, in batch order.
    pub sample_terms: Vec<usize>,
}

impl LossOutput {
    pub fn value(&self) -> f32 {
        self.tape.value(self.loss)[0]
    }

    /// Back-propagates and adds parameter gradients into `params`.
    pub fn backward_into(mut self, params: &mut ParamStore) -> Result<f32> {
        let v = self.value();
        self.tape.backward(self.loss)?;
        self.tape.accumulate_into(params)?;
        Ok(v)
    }

    /// Like [`LossOutput::backward_into`] for the mean over terms.
    pub fn backward_mean_into(mut self, params: &mut ParamStore) -> Result<f32> {
        let n = self.terms.max(1) as f32;
        let mean = self.tape.scale(self.loss, 1.0 / n);
        let v = self.tape.value(mean)[0];
        self.tape.backward(mean)?;
        self.tape.accumulate_into(params)?;
        Ok(v)
    }
}

/// Whether the listening channel participates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListenMode {
    Vanilla,
    Lslm,
}

/// Summed next-token cross-entropy over the speaking region of each
/// record's layout for the given terminal-carrying targets.
pub fn sequence_loss(
    model: &LslmModel,
    records: &[&SampleRecord],
    targets: &[Vec<usize>],
    mode: ListenMode,
) -> Result<LossOutput> {
    let max = model.config.max_seq_len;
    let layouts = records
        .iter()
        .zip(targets)
        .map(|(r, t)| Layout::with_target(&context_ids(&r.context)?, t, max))
        .collect::<Result<Vec<_>>>()?;
    let sample_terms = layouts.iter().map(Layout::n_predictions).collect();
    let batch = Batch::new(layouts);
    let mut tape = Tape::new();
    let streams: Vec<Vec<usize>>;
    let listen = match mode {
        ListenMode::Vanilla => None,
        ListenMode::Lslm => {
            streams = records.iter().map(|r| r.listen.clone()).collect();
            Some(&streams[..])
        }
    };
    let logits = model.forward(&mut tape, &batch, listen)?;
    let loss = tape.cross_entropy(logits, &batch.targets, &batch.mask)?;
    Ok(LossOutput { tape, loss, terms: batch.terms(), sample_terms })
}

/// Speaking-only loss: every target runs through EOS.
pub fn tts_loss(model: &LslmModel, records: &[&SampleRecord]) -> Result<LossOutput> {
    tts_loss_in(model, records, ListenMode::Vanilla)
}

/// EOS-terminated loss evaluated in either mode.
pub fn tts_loss_in(model: &LslmModel, records: &[&SampleRecord], mode: ListenMode) -> Result<LossOutput> {
    let targets: Vec<Vec<usize>> = records
        .iter()
        .map(|r| {
            let mut t = r.speak_target.clone();
            t.push(crate::vocab::EOS);
            t
        })
        .collect();
    sequence_loss(model, records, &targets, mode)
}

/// Piecewise duplex loss: through IRQ (onset + μ) for interrupted records,
/// through EOS otherwise.
pub fn fdm_loss(model: &LslmModel, records: &[&SampleRecord], mu: usize) -> Result<LossOutput> {
    let targets = records
        .iter()
        .map(|r| r.training_target(mu))
        .collect::<Result<Vec<_>>>()?;
    sequence_loss(model, records, &targets, ListenMode::Lslm)
}
