use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::{aggregate, classify_outcome, edit_distance, is_premature, ConfusionCounts, Metrics, Outcome};
use crate::error::{Error, Result};
use crate::model::LslmModel;
use crate::runtime::{run_offline, OfflineResult, SamplerConfig, Stop};
use crate::seed::item_seed;
use crate::world::{Codebook, Dataset, SampleRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsItem {
    pub context: String,
    pub transcript: String,
    pub token_edits: usize,
    pub ref_tokens: usize,
    pub char_edits: usize,
    pub ref_chars: usize,
    pub stop: Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsEvalReport {
    /// Total token edits over total reference tokens.
    pub token_error_rate: f32,
    /// Total character edits over total context characters.
    pub transcript_error_rate: f32,
    pub n_utterances: usize,
    pub items: Vec<TtsItem>,
}

/// Generates every context against an all-silence listening stream (the
/// vanilla model ignores it) and scores the decoded speech.
pub fn run_tts_eval(
    model: &Arc<LslmModel>,
    records: &[SampleRecord],
    codebook: &Codebook,
    sampler: SamplerConfig,
) -> Result<TtsEvalReport> {
    let mut items = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let cfg = sampler.with_seed(item_seed(sampler.seed, i as u64));
        let out = run_offline(model, &r.context, &[], cfg)?;
        let hyp = out.speech();
        let (transcript, _) = codebook.invert(hyp);
        let h: Vec<char> = transcript.chars().collect();
        let c: Vec<char> = r.context.chars().collect();
        items.push(TtsItem {
            context: r.context.clone(),
            token_edits: edit_distance(hyp, &r.speak_target),
            ref_tokens: r.speak_target.len(),
            char_edits: edit_distance(&h, &c),
            ref_chars: c.len(),
            transcript,
            stop: out.stop,
        });
    }
    let sum = |f: fn(&TtsItem) -> usize| items.iter().map(f).sum::<usize>();
    let (te, tr, ce, cr) = (sum(|i| i.token_edits), sum(|i| i.ref_tokens), sum(|i| i.char_edits), sum(|i| i.ref_chars));
    Ok(TtsEvalReport {
        token_error_rate: te as f32 / tr.max(1) as f32,
        transcript_error_rate: ce as f32 / cr.max(1) as f32,
        n_utterances: items.len(),
        items,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Clean,
    Noise,
}

impl Condition {
    pub fn records(self, data: &Dataset) -> &[SampleRecord] {
        match self {
            Self::Clean => &data.test,
            Self::Noise => &data.test_noise,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Clean => "clean",
            Self::Noise => "noise",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clean" => Ok(Self::Clean),
            "noise" => Ok(Self::Noise),
            _ => Err(Error::Config(format!("unknown condition {s:?} (expected clean or noise)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveItem {
    pub context: String,
    pub onset: Option<usize>,
    pub stop: Stop,
    pub outcome: Outcome,
    /// IRQ before the onset; included in `fn`.
    pub premature: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveReport {
    pub condition: Condition,
    pub window: usize,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub premature_stops: usize,
    pub items: Vec<InteractiveItem>,
}

/// Scores finished runs against their records.
pub fn score_interactive(
    records: &[SampleRecord],
    results: &[OfflineResult],
    condition: Condition,
    window: usize,
) -> Result<InteractiveReport> {
    if records.len() != results.len() {
        return Err(Error::Contract(format!("{} records but {} results", records.len(), results.len())));
    }
    let mut items = Vec::with_capacity(records.len());
    for (r, out) in records.iter().zip(results) {
        let outcome = classify_outcome(r.interrupted(), r.onset, Some(out.stop), window)?;
        let premature = is_premature(r.onset, Some(out.stop));
        if premature {
            log::info!("premature IRQ at step {} before onset {:?} for {:?}", out.stop.step, r.onset, r.context);
        }
        items.push(InteractiveItem { context: r.context.clone(), onset: r.onset, stop: out.stop, outcome, premature });
    }
    let counts: ConfusionCounts = items.iter().map(|i| i.outcome).collect();
    Ok(InteractiveReport {
        condition,
        window,
        metrics: aggregate(&counts),
        counts,
        premature_stops: items.iter().filter(|i| i.premature).count(),
        items,
    })
}

/// Lockstep run of every record; results carry the record's onset.
pub fn run_items(model: &Arc<LslmModel>, records: &[SampleRecord], sampler: SamplerConfig) -> Result<Vec<OfflineResult>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut out = run_offline(model, &r.context, &r.listen, sampler.with_seed(item_seed(sampler.seed, i as u64)))?;
            out.onset = r.onset;
            Ok(out)
        })
        .collect()
}

/// Runs and scores the interactive set of one condition.
pub fn run_interactive_eval(
    model: &Arc<LslmModel>,
    records: &[SampleRecord],
    condition: Condition,
    window: usize,
    sampler: SamplerConfig,
) -> Result<(InteractiveReport, Vec<OfflineResult>)> {
    let results = run_items(model, records, sampler)?;
    Ok((score_interactive(records, &results, condition, window)?, results))
}
