use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::{Stop, StopReason};
use crate::world::Codebook;

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over `max(1, |reference|)`.
pub fn token_error_rate(hyp: &[usize], reference: &[usize]) -> f32 {
    edit_distance(hyp, reference) as f32 / reference.len().max(1) as f32
}

/// Character edits between the decoded hypothesis and the context.
pub fn transcript_edits(hyp: &[usize], context: &str, codebook: &Codebook) -> usize {
    let (text, _) = codebook.invert(hyp);
    let h: Vec<char> = text.chars().collect();
    let r: Vec<char> = context.chars().collect();
    edit_distance(&h, &r)
}

/// Decodes `hyp` through the codebook and compares it with the context
/// character by character.
pub fn transcript_error_rate(hyp: &[usize], context: &str, codebook: &Codebook) -> f32 {
    transcript_edits(hyp, context, codebook) as f32 / context.chars().count().max(1) as f32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Tp,
    Fn,
    Fp,
    Tn,
}

/// Scores one interactive item. An interrupted item is a hit only when it
/// stops with IRQ inside the closed window `[onset, onset + window]`.
pub fn classify_outcome(interrupted: bool, onset: Option<usize>, stop: Option<Stop>, window: usize) -> Result<Outcome> {
    match (interrupted, onset) {
        (true, None) => Err(Error::Contract("interrupted item without onset".into())),
        (false, Some(_)) => Err(Error::Contract("onset given for a non-interrupted item".into())),
        (true, Some(o)) => Ok(match stop {
            Some(Stop { reason: StopReason::Irq, step }) if (o..=o + window).contains(&step) => Outcome::Tp,
            _ => Outcome::Fn,
        }),
        (false, None) => Ok(match stop {
            Some(Stop { reason: StopReason::Irq, .. }) => Outcome::Fp,
            _ => Outcome::Tn,
        }),
    }
}

/// True for an IRQ stop strictly before the onset (scored FN, counted apart).
pub fn is_premature(onset: Option<usize>, stop: Option<Stop>) -> bool {
    matches!((onset, stop), (Some(o), Some(Stop { reason: StopReason::Irq, step })) if step < o)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Tp => self.tp += 1,
            Outcome::Fn => self.fn_ += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Tn => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

impl FromIterator<Outcome> for ConfusionCounts {
    fn from_iter<I: IntoIterator<Item = Outcome>>(iter: I) -> Self {
        let mut c = Self::default();
        iter.into_iter().for_each(|o| c.add(o));
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f32,
    pub recall: f32,
    pub f1: f32,
    /// Quantities that fell back to 0 on a zero denominator.
    pub flags: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        log::warn!("{name}: zero denominator, reported as 0");
        flags.push(format!("{name}: zero denominator"));
        0.0
    } else {
        num / den
    }
}

pub fn aggregate(c: &ConfusionCounts) -> Metrics {
    let mut flags = Vec::new();
    let p = ratio(c.tp as f64, (c.tp + c.fp) as f64, "precision", &mut flags);
    let r = ratio(c.tp as f64, (c.tp + c.fn_) as f64, "recall", &mut flags);
    let f1 = ratio(2.0 * p * r, p + r, "f1", &mut flags);
    Metrics { precision: p as f32, recall: r as f32, f1: f1 as f32, flags }
}
