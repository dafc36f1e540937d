use crate::error::{Error, Result};
use crate::vocab::{char_to_context_id, BOC, BOS, EOC, EOS, SPEAK_VOCAB};

/// Maps a context string to context-vocabulary ids.
pub fn context_ids(context: &str) -> Result<Vec<usize>> {
    context
        .chars()
        .map(|c| {
            char_to_context_id(c)
                .ok_or_else(|| Error::Input(format!("unsupported context character {c:?}")))
        })
        .collect()
}

/// Embedding-table row of a context-vocabulary id. Speaking ids use their
/// own value; context ids follow the speaking vocabulary.
pub fn context_row(id: usize) -> usize {
    SPEAK_VOCAB + id
}

/// Teacher-forced sequence `[BOC, context…, EOC, BOS, target[..n-1]…]`
/// and the next-token targets of its speaking region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// `[BOC, context…, EOC]` in context-vocabulary ids.
    pub prefix: Vec<usize>,
    /// `[BOS, target[..n-1]…]` in speaking-vocabulary ids.
    pub speak_inputs: Vec<usize>,
    /// One target per speaking input; the last one is a terminal token.
    pub targets: Vec<usize>,
}

impl Layout {
    /// EOS-terminated layout for `speak` tokens.
    pub fn new(context: &[usize], speak: &[usize], max_seq_len: usize) -> Result<Self> {
        let mut target = speak.to_vec();
        target.push(EOS);
        Self::with_target(context, &target, max_seq_len)
    }

    /// Layout for a target that already carries its terminal token.
    pub fn with_target(context: &[usize], target: &[usize], max_seq_len: usize) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::Data("target must end in a terminal token".into()));
        }
        let mut prefix = Vec::with_capacity(context.len() + 2);
        prefix.push(BOC);
        prefix.extend_from_slice(context);
        prefix.push(EOC);
        let mut speak_inputs = Vec::with_capacity(target.len());
        speak_inputs.push(BOS);
        speak_inputs.extend_from_slice(&target[..target.len() - 1]);
        let layout = Self { prefix, speak_inputs, targets: target.to_vec() };
        if layout.len() > max_seq_len {
            return Err(Error::Length(format!(
                "layout of {} positions exceeds max_seq_len {max_seq_len}",
                layout.len()
            )));
        }
        Ok(layout)
    }

    pub fn len(&self) -> usize {
        self.prefix.len() + self.speak_inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix.len()
    }

    pub fn n_predictions(&self) -> usize {
        self.targets.len()
    }

    /// Embedding rows of every position.
    pub fn embed_rows(&self) -> Vec<usize> {
        self.prefix
            .iter()
            .map(|&c| context_row(c))
            .chain(self.speak_inputs.iter().copied())
            .collect()
    }

    /// True at positions whose next-token target is part of the loss.
    pub fn region_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.prefix.len()];
        m.extend(std::iter::repeat_n(true, self.speak_inputs.len()));
        m
    }

    /// Per-position targets; `None` for context positions.
    pub fn position_targets(&self) -> Vec<Option<usize>> {
        let mut t = vec![None; self.prefix.len()];
        t.extend(self.targets.iter().map(|&x| Some(x)));
        t
    }

    /// Longest context whose EOS-terminated layout of `k` tokens per
    /// character fits in `max_seq_len`.
    pub fn max_context_len(max_seq_len: usize, k: usize) -> usize {
        // |layout| = (L + 2) + (k·L + 1)
        max_seq_len.saturating_sub(3) / (k + 1)
    }
}
