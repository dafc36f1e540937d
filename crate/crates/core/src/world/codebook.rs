use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::{char_to_context_id, context_id_to_char, AUDIO_TOKENS, CONTEXT_CHARS};

/// Speaking tokens per character.
pub const CODE_LEN: usize = 3;

/// Emitted by [`Codebook::invert`] for token groups that match no codeword.
pub const PLACEHOLDER: char = '?';

/// Invertible character → audio-token code. Stands in for the
/// encoder/quantizer pair on the speaking side and, inverted, for the
/// vocoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    seed: u64,
    codes: Vec<[usize; CODE_LEN]>,
    inverse: HashMap<[usize; CODE_LEN], usize>,
}

impl Codebook {
    /// Draws 26 pairwise distinct codewords over the audio tokens.
    pub fn build(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0DE_B00C);
        let mut codes = Vec::with_capacity(CONTEXT_CHARS);
        let mut inverse = HashMap::with_capacity(CONTEXT_CHARS);
        while codes.len() < CONTEXT_CHARS {
            let mut code = [0usize; CODE_LEN];
            for t in &mut code {
                *t = rng.random_range(0..AUDIO_TOKENS);
            }
            if inverse.contains_key(&code) {
                continue;
            }
            inverse.insert(code, codes.len());
            codes.push(code);
        }
        Self { seed, codes, inverse }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn codeword(&self, c: char) -> Result<[usize; CODE_LEN]> {
        char_to_context_id(c)
            .map(|i| self.codes[i])
            .ok_or_else(|| Error::Input(format!("unsupported character {c:?}")))
    }

    pub fn codewords(&self) -> &[[usize; CODE_LEN]] {
        &self.codes
    }

    /// Concatenated codewords of `context`.
    pub fn synth(&self, context: &str) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(context.len() * CODE_LEN);
        for c in context.chars() {
            out.extend_from_slice(&self.codeword(c)?);
        }
        Ok(out)
    }

    /// Greedy k-gram decoding. Returns the text and the number of units that
    /// matched no codeword; a trailing partial group counts as one unit.
    pub fn invert(&self, tokens: &[usize]) -> (String, usize) {
        let mut text = String::with_capacity(tokens.len() / CODE_LEN + 1);
        let mut unmatched = 0;
        let mut chunks = tokens.chunks_exact(CODE_LEN);
        for chunk in &mut chunks {
            let key = [chunk[0], chunk[1], chunk[2]];
            match self.inverse.get(&key).and_then(|&i| context_id_to_char(i)) {
                Some(c) => text.push(c),
                None => {
                    text.push(PLACEHOLDER);
                    unmatched += 1;
                }
            }
        }
        if !chunks.remainder().is_empty() {
            text.push(PLACEHOLDER);
            unmatched += 1;
        }
        (text, unmatched)
    }
}
