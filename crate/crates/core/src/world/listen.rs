//! Listening-channel symbol streams: silence, two noise families and
//! speaker-perturbed command words.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{BURST_NOISE, COMMAND_COUNT, COMMAND_SYMBOLS, LISTEN_VOCAB, SIL, STEADY_NOISE};

/// Frames per rendered command word.
pub const COMMAND_FRAMES: usize = 8;

pub type CommandSymbols = [usize; COMMAND_FRAMES];

const FIRST_COMMAND: usize = *COMMAND_SYMBOLS.start();

/// A speaker is a bijection on the command symbols, identity elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Speaker {
    perm: Vec<usize>,
}

impl Speaker {
    pub fn identity() -> Self {
        Self { perm: (0..COMMAND_COUNT).collect() }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut perm: Vec<usize> = (0..COMMAND_COUNT).collect();
        perm.shuffle(rng);
        Self { perm }
    }

    pub fn apply(&self, symbol: usize) -> usize {
        if COMMAND_SYMBOLS.contains(&symbol) {
            FIRST_COMMAND + self.perm[symbol - FIRST_COMMAND]
        } else {
            symbol
        }
    }
}

/// Seeded speaker table; speaker ids index into it.
pub fn speakers(count: usize, seed: u64) -> Vec<Speaker> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5BEA_4E25);
    (0..count).map(|_| Speaker::random(&mut rng)).collect()
}

const VOICE_WORDS: [&str; 30] = [
    "yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go", "zero", "one", "two",
    "three", "four", "five", "six", "seven", "eight", "nine", "bed", "bird", "cat", "dog", "happy",
    "house", "marvin", "sheila", "tree", "wow",
];

/// Word → base command-symbol sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandLexicon {
    words: Vec<(String, CommandSymbols)>,
}

impl CommandLexicon {
    fn from_words(words: &[&str], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1E71_C0A5);
        let mut out: Vec<(String, CommandSymbols)> = Vec::with_capacity(words.len());
        for w in words {
            loop {
                let mut seq = [0usize; COMMAND_FRAMES];
                for s in &mut seq {
                    *s = rng.random_range(COMMAND_SYMBOLS);
                }
                if out.iter().all(|(_, other)| *other != seq) {
                    out.push((w.to_string(), seq));
                    break;
                }
            }
        }
        Self { words: out }
    }

    /// The single wake word used in the speaker-dependent setting.
    pub fn command_based(seed: u64) -> Self {
        Self::from_words(&["honey"], seed)
    }

    /// Thirty keywords for the speaker-independent setting.
    pub fn voice_based(seed: u64) -> Self {
        Self::from_words(&VOICE_WORDS, seed)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|(w, _)| w.as_str())
    }

    pub fn word_at(&self, i: usize) -> &str {
        &self.words[i].0
    }

    pub fn base(&self, word: &str) -> Result<&CommandSymbols> {
        self.words
            .iter()
            .find(|(w, _)| w == word)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Input(format!("word {word:?} not in lexicon")))
    }

    /// Applies a speaker's permutation to a word's base sequence.
    pub fn render(&self, word: &str, speaker: &Speaker) -> Result<CommandSymbols> {
        let mut seq = *self.base(word)?;
        for s in &mut seq {
            *s = speaker.apply(*s);
        }
        Ok(seq)
    }

    pub fn render_id(&self, word: &str, speakers: &[Speaker], id: usize) -> Result<CommandSymbols> {
        let sp = speakers
            .get(id)
            .ok_or_else(|| Error::Input(format!("unknown speaker {id}")))?;
        self.render(word, sp)
    }
}

/// Overlays 1–3 noise spans. Steady spans repeat one symbol from 1..=4 for
/// 4–12 frames; burst spans draw from 5..=8 for 2–6 frames.
pub fn paint_noise<R: Rng + ?Sized>(stream: &mut [usize], rng: &mut R) {
    if stream.is_empty() {
        return;
    }
    let spans = rng.random_range(1..=3);
    for _ in 0..spans {
        let steady = rng.random_bool(0.5);
        let len = if steady { rng.random_range(4..=12) } else { rng.random_range(2..=6) };
        let len = len.min(stream.len());
        let start = rng.random_range(0..=stream.len() - len);
        if steady {
            let sym = rng.random_range(STEADY_NOISE);
            stream[start..start + len].iter_mut().for_each(|s| *s = sym);
        } else {
            for s in &mut stream[start..start + len] {
                *s = rng.random_range(BURST_NOISE);
            }
        }
    }
}

/// Writes a command over `[onset, onset + 8)`; the command wins over noise.
pub fn paint_command(stream: &mut [usize], onset: usize, command: &CommandSymbols) -> Result<()> {
    let window = stream
        .get_mut(onset..onset + COMMAND_FRAMES)
        .ok_or_else(|| Error::Input(format!("command at {onset} overruns the stream")))?;
    window.copy_from_slice(command);
    Ok(())
}

/// Interruption request for [`make_listen_stream`].
#[derive(Debug, Clone, Copy)]
pub struct Interruption {
    pub command: CommandSymbols,
    /// Largest admissible onset frame (inclusive).
    pub onset_max: usize,
}

/// Builds a stream of `length` frames: silence, optional noise, optional
/// command at a uniformly drawn onset.
pub fn make_listen_stream<R: Rng + ?Sized>(
    length: usize,
    noise: bool,
    interruption: Option<Interruption>,
    rng: &mut R,
) -> Result<(Vec<usize>, Option<usize>)> {
    if let Some(int) = &interruption {
        if length < int.onset_max + COMMAND_FRAMES {
            return Err(Error::Input(format!(
                "stream of {length} frames cannot hold a command at onset up to {}",
                int.onset_max
            )));
        }
    }
    let mut stream = vec![SIL; length];
    if noise {
        paint_noise(&mut stream, rng);
    }
    let onset = match interruption {
        Some(int) => {
            let onset = rng.random_range(0..=int.onset_max);
            paint_command(&mut stream, onset, &int.command)?;
            Some(onset)
        }
        None => None,
    };
    Ok((stream, onset))
}

/// Start frames of every window equal to one of `commands`.
pub fn find_command_windows(stream: &[usize], commands: &[CommandSymbols]) -> Vec<usize> {
    if stream.len() < COMMAND_FRAMES {
        return Vec::new();
    }
    (0..=stream.len() - COMMAND_FRAMES)
        .filter(|&i| commands.iter().any(|c| stream[i..i + COMMAND_FRAMES] == c[..]))
        .collect()
}

pub fn validate_symbols(stream: &[usize]) -> Result<()> {
    match stream.iter().find(|&&s| s >= LISTEN_VOCAB) {
        Some(s) => Err(Error::Index(format!("listening symbol {s} outside vocabulary"))),
        None => Ok(()),
    }
}
