//! Token id layout for the speaking vocabulary, the context (character)
//! vocabulary and the listening alphabet.

/// Number of discrete audio tokens.
pub const AUDIO_TOKENS: usize = 64;
pub const BOS: usize = 64;
pub const EOS: usize = 65;
pub const IRQ: usize = 66;
pub const SPAD: usize = 67;
/// Size of the speaking vocabulary (audio tokens plus specials).
pub const SPEAK_VOCAB: usize = 68;

/// Context characters `a..=z` map to ids `0..26`.
pub const CONTEXT_CHARS: usize = 26;
pub const BOC: usize = 26;
pub const EOC: usize = 27;
pub const CPAD: usize = 28;
pub const CONTEXT_VOCAB: usize = 29;

/// Version tag recorded in checkpoint headers.
pub const VOCAB_VERSION: u32 = 1;

pub const SIL: usize = 0;
pub const STEADY_NOISE: std::ops::RangeInclusive<usize> = 1..=4;
pub const BURST_NOISE: std::ops::RangeInclusive<usize> = 5..=8;
pub const COMMAND_SYMBOLS: std::ops::RangeInclusive<usize> = 9..=40;
pub const LISTEN_VOCAB: usize = 41;
pub const COMMAND_COUNT: usize = 32;

pub fn is_audio_token(id: usize) -> bool {
    id < AUDIO_TOKENS
}

pub fn is_terminal(id: usize) -> bool {
    id == EOS || id == IRQ
}

/// Coarse class of a listening symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ListenClass {
    Silence,
    Noise,
    Command,
}

impl ListenClass {
    pub const COUNT: usize = 3;

    pub fn of(symbol: usize) -> Option<Self> {
        match symbol {
            SIL => Some(Self::Silence),
            s if STEADY_NOISE.contains(&s) || BURST_NOISE.contains(&s) => Some(Self::Noise),
            s if COMMAND_SYMBOLS.contains(&s) => Some(Self::Command),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Self::Silence => 0,
            Self::Noise => 1,
            Self::Command => 2,
        }
    }
}

pub fn char_to_context_id(c: char) -> Option<usize> {
    c.is_ascii_lowercase().then(|| (c as u8 - b'a') as usize)
}

pub fn context_id_to_char(id: usize) -> Option<char> {
    (id < CONTEXT_CHARS).then(|| (b'a' + id as u8) as char)
}
