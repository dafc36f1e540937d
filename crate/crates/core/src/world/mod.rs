//! Deterministic synthetic token world: an invertible character codebook
//! for the speaking channel and silence/noise/command streams for the
//! listening channel.

mod codebook;
mod dataset;
mod listen;

pub use codebook::{Codebook, CODE_LEN, PLACEHOLDER};
pub use dataset::{
    label_with_irq, make_dataset, read_jsonl, write_jsonl, Dataset, Manifest, SampleRecord,
    Scenario, Split, SplitCounts, SplitSpeakers, WorldConfig, WorldGen,
};
pub use listen::{
    find_command_windows, make_listen_stream, paint_command, paint_noise, speakers,
    validate_symbols, CommandLexicon, CommandSymbols, Interruption, Speaker, COMMAND_FRAMES,
};
