use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, CODE_LEN};
use super::listen::{
    find_command_windows, make_listen_stream, paint_command, paint_noise, speakers,
    CommandLexicon, CommandSymbols, Interruption, Speaker, COMMAND_FRAMES,
};
use crate::error::{Error, Result};
use crate::vocab::{EOS, IRQ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// One wake word, the same speakers in every split.
    Command,
    /// Thirty words, test speakers held out from training.
    Voice,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "command" => Ok(Self::Command),
            "voice" => Ok(Self::Voice),
            other => Err(Error::Input(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    TtsTest,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
            Split::TtsTest => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub scenario: Scenario,
    pub seed: u64,
    /// Frames between interruption onset and the IRQ label.
    pub mu_frames: usize,
    pub noise_prob: f64,
    pub interrupt_prob: f64,
    pub context_len_min: usize,
    pub context_len_max: usize,
    /// Listening frames beyond the target length.
    pub listen_margin: usize,
    pub command_speakers: usize,
    pub voice_train_speakers: usize,
    pub voice_heldout_speakers: usize,
    pub train_size: usize,
    pub val_size: usize,
    /// Interactive test items; half are interrupted.
    pub test_size: usize,
    pub tts_test_size: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Command,
            seed: 0,
            mu_frames: 4,
            noise_prob: 0.5,
            interrupt_prob: 0.5,
            context_len_min: 5,
            context_len_max: 12,
            listen_margin: 16,
            command_speakers: 22,
            voice_train_speakers: 40,
            voice_heldout_speakers: 10,
            train_size: 20_000,
            val_size: 1_000,
            test_size: 1_000,
            tts_test_size: 500,
        }
    }
}

impl WorldConfig {
    pub fn detection_window(&self) -> usize {
        2 * self.mu_frames
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.context_len_min == 0 || self.context_len_min > self.context_len_max {
            return bad(format!(
                "context length range [{}, {}] is empty or starts at 0",
                self.context_len_min, self.context_len_max
            ));
        }
        if CODE_LEN * self.context_len_min < self.detection_window() {
            return bad(format!(
                "shortest target ({} tokens) cannot fit an onset plus the {}-frame window",
                CODE_LEN * self.context_len_min,
                self.detection_window()
            ));
        }
        if self.mu_frames == 0 {
            return bad("mu_frames must be positive".into());
        }
        if self.listen_margin < COMMAND_FRAMES {
            return bad(format!("listen_margin must be at least {COMMAND_FRAMES}"));
        }
        for (name, p) in [("noise_prob", self.noise_prob), ("interrupt_prob", self.interrupt_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.test_size % 2 != 0 {
            return bad(format!("test_size {} must be even (half interrupted)", self.test_size));
        }
        match self.scenario {
            Scenario::Command if self.command_speakers == 0 => {
                bad("command scenario needs at least one speaker".into())
            }
            Scenario::Voice if self.voice_train_speakers == 0 || self.voice_heldout_speakers == 0 => {
                bad("voice scenario needs both training and held-out speakers".into())
            }
            _ => Ok(()),
        }
    }

    pub fn lexicon(&self) -> CommandLexicon {
        match self.scenario {
            Scenario::Command => CommandLexicon::command_based(self.seed),
            Scenario::Voice => CommandLexicon::voice_based(self.seed),
        }
    }

    pub fn speaker_table(&self) -> Vec<Speaker> {
        let n = match self.scenario {
            Scenario::Command => self.command_speakers,
            Scenario::Voice => self.voice_train_speakers + self.voice_heldout_speakers,
        };
        speakers(n, self.seed)
    }

    /// Speaker ids drawn from for a split.
    pub fn split_speakers(&self, split: Split) -> Vec<usize> {
        match (self.scenario, split) {
            (Scenario::Command, _) => (0..self.command_speakers).collect(),
            (Scenario::Voice, Split::Test) => (self.voice_train_speakers
                ..self.voice_train_speakers + self.voice_heldout_speakers)
                .collect(),
            (Scenario::Voice, _) => (0..self.voice_train_speakers).collect(),
        }
    }

    pub fn codebook(&self) -> Codebook {
        Codebook::build(self.seed)
    }
}

/// One training or evaluation item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub context: String,
    /// Codebook tokens of `context`, without a terminal token.
    pub speak_target: Vec<usize>,
    pub listen: Vec<usize>,
    pub onset: Option<usize>,
    pub noise: bool,
    pub split: Split,
    pub speaker: Option<usize>,
}

impl SampleRecord {
    pub fn interrupted(&self) -> bool {
        self.onset.is_some()
    }

    /// Speaking target ending in EOS, or in IRQ `mu` frames after onset.
    pub fn training_target(&self, mu: usize) -> Result<Vec<usize>> {
        if self.interrupted() {
            label_with_irq(self, mu)
        } else {
            let mut t = self.speak_target.clone();
            t.push(EOS);
            Ok(t)
        }
    }
}

/// Truncates the target `mu` frames after onset and terminates it with IRQ.
pub fn label_with_irq(sample: &SampleRecord, mu: usize) -> Result<Vec<usize>> {
    let onset = sample
        .onset
        .ok_or_else(|| Error::Data("IRQ labeling needs an interrupted sample".into()))?;
    let cut = onset + mu;
    if cut > sample.speak_target.len() {
        return Err(Error::Data(format!(
            "onset {onset} + μ {mu} exceeds target length {}",
            sample.speak_target.len()
        )));
    }
    let mut t = sample.speak_target[..cut].to_vec();
    t.push(IRQ);
    Ok(t)
}

fn sub_seed(master: u64, split: Split, index: u64) -> u64 {
    // splitmix64 over (master, split, index)
    let mut z = master
        .wrapping_add(split.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything needed to render items of one world.
pub struct WorldGen {
    pub config: WorldConfig,
    pub codebook: Codebook,
    pub lexicon: CommandLexicon,
    pub speakers: Vec<Speaker>,
}

impl WorldGen {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            codebook: config.codebook(),
            lexicon: config.lexicon(),
            speakers: config.speaker_table(),
            config,
        })
    }

    pub fn random_context<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let len = rng.random_range(self.config.context_len_min..=self.config.context_len_max);
        (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
    }

    /// Every rendered (word, speaker) command of the world.
    pub fn all_commands(&self) -> Vec<CommandSymbols> {
        let mut out = Vec::new();
        for w in self.lexicon.words() {
            for sp in &self.speakers {
                out.push(self.lexicon.render(w, sp).expect("word from lexicon"));
            }
        }
        out
    }

    /// Draws one item. `interrupt` and `noise` of `None` are sampled with the
    /// configured probabilities.
    pub fn sample(
        &self,
        split: Split,
        index: u64,
        noise: Option<bool>,
        interrupt: Option<bool>,
    ) -> Result<SampleRecord> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, split, index));
        let context = self.random_context(&mut rng);
        let speak_target = self.codebook.synth(&context)?;
        let noise = noise.unwrap_or_else(|| rng.random_bool(cfg.noise_prob));
        let interrupt = interrupt.unwrap_or_else(|| rng.random_bool(cfg.interrupt_prob));
        let length = speak_target.len() + cfg.listen_margin;
        let (interruption, speaker) = if interrupt {
            let pool = cfg.split_speakers(split);
            let speaker = pool[rng.random_range(0..pool.len())];
            let word = self.lexicon.word_at(rng.random_range(0..self.lexicon.len())).to_string();
            let command = self.lexicon.render(&word, &self.speakers[speaker])?;
            let onset_max = speak_target.len() - cfg.detection_window();
            (Some(Interruption { command, onset_max }), Some(speaker))
        } else {
            (None, None)
        };
        let (listen, onset) = make_listen_stream(length, noise, interruption, &mut rng)?;
        Ok(SampleRecord { context, speak_target, listen, onset, noise, split, speaker })
    }

    /// Same item with noise spans added; a command window is preserved.
    pub fn with_noise(&self, record: &SampleRecord, index: u64) -> SampleRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.config.seed ^ 0x0A15E, record.split, index));
        let mut out = record.clone();
        let command = record
            .onset
            .map(|o| -> CommandSymbols { record.listen[o..o + COMMAND_FRAMES].try_into().unwrap() });
        paint_noise(&mut out.listen, &mut rng);
        if let (Some(o), Some(cmd)) = (record.onset, command) {
            paint_command(&mut out.listen, o, &cmd).expect("window was in range");
        }
        out.noise = true;
        out
    }
}

/// Counts and split metadata written next to the dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub world: WorldConfig,
    pub seed: u64,
    pub counts: SplitCounts,
    pub speakers: SplitSpeakers,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub tts_test: usize,
    pub train_noise: usize,
    pub train_interrupted: usize,
    pub val_noise: usize,
    pub val_interrupted: usize,
    pub test_interrupted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpeakers {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    /// Interactive test items with clean listening streams.
    pub test: Vec<SampleRecord>,
    /// The same items with noise spans added.
    pub test_noise: Vec<SampleRecord>,
    /// Uninterrupted, silent contexts for speaking-quality evaluation.
    pub tts_test: Vec<SampleRecord>,
    pub manifest: Manifest,
}

/// Generates all splits deterministically from the master seed.
pub fn make_dataset(config: &WorldConfig) -> Result<Dataset> {
    let world = WorldGen::new(config.clone())?;
    let commands = world.all_commands();
    let gen = |split: Split, n: usize, fixed: &dyn Fn(usize) -> (Option<bool>, Option<bool>)| {
        (0..n)
            .map(|i| {
                let (noise, int) = fixed(i);
                let rec = world.sample(split, i as u64, noise, int)?;
                if !rec.interrupted() && !find_command_windows(&rec.listen, &commands).is_empty() {
                    return Err(Error::Data(format!("{split:?} item {i} holds a stray command")));
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    };
    let train = gen(Split::Train, config.train_size, &|_| (None, None))?;
    let val = gen(Split::Val, config.val_size, &|_| (None, None))?;
    let half = config.test_size / 2;
    let test = gen(Split::Test, config.test_size, &|i| (Some(false), Some(i < half)))?;
    let test_noise = test
        .iter()
        .enumerate()
        .map(|(i, r)| world.with_noise(r, i as u64))
        .collect();
    let tts_test = gen(Split::TtsTest, config.tts_test_size, &|_| (Some(false), Some(false)))?;
    let count = |v: &[SampleRecord], f: fn(&SampleRecord) -> bool| v.iter().filter(|r| f(r)).count();
    let manifest = Manifest {
        world: config.clone(),
        seed: config.seed,
        counts: SplitCounts {
            train: train.len(),
            val: val.len(),
            test: test.len(),
            tts_test: tts_test.len(),
            train_noise: count(&train, |r| r.noise),
            train_interrupted: count(&train, SampleRecord::interrupted),
            val_noise: count(&val, |r| r.noise),
            val_interrupted: count(&val, SampleRecord::interrupted),
            test_interrupted: count(&test, SampleRecord::interrupted),
        },
        speakers: SplitSpeakers {
            train: config.split_speakers(Split::Train),
            val: config.split_speakers(Split::Val),
            test: config.split_speakers(Split::Test),
        },
        words: world.lexicon.words().map(str::to_string).collect(),
    };
    Ok(Dataset { train, val, test, test_noise, tts_test, manifest })
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let r = BufReader::new(File::open(path.as_ref())?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

impl Dataset {
    pub const FILES: [&'static str; 5] =
        ["train.jsonl", "val.jsonl", "test.jsonl", "test_noise.jsonl", "tts_test.jsonl"];

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let splits = [&self.train, &self.val, &self.test, &self.test_noise, &self.tts_test];
        for (name, recs) in Self::FILES.iter().zip(splits) {
            write_jsonl(dir.join(name), recs)?;
        }
        let mut f = File::create(dir.join("data_manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, &self.manifest)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest =
            serde_json::from_reader(BufReader::new(File::open(dir.join("data_manifest.json"))?))?;
        let mut splits = Self::FILES
            .iter()
            .map(|n| read_jsonl(dir.join(n)))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = || splits.next().expect("five splits");
        Ok(Self {
            train: next(),
            val: next(),
            test: next(),
            test_noise: next(),
            tts_test: next(),
            manifest,
        })
    }
}
