//! Generates a synthetic world, prints its split statistics and one
//! interrupted item, and writes the splits as JSON lines.
//!
//!     cargo run --release --example make_data -- [command|voice] [out_dir]

use lslm::vocab::SIL;
use lslm::world::{label_with_irq, make_dataset, write_jsonl, Scenario, WorldConfig, WorldGen};

fn frame_char(sym: usize) -> char {
    match sym {
        SIL => '.',
        1..=4 => '~',
        5..=8 => '*',
        _ => '#',
    }
}

fn main() -> lslm::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenario: Scenario = args.next().map_or(Ok(Scenario::Command), |s| s.parse())?;
    let out = args.next().unwrap_or_else(|| "data".to_string());

    let world = WorldConfig { scenario, train_size: 2000, val_size: 200, ..WorldConfig::default() };
    let data = make_dataset(&world)?;
    let c = &data.manifest.counts;
    println!(
        "{scenario:?}: train {} ({} noisy, {} interrupted), val {}, test {} ({} interrupted), tts {}",
        c.train, c.train_noise, c.train_interrupted, c.val, c.test, c.test_interrupted, c.tts_test
    );
    println!("speakers train {:?}\n         test  {:?}", data.manifest.speakers.train, data.manifest.speakers.test);
    println!("words: {}", data.manifest.words.join(" "));

    let gen = WorldGen::new(world.clone())?;
    println!("codebook: a -> {:?}", gen.codebook.codeword('a')?);
    if let Some(r) = data.test_noise.iter().find(|r| r.interrupted()) {
        let onset = r.onset.unwrap_or(0);
        println!("\ncontext {:?}, command onset at frame {onset}", r.context);
        println!("listen  {}", r.listen.iter().map(|&s| frame_char(s)).collect::<String>());
        println!("target  {:?}", label_with_irq(r, world.mu_frames)?);
    }

    std::fs::create_dir_all(&out)?;
    for (name, records) in [
        ("train", &data.train),
        ("val", &data.val),
        ("test", &data.test),
        ("test_noise", &data.test_noise),
        ("tts_test", &data.tts_test),
    ] {
        write_jsonl(format!("{out}/{name}.jsonl"), records)?;
    }
    println!("\nwrote {out}/");
    Ok(())
}
