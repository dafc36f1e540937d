//! Pretrains a vanilla TTS backbone on a small synthetic world, scores its
//! transcript error on the held-out TTS set and saves the checkpoint.
//!
//!     cargo run --release --example tts_pretrain -- [steps] [checkpoint]

use std::sync::Arc;
use std::time::Instant;

use lslm::eval::run_tts_eval;
use lslm::model::ModelConfig;
use lslm::runtime::SamplerConfig;
use lslm::train::{pretrain_tts, TrainConfig};
use lslm::world::{make_dataset, WorldConfig};

fn main() -> lslm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2500);
    let out = args.next().unwrap_or_else(|| "tts.ckpt".to_string());

    let world = WorldConfig { train_size: 4000, val_size: 200, test_size: 0, ..WorldConfig::default() };
    let data = make_dataset(&world)?;
    let cfg = TrainConfig { lr_max: 1e-3, warmup_steps: 200, total_steps: Some(steps), ..TrainConfig::default() };
    let t = Instant::now();
    let run = pretrain_tts(&cfg, &ModelConfig::compact(), &data.train, &data.val)?;
    println!("{steps} steps in {:.1}s", t.elapsed().as_secs_f64());
    if let Some(best) = run.log.best_epoch() {
        println!("best epoch {} (step {}), val loss {:.5}", best.epoch, best.step, best.val_loss);
    }
    run.model.save(&out)?;

    let model = Arc::new(run.model);
    let report = run_tts_eval(&model, &data.tts_test, &world.codebook(), SamplerConfig::default())?;
    println!(
        "{} utterances: token error {:.2}%, transcript error {:.2}%",
        report.n_utterances,
        100.0 * report.token_error_rate,
        100.0 * report.transcript_error_rate
    );
    for item in report.items.iter().filter(|i| i.char_edits > 0).take(5) {
        println!("  {:>14} -> {} ({:?})", item.context, item.transcript, item.stop.reason);
    }
    println!("saved {out}");
    Ok(())
}
