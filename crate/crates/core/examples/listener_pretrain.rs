//! Pretrains the streaming listener encoder on per-frame silence, noise and
//! command classification and saves the encoder weights.
//!
//!     cargo run --release --example listener_pretrain -- [command|voice] [steps] [checkpoint]

use std::time::Instant;

use lslm::model::{save_listener, ModelConfig};
use lslm::train::{pretrain_listener, TrainConfig};
use lslm::world::{make_dataset, Scenario, WorldConfig};

fn main() -> lslm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let scenario: Scenario = args.next().map_or(Ok(Scenario::Command), |s| s.parse())?;
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let out = args.next().unwrap_or_else(|| "listener.ckpt".to_string());

    let world = WorldConfig { scenario, train_size: 4000, val_size: 200, test_size: 0, ..WorldConfig::default() };
    let data = make_dataset(&world)?;
    let model_cfg = ModelConfig::compact();
    let cfg = TrainConfig { lr_max: 1e-3, warmup_steps: 20, total_steps: Some(steps), ..TrainConfig::default() };
    let t = Instant::now();
    let run = pretrain_listener(&cfg, &model_cfg, &data.train, &data.val)?;
    println!(
        "{steps} steps in {:.1}s: validation frame accuracy {:.4}, {} encoder tensors",
        t.elapsed().as_secs_f64(),
        run.val_accuracy,
        run.encoder.len()
    );
    save_listener(&out, &run.encoder, &model_cfg)?;
    println!("saved {out}");
    Ok(())
}
