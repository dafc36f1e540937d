//! Trains every speaking/listening initialization mode from one pretrained
//! TTS backbone and listener and prints the comparison table.
//!
//!     cargo run --release --example ablation -- <tts.ckpt> <listener.ckpt> [steps]

use lslm::eval::run_ablation;
use lslm::model::{load_listener, FusionStrategy, LslmModel};
use lslm::runtime::SamplerConfig;
use lslm::train::TrainConfig;
use lslm::world::{make_dataset, WorldConfig};

fn main() -> lslm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tts = LslmModel::load(args.first().map(String::as_str).unwrap_or("tts.ckpt"))?;
    let listener = load_listener(args.get(1).map(String::as_str).unwrap_or("listener.ckpt"))?;
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);

    let world = WorldConfig { train_size: 4000, val_size: 200, test_size: 200, tts_test_size: 100, ..WorldConfig::default() };
    let data = make_dataset(&world)?;
    let base = TrainConfig { lr_max: 1e-3, warmup_steps: 30, total_steps: Some(steps), ..TrainConfig::default() };
    let model_cfg = tts.config.clone().with_fusion(FusionStrategy::Middle);
    let out = run_ablation(&base, &model_cfg, &world, &data, &tts, &listener, SamplerConfig::default())?;

    println!("{}", out.report.render_text());
    for c in &out.frozen {
        println!("{:<10} {:<16} {}", c.label, c.group, if c.unchanged { "unchanged" } else { "CHANGED" });
    }
    Ok(())
}
