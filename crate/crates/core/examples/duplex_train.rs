//! Trains a listen-while-speaking model on top of a pretrained TTS backbone
//! and scores interruption handling in clean and noisy listening channels.
//!
//!     cargo run --release --example duplex_train -- <tts.ckpt> [fusion] [steps] [scenario]

use std::sync::Arc;
use std::time::Instant;

use lslm::eval::{irq_trace_stats, run_interactive_eval, run_tts_eval, Condition};
use lslm::model::{FusionStrategy, LslmModel};
use lslm::runtime::SamplerConfig;
use lslm::train::{pretrain_listener, train_lslm, ListeningInit, Pretrained, SpeakingInit, TrainConfig};
use lslm::world::{make_dataset, Scenario, WorldConfig};

fn main() -> lslm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tts_path = args.first().map(String::as_str).unwrap_or("tts.ckpt");
    let fusion: FusionStrategy = args.get(1).map_or(Ok(FusionStrategy::Middle), |s| s.parse())?;
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let scenario: Scenario = args.get(3).map_or(Ok(Scenario::Command), |s| s.parse())?;

    let world = WorldConfig { scenario, train_size: 4000, val_size: 200, ..WorldConfig::default() };
    let data = make_dataset(&world)?;
    let tts = LslmModel::load(tts_path)?;
    let model_cfg = tts.config.clone().with_fusion(fusion);

    let t = Instant::now();
    let listener_cfg = TrainConfig { lr_max: 1e-3, warmup_steps: 20, total_steps: Some(200), ..TrainConfig::default() };
    let listener = pretrain_listener(&listener_cfg, &model_cfg, &data.train, &data.val)?;
    println!("listener pretraining: frame accuracy {:.4} ({:.0}s)", listener.val_accuracy, t.elapsed().as_secs_f64());

    let cfg = TrainConfig {
        lr_max: 1e-3,
        warmup_steps: 100,
        total_steps: Some(steps),
        speaking_init: SpeakingInit::Finetune,
        listening_init: ListeningInit::Finetune,
        ..TrainConfig::default()
    };
    let pre = Pretrained { tts: Some(tts.params), listener: Some(listener.encoder) };
    let t = Instant::now();
    let run = train_lslm(&cfg, &model_cfg, world.mu_frames, &pre, &data.train, &data.val)?;
    println!("duplex training: {steps} steps in {:.0}s", t.elapsed().as_secs_f64());
    let model = Arc::new(run.model);

    let sampler = SamplerConfig::default();
    let tts_report = run_tts_eval(&model, &data.tts_test, &world.codebook(), sampler)?;
    println!("TTS transcript error {:.2}%", 100.0 * tts_report.transcript_error_rate);
    for condition in [Condition::Clean, Condition::Noise] {
        let (rep, results) =
            run_interactive_eval(&model, condition.records(&data), condition, world.detection_window(), sampler)?;
        let m = &rep.metrics;
        println!(
            "{condition:>5}: P {:.2}% R {:.2}% F1 {:.2}%  {:?}  premature {}",
            100.0 * m.precision,
            100.0 * m.recall,
            100.0 * m.f1,
            rep.counts,
            rep.premature_stops
        );
        if condition == Condition::Clean {
            let st = irq_trace_stats(&results, 4, 8);
            println!(
                "       rise ratio >= 10: {:.1}% of {} items; median curve {:?}",
                100.0 * st.frac_rise_ge_threshold,
                st.n_defined,
                st.median_curve.iter().map(|(o, p)| format!("{o}:{p:.1e}")).collect::<Vec<_>>()
            );
        }
    }
    Ok(())
}
