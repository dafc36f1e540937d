use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::config::{RunConfig, SubSeeds};
use super::{Cli, Command, TrainFlags};
use crate::error::{Error, Result};
use crate::eval::{irq_trace_stats, run_ablation, run_interactive_eval, run_tts_eval};
use crate::model::{load_listener, save_listener, LslmModel};
use crate::runtime::{write_traces, IrqTrace};
use crate::server::{serve, ServerState};
use crate::train::{pretrain_listener, pretrain_tts, train_lslm, Pretrained, TrainConfig};
use crate::world::{make_dataset, Dataset};

struct Run {
    name: &'static str,
    cfg: RunConfig,
    seeds: SubSeeds,
    out: PathBuf,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    seed: u64,
    sub_seeds: SubSeeds,
    config: &'a RunConfig,
    outputs: &'a [String],
    versions: serde_json::Value,
    finished_unix: u64,
}

impl Run {
    fn path(&mut self, file: &str) -> PathBuf {
        self.outputs.push(file.to_string());
        self.out.join(file)
    }

    fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        let path = self.path(file);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let m = RunManifest {
            subcommand: self.name,
            seed: self.cfg.seed,
            sub_seeds: self.seeds,
            config: &self.cfg,
            outputs: &self.outputs,
            versions: serde_json::json!({
                "lslm": env!("CARGO_PKG_VERSION"),
                "vocab": crate::vocab::VOCAB_VERSION,
            }),
            finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        fs::write(self.out.join(format!("{}.manifest.json", self.name)), text)?;
        Ok(())
    }

    /// The corpus from `data_dir` when set (adopting its world config),
    /// otherwise regenerated from the world config.
    fn data(&mut self) -> Result<Dataset> {
        match &self.cfg.data_dir {
            Some(dir) => {
                let d = Dataset::read_dir(dir)?;
                self.cfg.world = d.manifest.world.clone();
                Ok(d)
            }
            None => make_dataset(&self.cfg.world),
        }
    }
}

fn apply_train(t: &mut TrainConfig, f: &TrainFlags) {
    if let Some(s) = f.steps {
        t.total_steps = Some(s);
        t.warmup_steps = t.warmup_steps.min(s);
    }
    if let Some(b) = f.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = f.lr {
        t.lr_max = lr;
    }
}

fn name_of(c: &Command) -> &'static str {
    match c {
        Command::MakeData => "make-data",
        Command::PretrainTts { .. } => "pretrain-tts",
        Command::PretrainListener { .. } => "pretrain-listener",
        Command::Train { .. } => "train",
        Command::EvalTts { .. } => "eval-tts",
        Command::EvalInteractive { .. } => "eval-interactive",
        Command::Ablation { .. } => "ablation",
        Command::TraceIrq { .. } => "trace-irq",
        Command::Serve { .. } => "serve",
        Command::ShowConfig => "show-config",
    }
}

/// Resolves defaults, config file and flags into the run configuration.
fn resolve(cli: &Cli) -> Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(d) = &c.data {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(s) = c.scenario {
        cfg.world.scenario = s;
    }
    match &cli.command {
        Command::PretrainTts { train } => apply_train(&mut cfg.tts, train),
        Command::PretrainListener { train } => apply_train(&mut cfg.listener, train),
        Command::Train { train, fusion, speaking_init, listening_init, tts, listener } => {
            apply_train(&mut cfg.duplex, train);
            if let Some(f) = fusion {
                cfg.model.fusion = *f;
            }
            if let Some(s) = speaking_init {
                cfg.duplex.speaking_init = *s;
            }
            if let Some(l) = listening_init {
                cfg.duplex.listening_init = *l;
            }
            if tts.is_some() {
                cfg.duplex.pretrained_tts = tts.clone();
            }
            if listener.is_some() {
                cfg.duplex.pretrained_listener = listener.clone();
            }
        }
        Command::Ablation { train, fusion, tts, listener } => {
            apply_train(&mut cfg.duplex, train);
            if let Some(f) = fusion {
                cfg.model.fusion = *f;
            }
            if tts.is_some() {
                cfg.duplex.pretrained_tts = tts.clone();
            }
            if listener.is_some() {
                cfg.duplex.pretrained_listener = listener.clone();
            }
        }
        Command::EvalTts { checkpoint }
        | Command::EvalInteractive { checkpoint, .. }
        | Command::TraceIrq { checkpoint, .. }
        | Command::Serve { checkpoint, .. } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
        }
        Command::MakeData | Command::ShowConfig => {}
    }
    cfg.apply_seeds();
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<Arc<LslmModel>> {
    Ok(Arc::new(LslmModel::load(path)?))
}

fn pct(x: f32) -> String {
    format!("{:.2}%", 100.0 * x)
}

pub(super) fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    if let Command::ShowConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let name = name_of(&cli.command);
    let seeds = SubSeeds::of(cfg.seed);
    fs::create_dir_all(&cli.common.out)?;
    let mut run = Run { name, cfg, seeds, out: cli.common.out.clone(), outputs: Vec::new() };
    match cli.command {
        Command::MakeData => {
            let data = make_dataset(&run.cfg.world)?;
            data.write_dir(&run.out)?;
            run.outputs.extend(Dataset::FILES.iter().map(|f| f.to_string()));
            run.outputs.push("data_manifest.json".into());
            let c = &data.manifest.counts;
            println!(
                "wrote {} train, {} val, {} test (+noise), {} tts_test items to {}",
                c.train,
                c.val,
                c.test,
                c.tts_test,
                run.out.display()
            );
        }
        Command::PretrainTts { .. } => {
            let data = run.data()?;
            let t = pretrain_tts(&run.cfg.tts, &run.cfg.model, &data.train, &data.val)?;
            t.model.save(run.path("tts.ckpt"))?;
            t.log.write_jsonl(run.path("tts_log.jsonl"))?;
            if let Some(b) = t.log.best_epoch() {
                println!("best epoch {} (step {}), val loss {:.5}", b.epoch, b.step, b.val_loss);
            }
        }
        Command::PretrainListener { .. } => {
            let data = run.data()?;
            let l = pretrain_listener(&run.cfg.listener, &run.cfg.model, &data.train, &data.val)?;
            save_listener(run.path("listener.ckpt"), &l.encoder, &run.cfg.model)?;
            l.log.write_jsonl(run.path("listener_log.jsonl"))?;
            println!("frame accuracy {:.4}", l.val_accuracy);
        }
        Command::Train { .. } => {
            let pre = Pretrained::load(&run.cfg.duplex)?;
            let data = run.data()?;
            let t = train_lslm(&run.cfg.duplex, &run.cfg.model, run.cfg.world.mu_frames, &pre, &data.train, &data.val)?;
            t.model.save(run.path("lslm.ckpt"))?;
            t.log.write_jsonl(run.path("train_log.jsonl"))?;
            if let Some(b) = t.log.best_epoch() {
                println!("best epoch {} (step {}), val loss {:.5}", b.epoch, b.step, b.val_loss);
            }
        }
        Command::EvalTts { .. } => {
            let model = load_model(run.cfg.require_checkpoint()?)?;
            let data = run.data()?;
            let rep = run_tts_eval(&model, &data.tts_test, &run.cfg.world.codebook(), run.cfg.sampler)?;
            run.write_json("tts_eval.json", &rep)?;
            println!(
                "{} utterances: token error {}, transcript error {}",
                rep.n_utterances,
                pct(rep.token_error_rate),
                pct(rep.transcript_error_rate)
            );
        }
        Command::EvalInteractive { condition, .. } => {
            let model = load_model(run.cfg.require_checkpoint()?)?;
            let data = run.data()?;
            let window = run.cfg.world.detection_window();
            let (rep, _) = run_interactive_eval(&model, condition.records(&data), condition, window, run.cfg.sampler)?;
            run.write_json(&format!("interactive_{condition}.json"), &rep)?;
            let m = &rep.metrics;
            println!(
                "{condition}: precision {} recall {} F1 {}  (tp {} fn {} fp {} tn {}, premature {})",
                pct(m.precision),
                pct(m.recall),
                pct(m.f1),
                rep.counts.tp,
                rep.counts.fn_,
                rep.counts.fp,
                rep.counts.tn,
                rep.premature_stops
            );
        }
        Command::Ablation { .. } => {
            let d = &run.cfg.duplex;
            let missing = |field: &str| Error::Config(format!("missing required field: {field}"));
            let tts_path = d.pretrained_tts.clone().ok_or_else(|| missing("duplex.pretrained_tts (--tts)"))?;
            let lis_path = d.pretrained_listener.clone().ok_or_else(|| missing("duplex.pretrained_listener (--listener)"))?;
            let vanilla = LslmModel::load(&tts_path)?;
            let listener = load_listener(&lis_path)?;
            let data = run.data()?;
            let outcome =
                run_ablation(&run.cfg.duplex, &run.cfg.model, &run.cfg.world, &data, &vanilla, &listener, run.cfg.sampler)?;
            fs::create_dir_all(run.out.join("ablation"))?;
            for (label, model) in &outcome.models {
                model.save(run.path(&format!("ablation/{label}.ckpt")))?;
            }
            run.write_json("ablation.json", &serde_json::json!({ "report": outcome.report, "frozen": outcome.frozen }))?;
            let text = outcome.report.render_text();
            fs::write(run.path("ablation.txt"), &text)?;
            print!("{text}");
            for f in &outcome.frozen {
                println!("frozen {} in {}: {}", f.group, f.label, if f.unchanged { "unchanged" } else { "CHANGED" });
            }
            if outcome.frozen.iter().any(|f| !f.unchanged) {
                return Err(Error::Contract("a frozen parameter group changed during training".into()));
            }
        }
        Command::TraceIrq { condition, .. } => {
            let model = load_model(run.cfg.require_checkpoint()?)?;
            let data = run.data()?;
            let w = run.cfg.world.clone();
            let (_, results) =
                run_interactive_eval(&model, condition.records(&data), condition, w.detection_window(), run.cfg.sampler)?;
            let traces: Vec<IrqTrace> = results.iter().map(IrqTrace::from_result).collect();
            write_traces(run.path("irq_traces.json"), &traces)?;
            let stats = irq_trace_stats(&results, w.mu_frames, w.detection_window());
            run.write_json("irq_stats.json", &stats)?;
            println!(
                "{} of {} interrupted items rise at least tenfold ({}); median rise {:.1}",
                (stats.frac_rise_ge_threshold * stats.n_defined as f32).round(),
                stats.n_defined,
                pct(stats.frac_rise_ge_threshold),
                stats.median_rise_ratio
            );
        }
        Command::Serve { listen, tcp, .. } => {
            let model = LslmModel::load(run.cfg.require_checkpoint()?)?;
            if let Some(dir) = &run.cfg.data_dir {
                run.cfg.world = Dataset::read_dir(dir)?.manifest.world;
            }
            let state = Arc::new(ServerState::new(model, run.cfg.world.clone())?);
            let manifest = state.manifest.clone();
            run.write_json("serve_manifest.json", &manifest)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, listen, tcp))?;
        }
        Command::ShowConfig => unreachable!("handled above"),
    }
    run.finish()
}
