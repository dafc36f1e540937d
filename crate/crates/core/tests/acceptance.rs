//! Acceptance suite: one line per criterion, non-zero exit on any failure.
//!
//!     cargo test --release --test acceptance

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use lslm::cli::RunConfig;
use lslm::eval::{irq_trace_stats, run_ablation, run_interactive_eval, run_tts_eval, Condition, ABLATION_MODES};
use lslm::model::{FusionStrategy, LslmModel, ModelConfig};
use lslm::runtime::OfflineResult;
use lslm::train::{
    pretrain_listener, pretrain_tts, train_lslm, ListenerRun, ListeningInit, Pretrained, SpeakingInit, TrainConfig,
};
use lslm::world::{make_dataset, Dataset, Scenario, WorldConfig};

/// Probabilities below this are drawn at the floor of a log-scale plot.
const PLOT_FLOOR: f32 = 1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, id: &str, title: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let mut o = f();
        let took = t.elapsed();
        if let Some(b) = budget {
            if took > b {
                o.pass = false;
                o.detail.push_str(&format!("; over the {}s budget", b.as_secs()));
            }
        }
        self.failed += usize::from(!o.pass);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{id:<4} {verdict}  {title}: {} [{:.1}s]", o.detail, took.as_secs_f64());
    }
}

fn pct(x: f32) -> String {
    format!("{:.2}%", 100.0 * x)
}

/// Shared products of the training criteria.
struct Trained {
    cfg: RunConfig,
    data: Dataset,
    tts: LslmModel,
    tts_ter: f32,
    listener: ListenerRun,
    lslm: Option<LslmModel>,
    clean_results: Vec<OfflineResult>,
}

fn train_duplex(cfg: &RunConfig, tts: &LslmModel, listener: &ListenerRun, data: &Dataset) -> lslm::Result<LslmModel> {
    let model_cfg = cfg.model.clone().with_fusion(FusionStrategy::Middle);
    let pre = Pretrained { tts: Some(tts.params.clone()), listener: Some(listener.encoder.clone()) };
    Ok(train_lslm(&cfg.duplex, &model_cfg, cfg.world.mu_frames, &pre, &data.train, &data.val)?.model)
}

fn interactive(model: &Arc<LslmModel>, cfg: &RunConfig, data: &Dataset, c: Condition) -> lslm::Result<(f32, Vec<OfflineResult>)> {
    let (rep, results) = run_interactive_eval(model, c.records(data), c, cfg.world.detection_window(), cfg.sampler)?;
    Ok((rep.metrics.f1, results))
}

fn main() {
    let mut suite = Suite { failed: 0 };
    let minute = Duration::from_secs(60);

    suite.run("P1", "numeric core", Some(minute), || {
        let ops = common::all_grad_checks(20, 1);
        let (worst_op, worst) = ops.iter().fold(("", 0.0f64), |a, &(n, e)| if e > a.1 { (n, e) } else { a });
        let mut e2e = 0.0f64;
        for fusion in FusionStrategy::ALL {
            for seed in 2..5 {
                for (_, e) in common::fdm_gradient_check(fusion, seed) {
                    e2e = e2e.max(e);
                }
            }
        }
        let inv = common::norm_invariant_failures(20, 4);
        outcome(
            worst < 1e-3 && e2e < 1e-2 && inv == 0,
            format!("{} ops max rel err {worst:.1e} ({worst_op}); loss gradient max rel err {e2e:.1e}; invariant failures {inv}/20", ops.len()),
        )
    });

    suite.run("P2", "zero-listen equivalence", Some(minute), || {
        let counts: Vec<(FusionStrategy, usize)> =
            FusionStrategy::ALL.iter().map(|&f| (f, common::zero_listen_mismatches(f, 10, 11))).collect();
        let detail: Vec<String> = counts.iter().map(|(f, n)| format!("{f:?} {n}/10")).collect();
        outcome(counts.iter().all(|(_, n)| *n == 0), format!("mismatches {}", detail.join(", ")))
    });

    suite.run("P3", "causality", Some(2 * minute), || {
        let reps: Vec<_> = FusionStrategy::ALL.iter().map(|&f| (f, common::causality_probes(f, 50, 21))).collect();
        let pass = reps.iter().all(|(_, r)| r.probes == 50 && r.violations == 0 && r.effective > 0);
        let detail = reps
            .iter()
            .map(|(f, r)| format!("{f:?} {} violations, {} effective of {}", r.violations, r.effective, r.probes))
            .collect::<Vec<_>>()
            .join("; ");
        outcome(pass, detail)
    });

    suite.run("P4", "streaming equivalence", Some(2 * minute), || {
        let diff = common::streaming_max_diff(20, 31);
        let model = LslmModel::new(ModelConfig::tiny().with_seed(5)).unwrap();
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        let bad = rt.block_on(common::lockstep_vs_offline(model, 8));
        outcome(diff < 1e-4 && bad == 0, format!("max |Δlogit| {diff:.1e} over 20 sessions; lockstep mismatches {bad}/8"))
    });

    suite.run("P5", "metric oracles", None, || {
        let (pairs, bad) = common::edit_distance_exhaustive(3, 6);
        let fixtures = common::metric_fixture_failures();
        outcome(bad == 0 && fixtures.is_empty(), format!("edit distance {bad} mismatches of {pairs} pairs; failing fixtures {fixtures:?}"))
    });

    let mut cfg = RunConfig::default();
    cfg.apply_seeds();
    let mut trained: Option<Trained> = None;

    suite.run("P6", "vanilla TTS", Some(30 * minute), || {
        let run = || -> lslm::Result<Trained> {
            let data = make_dataset(&cfg.world)?;
            let tts = pretrain_tts(&cfg.tts, &cfg.model, &data.train, &data.val)?.model;
            let shared = Arc::new(tts.clone());
            let ter = run_tts_eval(&shared, &data.tts_test, &cfg.world.codebook(), cfg.sampler)?.transcript_error_rate;
            let listener = pretrain_listener(&cfg.listener, &cfg.model, &data.train, &data.val)?;
            Ok(Trained { cfg: cfg.clone(), data, tts, tts_ter: ter, listener, lslm: None, clean_results: Vec::new() })
        };
        match run() {
            Ok(t) => {
                let o = outcome(
                    t.tts_ter <= 0.02 && t.data.tts_test.len() == 500,
                    format!("transcript error {} on {} utterances (ceiling 2%)", pct(t.tts_ter), t.data.tts_test.len()),
                );
                trained = Some(t);
                o
            }
            Err(e) => outcome(false, format!("error: {e}")),
        }
    });

    suite.run("P7", "command duplex, middle fusion", Some(45 * minute), || {
        let Some(t) = trained.as_mut() else { return outcome(false, "needs the P6 model") };
        let run = || -> lslm::Result<(LslmModel, f32, f32, f32, Vec<OfflineResult>)> {
            let model = Arc::new(train_duplex(&t.cfg, &t.tts, &t.listener, &t.data)?);
            let (clean, results) = interactive(&model, &t.cfg, &t.data, Condition::Clean)?;
            let (noise, _) = interactive(&model, &t.cfg, &t.data, Condition::Noise)?;
            let ter = run_tts_eval(&model, &t.data.tts_test, &t.cfg.world.codebook(), t.cfg.sampler)?.transcript_error_rate;
            Ok(((*model).clone(), clean, noise, ter, results))
        };
        match run() {
            Ok((model, clean, noise, ter, results)) => {
                let n = (t.data.test.len(), t.data.test_noise.len());
                t.lslm = Some(model);
                t.clean_results = results;
                outcome(
                    clean >= 0.95 && noise >= 0.90 && ter <= t.tts_ter + 0.01,
                    format!(
                        "F1 clean {} noise {} on {}+{} items; transcript error {} vs vanilla {}",
                        pct(clean),
                        pct(noise),
                        n.0,
                        n.1,
                        pct(ter),
                        pct(t.tts_ter)
                    ),
                )
            }
            Err(e) => outcome(false, format!("error: {e}")),
        }
    });

    suite.run("P8", "voice duplex, held-out speakers", None, || {
        let Some(t) = trained.as_ref() else { return outcome(false, "needs the P6 model") };
        let run = || -> lslm::Result<(f32, f32)> {
            let mut cfg = t.cfg.clone();
            cfg.world.scenario = Scenario::Voice;
            let data = make_dataset(&cfg.world)?;
            let listener = pretrain_listener(&cfg.listener, &cfg.model, &data.train, &data.val)?;
            let model = Arc::new(train_duplex(&cfg, &t.tts, &listener, &data)?);
            Ok((interactive(&model, &cfg, &data, Condition::Clean)?.0, interactive(&model, &cfg, &data, Condition::Noise)?.0))
        };
        match run() {
            Ok((clean, noise)) => outcome(
                clean >= 0.80,
                format!(
                    "F1 clean {} noise {} (noise {} clean)",
                    pct(clean),
                    pct(noise),
                    if noise < clean { "below" } else { "not below" }
                ),
            ),
            Err(e) => outcome(false, format!("error: {e}")),
        }
    });

    suite.run("P9", "IRQ trace", None, || {
        let Some(t) = trained.as_ref().filter(|t| t.lslm.is_some()) else { return outcome(false, "needs the P7 model") };
        let mu = t.cfg.world.mu_frames;
        let st = irq_trace_stats(&t.clean_results, mu, 2 * mu);
        let after: Vec<f32> = st.median_curve.iter().filter(|(o, _)| *o >= 0).map(|&(_, p)| p.max(PLOT_FLOOR)).collect();
        let monotone = after.windows(2).all(|w| w[1] >= w[0]);
        let rising = after.first().zip(after.last()).is_some_and(|(a, b)| b > a);
        let curve: Vec<String> = st.median_curve.iter().map(|(o, p)| format!("{o}:{p:.0e}")).collect();
        outcome(
            st.frac_rise_ge_threshold >= 0.90 && monotone && rising && st.n_defined > 0,
            format!(
                "rise ratio >= 10 for {} of {} items; median after onset {}; curve {}",
                pct(st.frac_rise_ge_threshold),
                st.n_defined,
                if monotone && rising { "monotone rising" } else { "not monotone rising" },
                curve.join(" ")
            ),
        )
    });

    suite.run("P10", "ablation harness", None, || {
        let Some(t) = trained.as_ref() else { return outcome(false, "needs the P6 model") };
        let base = TrainConfig { total_steps: Some(150), warmup_steps: 20, ..t.cfg.duplex.clone() };
        let mut data = t.data.clone();
        data.tts_test.truncate(50);
        data.test.truncate(100);
        data.test_noise.truncate(100);
        let model_cfg = t.cfg.model.clone().with_fusion(FusionStrategy::Middle);
        match run_ablation(&base, &model_cfg, &t.cfg.world, &data, &t.tts, &t.listener.encoder, t.cfg.sampler) {
            Ok(out) => {
                let rows = &out.report.rows;
                let lines = out.report.render_text().lines().count();
                let expected_frozen = ABLATION_MODES
                    .iter()
                    .map(|(s, l)| usize::from(*s == SpeakingInit::Frozen) + usize::from(*l == ListeningInit::Frozen))
                    .sum::<usize>();
                let frozen_ok = out.frozen.len() == expected_frozen && out.frozen.iter().all(|c| c.unchanged);
                outcome(
                    rows.len() == 7 && rows.iter().all(|r| !r.absent) && lines == 8 && frozen_ok,
                    format!(
                        "{} rows, {} absent; {} frozen groups checked, {} changed",
                        rows.len(),
                        rows.iter().filter(|r| r.absent).count(),
                        out.frozen.len(),
                        out.frozen.iter().filter(|c| !c.unchanged).count()
                    ),
                )
            }
            Err(e) => outcome(false, format!("error: {e}")),
        }
    });

    suite.run("P11", "data contract", None, || {
        let mut failed = Vec::new();
        let mut total = 0;
        for scenario in [Scenario::Command, Scenario::Voice] {
            for (name, ok) in common::data_contract(scenario, WorldConfig::default().seed + 3) {
                total += 1;
                if !ok {
                    failed.push(format!("{scenario:?}: {name}"));
                }
            }
        }
        outcome(failed.is_empty(), format!("{} of {total} invariants hold; failing {failed:?}", total - failed.len()))
    });

    if suite.failed > 0 {
        println!("{} criteria failed", suite.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
