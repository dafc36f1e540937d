//! Runs the clean interactive test set through a trained model and
//! summarizes how P(IRQ) rises after the command onset.
//!
//!     cargo run --release --example irq_trace -- <lslm.ckpt> [traces.json]

use std::sync::Arc;

use lslm::eval::{irq_trace_stats, run_interactive_eval, Condition};
use lslm::model::LslmModel;
use lslm::runtime::{write_traces, IrqTrace, SamplerConfig};
use lslm::world::{make_dataset, WorldConfig};

fn main() -> lslm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args.first().map(String::as_str).unwrap_or("lslm.ckpt");
    let out = args.get(1).map(String::as_str).unwrap_or("irq_traces.json");

    let model = Arc::new(LslmModel::load(path)?);
    let world = WorldConfig { train_size: 0, val_size: 0, test_size: 200, tts_test_size: 0, ..WorldConfig::default() };
    let data = make_dataset(&world)?;
    let (report, results) =
        run_interactive_eval(&model, &data.test, Condition::Clean, world.detection_window(), SamplerConfig::default())?;
    println!("F1 {:.2}% over {} items", 100.0 * report.metrics.f1, data.test.len());

    let mu = world.mu_frames;
    let st = irq_trace_stats(&results, mu, 2 * mu);
    println!(
        "rise ratio >= 10 for {:.1}% of {} items, median pre-onset P(IRQ) {:.1e}",
        100.0 * st.frac_rise_ge_threshold,
        st.n_defined,
        st.median_pre_onset
    );
    if let Some(s) = st.median_steps_to_stop {
        println!("median stop {s} steps after onset");
    }
    for (off, p) in &st.median_curve {
        let bar = "#".repeat(((p.max(1e-6).log10() + 6.0) * 8.0).round() as usize);
        println!("{off:>+3} {p:>9.2e} {bar}");
    }
    let traces: Vec<IrqTrace> = results.iter().map(IrqTrace::from_result).collect();
    write_traces(out, &traces)?;
    println!("wrote {out}");
    Ok(())
}
