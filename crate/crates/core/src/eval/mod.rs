//! Measurements: error rates, interruption confusion metrics, IRQ trace
//! statistics and the ablation table.

mod ablation;
mod metrics;
mod run;
mod stats;

pub use ablation::{mode_label, run_ablation, AblationOutcome, AblationReport, AblationRow, FrozenCheck, ABLATION_MODES};
pub use metrics::{
    aggregate, classify_outcome, edit_distance, is_premature, token_error_rate, transcript_edits,
    transcript_error_rate, ConfusionCounts, Metrics, Outcome,
};
pub use run::{
    run_interactive_eval, run_items, run_tts_eval, score_interactive, Condition, InteractiveItem,
    InteractiveReport, TtsEvalReport, TtsItem,
};
pub use stats::{irq_trace_stats, item_stats, median, IrqTraceStats, ItemTraceStats, RISE_THRESHOLD};
