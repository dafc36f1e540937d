use serde::{Deserialize, Serialize};

use crate::runtime::{OfflineResult, StopReason, PROB_FLOOR};

/// Rise ratios at or above this count as a clear reaction to the command.
pub const RISE_THRESHOLD: f32 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTraceStats {
    pub onset: usize,
    /// `None` when the item has no pre-onset steps (onset 0).
    pub pre_onset_median: Option<f32>,
    /// Zero when generation stopped before the onset.
    pub post_onset_max: f32,
    pub rise_ratio: Option<f32>,
    /// Steps from onset to an IRQ stop at or after the onset.
    pub steps_to_stop: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrqTraceStats {
    pub n_items: usize,
    /// Items whose rise ratio is defined.
    pub n_defined: usize,
    pub frac_rise_ge_threshold: f32,
    pub median_rise_ratio: f32,
    pub median_pre_onset: f32,
    pub median_steps_to_stop: Option<f32>,
    /// `(step − onset, median P(IRQ))` over items that reached that step.
    pub median_curve: Vec<(i64, f32)>,
    pub items: Vec<ItemTraceStats>,
}

pub fn median(values: &mut [f32]) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f32::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Per-item rise of P(IRQ) after the onset.
pub fn item_stats(trace: &[f32], onset: usize, stop_reason: StopReason, stop_step: usize) -> ItemTraceStats {
    let pre_onset_median = median(&mut trace[..onset.min(trace.len())].to_vec());
    let post_onset_max = trace.get(onset..).map_or(0.0, |t| t.iter().copied().fold(0.0, f32::max));
    let rise_ratio = pre_onset_median.map(|m| post_onset_max / m.max(PROB_FLOOR));
    let steps_to_stop = (stop_reason == StopReason::Irq && stop_step >= onset).then(|| stop_step - onset);
    ItemTraceStats { onset, pre_onset_median, post_onset_max, rise_ratio, steps_to_stop }
}

/// Aggregates traces of interrupted items; items without onset are skipped.
pub fn irq_trace_stats(results: &[OfflineResult], before: usize, after: usize) -> IrqTraceStats {
    let interrupted: Vec<&OfflineResult> = results.iter().filter(|r| r.onset.is_some()).collect();
    let items: Vec<ItemTraceStats> = interrupted
        .iter()
        .map(|r| item_stats(&r.irq_trace, r.onset.unwrap_or(0), r.stop.reason, r.stop.step))
        .collect();
    let mut ratios: Vec<f32> = items.iter().filter_map(|i| i.rise_ratio).collect();
    let n_defined = ratios.len();
    let hits = ratios.iter().filter(|&&r| r >= RISE_THRESHOLD).count();
    let mut pre: Vec<f32> = items.iter().filter_map(|i| i.pre_onset_median).collect();
    let mut stops: Vec<f32> = items.iter().filter_map(|i| i.steps_to_stop.map(|s| s as f32)).collect();
    let mut median_curve = Vec::new();
    for off in -(before as i64)..=(after as i64) {
        let mut vals: Vec<f32> = interrupted
            .iter()
            .filter_map(|r| {
                let j = r.onset.unwrap_or(0) as i64 + off;
                (j >= 0).then(|| r.irq_trace.get(j as usize).copied()).flatten()
            })
            .collect();
        if let Some(m) = median(&mut vals) {
            median_curve.push((off, m));
        }
    }
    IrqTraceStats {
        n_items: items.len(),
        n_defined,
        frac_rise_ge_threshold: hits as f32 / n_defined.max(1) as f32,
        median_rise_ratio: median(&mut ratios).unwrap_or(0.0),
        median_pre_onset: median(&mut pre).unwrap_or(0.0),
        median_steps_to_stop: median(&mut stops),
        median_curve,
        items,
    }
}
