use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::run::{run_interactive_eval, run_tts_eval, Condition};
use crate::error::Result;
use crate::model::{LslmModel, ModelConfig, ENCODER_GROUP, SPEAKING_GROUP};
use crate::runtime::SamplerConfig;
use crate::tensor::ParamStore;
use crate::train::{train_lslm, ListeningInit, Pretrained, SpeakingInit, TrainConfig};
use crate::world::{Dataset, WorldConfig};

/// The six duplex training-mode combinations, in table order.
pub const ABLATION_MODES: [(SpeakingInit, ListeningInit); 6] = [
    (SpeakingInit::Scratch, ListeningInit::Frozen),
    (SpeakingInit::Scratch, ListeningInit::Finetune),
    (SpeakingInit::Frozen, ListeningInit::Frozen),
    (SpeakingInit::Frozen, ListeningInit::Finetune),
    (SpeakingInit::Finetune, ListeningInit::Frozen),
    (SpeakingInit::Finetune, ListeningInit::Finetune),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    /// `None` for the vanilla row.
    pub speaking: Option<SpeakingInit>,
    pub listening: Option<ListeningInit>,
    /// Set when the row's checkpoint or results are missing.
    pub absent: bool,
    pub transcript_error_rate: Option<f32>,
    pub precision: Option<f32>,
    pub recall: Option<f32>,
    pub f1: Option<f32>,
}

impl AblationRow {
    pub fn absent(label: &str, speaking: Option<SpeakingInit>, listening: Option<ListeningInit>) -> Self {
        Self {
            label: label.to_string(),
            speaking,
            listening,
            absent: true,
            transcript_error_rate: None,
            precision: None,
            recall: None,
            f1: None,
        }
    }
}

pub fn mode_label(s: SpeakingInit, l: ListeningInit) -> String {
    let name = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
    format!(
        "lslm_s-{}_l-{}",
        name(serde_json::to_value(s).unwrap_or_default()),
        name(serde_json::to_value(l).unwrap_or_default())
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

fn pct(v: Option<f32>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

impl AblationReport {
    /// Aligned text table; rates in percent, `-` where a metric does not
    /// apply or the row is absent.
    pub fn render_text(&self) -> String {
        let header = ["Model", "Speaking", "Listening", "TER", "Precision", "Recall", "F1"];
        let mut rows: Vec<[String; 7]> = vec![header.map(String::from)];
        for r in &self.rows {
            let label = if r.absent { format!("{} (absent)", r.label) } else { r.label.clone() };
            rows.push([
                label,
                r.speaking.map_or("-", SpeakingInit::symbol).to_string(),
                r.listening.map_or("-", ListeningInit::symbol).to_string(),
                pct(r.transcript_error_rate),
                pct(r.precision),
                pct(r.recall),
                pct(r.f1),
            ]);
        }
        let widths: Vec<usize> = (0..7).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| {
                    let pad = w - s.chars().count();
                    if c == 0 { format!("{s}{}", " ".repeat(pad)) } else { format!("{}{s}", " ".repeat(pad)) }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Whether a frozen group came out of training bit-for-bit unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenCheck {
    pub label: String,
    pub group: String,
    pub unchanged: bool,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub report: AblationReport,
    pub frozen: Vec<FrozenCheck>,
    /// Trained model of each mode, in [`ABLATION_MODES`] order.
    pub models: Vec<(String, LslmModel)>,
}

fn bitwise_equal(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len()
        && a.iter().all(|(name, t)| {
            b.get(name).is_ok_and(|u| {
                t.shape() == u.shape() && t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
        })
}

/// Trains every mode of [`ABLATION_MODES`] from `base` (only the init
/// modes change) and scores it next to the vanilla model: transcript error
/// on the TTS test set, precision/recall/F1 on the clean interactive set.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    base: &TrainConfig,
    model_cfg: &ModelConfig,
    world: &WorldConfig,
    data: &Dataset,
    vanilla: &LslmModel,
    listener: &ParamStore,
    sampler: SamplerConfig,
) -> Result<AblationOutcome> {
    let codebook = world.codebook();
    let vanilla = Arc::new(vanilla.clone());
    let tts = run_tts_eval(&vanilla, &data.tts_test, &codebook, sampler)?;
    let mut rows = vec![AblationRow {
        absent: false,
        transcript_error_rate: Some(tts.transcript_error_rate),
        ..AblationRow::absent("vanilla", None, None)
    }];
    let pre = Pretrained { tts: Some(vanilla.params.subset(SPEAKING_GROUP)), listener: Some(listener.subset(ENCODER_GROUP)) };
    let mut frozen = Vec::new();
    let mut models = Vec::new();
    for (s, l) in ABLATION_MODES {
        let label = mode_label(s, l);
        log::info!("ablation: training {label}");
        let cfg = TrainConfig { speaking_init: s, listening_init: l, ..base.clone() };
        let run = train_lslm(&cfg, model_cfg, world.mu_frames, &pre, &data.train, &data.val)?;
        let pairs = [
            (s == SpeakingInit::Frozen, SPEAKING_GROUP, pre.tts.as_ref()),
            (l == ListeningInit::Frozen, ENCODER_GROUP, pre.listener.as_ref()),
        ];
        for (is_frozen, group, reference) in pairs {
            if let (true, Some(reference)) = (is_frozen, reference) {
                let unchanged = bitwise_equal(&run.model.params.subset(group), &reference.subset(group));
                frozen.push(FrozenCheck { label: label.clone(), group: group.to_string(), unchanged });
            }
        }
        let model = Arc::new(run.model);
        let tts = run_tts_eval(&model, &data.tts_test, &codebook, sampler)?;
        let (rep, _) =
            run_interactive_eval(&model, Condition::Clean.records(data), Condition::Clean, world.detection_window(), sampler)?;
        rows.push(AblationRow {
            absent: false,
            transcript_error_rate: Some(tts.transcript_error_rate),
            precision: Some(rep.metrics.precision),
            recall: Some(rep.metrics.recall),
            f1: Some(rep.metrics.f1),
            ..AblationRow::absent(&label, Some(s), Some(l))
        });
        models.push((label, Arc::try_unwrap(model).unwrap_or_else(|m| (*m).clone())));
    }
    Ok(AblationOutcome { report: AblationReport { rows }, frozen, models })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_rows_render() {
        let mut rows = vec![AblationRow {
            transcript_error_rate: Some(0.01),
            absent: false,
            ..AblationRow::absent("vanilla", None, None)
        }];
        for (s, l) in ABLATION_MODES {
            rows.push(AblationRow {
                absent: false,
                transcript_error_rate: Some(0.02),
                precision: Some(0.9),
                recall: Some(0.95),
                f1: Some(0.924),
                ..AblationRow::absent(&mode_label(s, l), Some(s), Some(l))
            });
        }
        rows[3] = AblationRow::absent(&rows[3].label, rows[3].speaking, rows[3].listening);
        let report = AblationReport { rows };
        let text = report.render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 8);
        assert!(lines[1].starts_with("vanilla") && lines[1].ends_with('-'));
        assert!(lines[4].contains("(absent)"));
        assert!(lines[2].ends_with("92.40"));
        let json = serde_json::to_string(&report).unwrap();
        let back: AblationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.rows.len(), 7);
        assert!(back.rows[0].f1.is_none());
    }
}
