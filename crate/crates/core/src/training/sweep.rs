//! Boundary metrics as a function of the maximum segment length `M`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{evaluate, tokenize_all, train, EvalOptions, Metrics, TrainConfig};
use crate::error::{Error, Result};
use crate::model::SegmenterModel;
use crate::textprep::LabeledDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Evaluate the given model with each `M`.
    Reevaluate,
    /// Train a fresh model per `M` (configs and vocabulary from the template).
    Retrain,
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reeval" | "reevaluate" => Ok(SweepMode::Reevaluate),
            "retrain" => Ok(SweepMode::Retrain),
            other => Err(Error::Config(format!("unknown sweep mode {other:?} (expected reeval or retrain)"))),
        }
    }
}

impl SweepMode {
    fn as_str(self) -> &'static str {
        match self {
            SweepMode::Reevaluate => "reeval",
            SweepMode::Retrain => "retrain",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub max_len: usize,
    pub mode: SweepMode,
    /// `None` when this `M` was skipped; `note` says why.
    pub metrics: Option<Metrics>,
    pub note: String,
}

/// Runs one evaluation per entry of `m_values`. Invalid values are reported
/// as skipped rows rather than errors.
pub fn sweep_input_length(
    template: &SegmenterModel,
    eval_docs: &[LabeledDocument],
    train_docs: Option<(&[LabeledDocument], &TrainConfig)>,
    m_values: &[usize],
    mode: SweepMode,
    opts: &EvalOptions,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let mut pre = template.preprocess.clone();
        pre.max_segment_tokens = m;
        let skip = |note: String| SweepRow { max_len: m, mode, metrics: None, note };
        if let Err(e) = pre.validate() {
            rows.push(skip(format!("skipped: {e}")));
            continue;
        }
        let model = match mode {
            SweepMode::Reevaluate => {
                if m > template.encoder_config.max_positions {
                    rows.push(skip(format!("skipped: exceeds max_positions {}", template.encoder_config.max_positions)));
                    continue;
                }
                let mut model = template.clone();
                model.preprocess = pre;
                model
            }
            SweepMode::Retrain => {
                let (docs, base) = train_docs
                    .ok_or_else(|| Error::Config("retrain sweep needs training documents".into()))?;
                let mut cfg = base.clone();
                cfg.preprocess = pre;
                cfg.encoder = template.encoder_config.clone();
                cfg.encoder.max_positions = cfg.encoder.max_positions.max(m);
                cfg.csfm = template.csfm_config.clone();
                let tokenized = tokenize_all(docs, &template.vocab, &cfg.preprocess)?;
                train(&tokenized, &template.vocab, &cfg)?.model
            }
        };
        let eval = tokenize_all(eval_docs, &model.vocab, &model.preprocess)?;
        let metrics = evaluate(&eval, &model, opts)?;
        rows.push(SweepRow { max_len: m, mode, metrics: Some(metrics), note: String::new() });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("max_len,mode,tp,fp,fn,precision,recall,f1,note\n");
    for r in rows {
        let note = r.note.replace([',', '\n'], ";");
        match &r.metrics {
            Some(m) => writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{}",
                r.max_len,
                r.mode.as_str(),
                m.tp,
                m.fp,
                m.fn_,
                m.precision,
                m.recall,
                m.f1,
                note
            ),
            None => writeln!(out, "{},{},,,,,,,{}", r.max_len, r.mode.as_str(), note),
        }
        .expect("writing to a String");
    }
    out
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::write(path, sweep_csv(rows)).map_err(|e| Error::io(path, e))
}
