//! Radio-call understanding: who spoke and what they intend.

pub mod context;
#[cfg(feature = "external")]
pub mod external;
pub mod intent;
pub mod normalize;
pub mod speaker;
pub mod wer;

use std::fmt::Write as _;

use thiserror::Error;

use std::collections::BTreeMap;

use crate::airspace::{AirportConfig, IntentLabel};
use crate::data::{LabeledCall, RadioCall, Track};

pub use context::{
    build_dynamic_context, AircraftDirectory, AircraftDirectoryEntry, DynamicContext, StaticContext,
};
pub use intent::extract_intent;
pub use normalize::{normalize_transcript, Token, TokenStream};
pub use speaker::identify_speaker;
pub use wer::{raw_word_error_rate, word_error_rate};

#[derive(Debug, Error)]
pub enum RadioError {
    #[error("undefined WER: reference is empty after normalization")]
    UndefinedWer,
    #[error("aircraft directory: {0}")]
    Directory(String),
    #[error("cannot score an empty set of predictions")]
    EmptyScoring,
    #[error("predictions ({0}) and truths ({1}) differ in length")]
    LengthMismatch(usize, usize),
    #[error("labeled calls line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Speaker and intent for one call.
#[derive(Debug, Clone, PartialEq)]
pub struct CallLabel {
    pub speaker: Option<String>,
    pub intent: IntentLabel,
}

/// Offline parse of one transcript against the aircraft currently nearby.
pub fn parse_call(transcript: &str, context: &DynamicContext, airport: &AirportConfig) -> CallLabel {
    let tokens = normalize_transcript(transcript);
    CallLabel { speaker: identify_speaker(&tokens, context), intent: extract_intent(&tokens, airport) }
}

/// Labels every call against the aircraft airborne or taxiing at its time.
pub fn label_calls(
    calls: &[RadioCall],
    directory: &AircraftDirectory,
    tracks: &BTreeMap<String, Track>,
    airport: &AirportConfig,
) -> Vec<LabeledCall> {
    calls
        .iter()
        .map(|c| {
            let states: Vec<(String, crate::airspace::LocalPosition)> =
                tracks.values().filter_map(|t| t.position_at(c.time).map(|p| (t.aircraft_id.clone(), p))).collect();
            let (ctx, _) = build_dynamic_context(directory, &states);
            let label = parse_call(&c.transcript, &ctx, airport);
            LabeledCall { time: c.time, speaker: label.speaker, intent: label.intent }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelingScores {
    pub speaker_id_accuracy: f64,
    pub intent_label_accuracy: f64,
}

pub fn score_labeling(predictions: &[CallLabel], truths: &[CallLabel]) -> Result<LabelingScores, RadioError> {
    if predictions.len() != truths.len() {
        return Err(RadioError::LengthMismatch(predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(RadioError::EmptyScoring);
    }
    let n = predictions.len() as f64;
    let pairs = || predictions.iter().zip(truths);
    Ok(LabelingScores {
        speaker_id_accuracy: pairs().filter(|(p, t)| p.speaker == t.speaker).count() as f64 / n,
        intent_label_accuracy: pairs().filter(|(p, t)| p.intent == t.intent).count() as f64 / n,
    })
}

/// Labeled-call output: `time_s,speaker,intent,confidence_note` per line,
/// with `Unknown` for an unidentified speaker.
pub fn write_labeled_calls(rows: &[(f64, CallLabel, String)]) -> String {
    let mut out = String::from("time_s,speaker,intent,confidence_note\n");
    for (t, label, note) in rows {
        let speaker = label.speaker.as_deref().unwrap_or("Unknown");
        let _ = writeln!(out, "{t},{speaker},{},{}", label.intent, note.replace([',', '\n'], " "));
    }
    out
}

/// Inverse of [`write_labeled_calls`]; the note column is dropped.
pub fn read_labeled_calls(text: &str) -> Result<Vec<LabeledCall>, RadioError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "time_s,speaker,intent,confidence_note" => {}
        _ => return Err(RadioError::Format { line: 1, msg: "missing header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| RadioError::Format { line: i + 1, msg };
        let mut cols = line.splitn(4, ',');
        let (Some(t), Some(speaker), Some(intent)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(bad("expected at least 3 columns".into()));
        };
        let time: f64 = t.trim().parse().map_err(|_| bad(format!("bad time {t:?}")))?;
        if !time.is_finite() {
            return Err(bad(format!("bad time {t:?}")));
        }
        let intent: IntentLabel = intent.trim().parse().map_err(|_| bad(format!("bad intent {intent:?}")))?;
        let speaker = match speaker.trim() {
            "" | "Unknown" => None,
            s => Some(s.to_string()),
        };
        out.push(LabeledCall { time, speaker, intent });
    }
    Ok(out)
}
