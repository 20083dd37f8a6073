//! Conditional entropies of the two voices and their combination, and the
//! total information flow they imply.
//!
//! For voices X and Y and their merged score XY,
//!
//! ```text
//! flow = H(X | past X) + H(Y | past Y) - H(XY | past XY)
//! ```
//!
//! Each conditional entropy is estimated by sliding over the note events of
//! the encoded sequence, asking the model for the next-event distribution
//! given the preceding window, and averaging a per-step entropy:
//!
//! * [`EntropyMode::Nll`]: the surprisal `-ln p(actual value)`, an unbiased
//!   plug-in for the conditional entropy;
//! * [`EntropyMode::Predictive`]: the entropy `-Σ p ln p` of the predicted
//!   distribution.
//!
//! Both are computed per field, so flow can be broken down by field.
//!
//! # Units
//!
//! The merged score has as many events as both voices together, so
//! per-event averages of X, Y and XY are not on a common scale. With
//! [`Normalization::PerBeat`] (the default) each per-event mean is scaled by
//! the stream's event density, giving an entropy rate in nats per beat over
//! the shared span of the piece. [`Normalization::PerEvent`] keeps the raw
//! per-event means.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{encode, span_beats, EventSequence, Field, PerField};
use crate::model::ContextModel;
use crate::piece::{merge_tracks, Track};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMode {
    #[default]
    Nll,
    Predictive,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    PerBeat,
    PerEvent,
}

impl Normalization {
    fn units(self) -> &'static str {
        match self {
            Normalization::PerBeat => "nats/beat",
            Normalization::PerEvent => "nats/event",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Events visible to the model before each scored event.
    pub context_len: usize,
    /// Leading note events used only as context.
    pub burn_in: usize,
    pub mode: EntropyMode,
    pub normalization: Normalization,
    /// Give Y's programs a distinct id where they collide with X's.
    pub remap_shared_program: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            context_len: 64,
            burn_in: 16,
            mode: EntropyMode::Nll,
            normalization: Normalization::PerBeat,
            remap_shared_program: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTrace {
    pub mode: EntropyMode,
    pub context_len: usize,
    pub burn_in: usize,
    /// Note events in the scored sequence, burn-in included.
    pub note_events: usize,
    /// One entry per scored note event, in nats.
    pub steps: Vec<PerField<f64>>,
}

impl EntropyTrace {
    pub fn means(&self) -> PerField<f64> {
        let n = self.steps.len() as f64;
        let mut sums = PerField([0.0; 6]);
        for step in &self.steps {
            for field in Field::ALL {
                sums[field] += step[field];
            }
        }
        sums.map(|_, s| s / n)
    }
}

/// Per-step, per-field entropies over the note events of `seq`.
///
/// The first `burn_in` notes are skipped; every later note is scored with
/// the `context_len` events before it as context (header included).
pub fn conditional_entropy(
    model: &ContextModel,
    seq: &EventSequence,
    context_len: usize,
    burn_in: usize,
    mode: EntropyMode,
) -> Result<EntropyTrace> {
    let events = seq.events();
    let note_indices: Vec<usize> = (0..events.len()).filter(|&i| events[i].is_note()).collect();
    if note_indices.len() <= burn_in {
        return Err(Error::TooShort {
            stream: "sequence".into(),
            notes: note_indices.len(),
            burn_in,
        });
    }
    let steps = note_indices[burn_in..]
        .iter()
        .map(|&t| {
            let context = &events[t.saturating_sub(context_len)..t];
            match mode {
                EntropyMode::Nll => model.log_probs(context, &events[t]).map(|_, lp| -lp),
                EntropyMode::Predictive => model.predict_next(context).entropies(),
            }
        })
        .collect();
    Ok(EntropyTrace {
        mode,
        context_len,
        burn_in,
        note_events: note_indices.len(),
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub piece_id: String,
    pub model_id: String,
    pub mode: EntropyMode,
    pub normalization: Normalization,
    pub units: String,
    pub context_len: usize,
    pub burn_in: usize,
    pub span_beats: f64,
    pub notes_x: usize,
    pub notes_y: usize,
    pub notes_xy: usize,
    pub total_flow: f64,
    /// H(X | past X) per field.
    pub h_x: PerField<f64>,
    pub h_y: PerField<f64>,
    pub h_xy: PerField<f64>,
    /// `h_x + h_y - h_xy`, field by field.
    pub flow: PerField<f64>,
    /// Raw per-event means behind `h_x`, in nats/event.
    pub mean_x: PerField<f64>,
    pub mean_y: PerField<f64>,
    pub mean_xy: PerField<f64>,
}

impl FlowReport {
    fn from_means(
        piece_id: &str,
        model_id: &str,
        params: &FlowParams,
        span_beats: f64,
        traces: [&EntropyTrace; 3],
    ) -> FlowReport {
        let [tx, ty, txy] = traces;
        let scale = |t: &EntropyTrace| match params.normalization {
            Normalization::PerBeat => t.note_events as f64 / span_beats,
            Normalization::PerEvent => 1.0,
        };
        let (mean_x, mean_y, mean_xy) = (tx.means(), ty.means(), txy.means());
        let (sx, sy, sxy) = (scale(tx), scale(ty), scale(txy));
        let h_x = mean_x.map(|_, m| m * sx);
        let h_y = mean_y.map(|_, m| m * sy);
        let h_xy = mean_xy.map(|_, m| m * sxy);
        let flow = PerField::from_fn(|f| h_x[f] + h_y[f] - h_xy[f]);
        FlowReport {
            piece_id: piece_id.to_string(),
            model_id: model_id.to_string(),
            mode: params.mode,
            normalization: params.normalization,
            units: params.normalization.units().to_string(),
            context_len: params.context_len,
            burn_in: params.burn_in,
            span_beats,
            notes_x: tx.note_events,
            notes_y: ty.note_events,
            notes_xy: txy.note_events,
            total_flow: flow.total(),
            h_x,
            h_y,
            h_xy,
            flow,
            mean_x,
            mean_y,
            mean_xy,
        }
    }

    /// The same report with the X and Y slots exchanged.
    pub fn swapped(&self) -> FlowReport {
        FlowReport {
            h_x: self.h_y,
            h_y: self.h_x,
            mean_x: self.mean_y,
            mean_y: self.mean_x,
            notes_x: self.notes_y,
            notes_y: self.notes_x,
            ..self.clone()
        }
    }

    /// Converts every entropy and flow value from nats to bits.
    pub fn to_bits(&self) -> FlowReport {
        if self.units.starts_with("bits") {
            return self.clone();
        }
        let b = |v: &PerField<f64>| v.map(|_, x| x / LN_2);
        FlowReport {
            units: self.units.replacen("nats", "bits", 1),
            total_flow: self.total_flow / LN_2,
            h_x: b(&self.h_x),
            h_y: b(&self.h_y),
            h_xy: b(&self.h_xy),
            flow: b(&self.flow),
            mean_x: b(&self.mean_x),
            mean_y: b(&self.mean_y),
            mean_xy: b(&self.mean_xy),
            ..self.clone()
        }
    }

    /// Structured text record (TOML).
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

/// Scores voices `x` and `y` and the merged score with identical settings.
///
/// Merging and the instrument header are order-independent, so swapping
/// `x` and `y` yields the same report with the X and Y slots exchanged
/// (see [`FlowReport::swapped`]), unless `remap_shared_program` is set.
pub fn information_flow(
    model: &ContextModel,
    piece_id: &str,
    x: &Track,
    y: &Track,
    params: &FlowParams,
) -> Result<FlowReport> {
    let grid = model.grid();
    let remapped;
    let y = if params.remap_shared_program {
        remapped = y.remapped_against(x);
        &remapped
    } else {
        y
    };
    let label = |stream: &str| {
        let stream = stream.to_string();
        move |e: Error| match e {
            Error::TooShort { notes, burn_in, .. } => Error::TooShort {
                stream: format!("{stream} of `{piece_id}`"),
                notes,
                burn_in,
            },
            Error::EmptySequence => Error::IneligiblePiece {
                source_id: piece_id.to_string(),
                reason: format!("{stream} has no notes"),
            },
            other => other,
        }
    };
    let seq_x = encode(&[x], grid).map_err(label("X"))?;
    let seq_y = encode(&[y], grid).map_err(label("Y"))?;
    let merged = merge_tracks(x, y);
    let seq_xy = encode(&[&merged], grid).map_err(label("XY"))?;

    let score = |seq: &EventSequence| {
        conditional_entropy(model, seq, params.context_len, params.burn_in, params.mode)
    };
    let (tx, (ty, txy)) = rayon::join(|| score(&seq_x), || rayon::join(|| score(&seq_y), || score(&seq_xy)));
    let tx = tx.map_err(label("X"))?;
    let ty = ty.map_err(label("Y"))?;
    let txy = txy.map_err(label("XY"))?;

    let span = span_beats(&merged, &grid);
    Ok(FlowReport::from_means(piece_id, model.id(), params, span, [&tx, &ty, &txy]))
}

/// Span-weighted pooling of several reports on consecutive excerpts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledFlow {
    pub span_beats: f64,
    pub h_x: PerField<f64>,
    pub h_y: PerField<f64>,
    pub h_xy: PerField<f64>,
    pub flow: PerField<f64>,
    pub total_flow: f64,
}

pub fn pool_reports(reports: &[FlowReport]) -> PooledFlow {
    let span: f64 = reports.iter().map(|r| r.span_beats).sum();
    let pool = |pick: fn(&FlowReport) -> &PerField<f64>| {
        PerField::from_fn(|f| reports.iter().map(|r| pick(r)[f] * r.span_beats).sum::<f64>() / span)
    };
    let h_x = pool(|r| &r.h_x);
    let h_y = pool(|r| &r.h_y);
    let h_xy = pool(|r| &r.h_xy);
    let flow = PerField::from_fn(|f| h_x[f] + h_y[f] - h_xy[f]);
    PooledFlow {
        span_beats: span,
        h_x,
        h_y,
        h_xy,
        total_flow: flow.total(),
        flow,
    }
}
