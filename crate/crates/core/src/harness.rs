//! Corpus experiments: original versus shuffled voice pairs, the effect of
//! swapping voices, and whether a model prefers its own generations.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{encode, EventSequence, Field, PerField};
use crate::flow::{information_flow, FlowParams, FlowReport};
use crate::generate::sample_notes;
use crate::model::ContextModel;
use crate::piece::{Piece, Track};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    /// The piece the X voice comes from.
    pub piece_id: String,
    pub label: Label,
    /// For negatives, the piece the Y voice was borrowed from.
    pub donor_id: Option<String>,
    pub x: Track,
    pub y: Track,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub source_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub seed: u64,
    pub pairs: Vec<Pair>,
    pub skipped: Vec<Skipped>,
}

impl PairSet {
    pub fn with_label(&self, label: Label) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(move |p| p.label == label)
    }
}

/// Solo encodings of every track plus the encoding of all tracks together.
///
/// A model that will score single voices and merged pairs needs to have
/// seen both kinds of sequence.
pub fn training_sequences(pieces: &[Piece]) -> Result<Vec<EventSequence>> {
    let mut out = Vec::new();
    for piece in pieces {
        let refs: Vec<&Track> = piece.tracks.iter().collect();
        for track in &refs {
            out.push(encode(&[track], piece.grid)?);
        }
        if refs.len() > 1 {
            out.push(encode(&refs, piece.grid)?);
        }
    }
    Ok(out)
}

/// One positive and one negative pair per eligible piece.
///
/// A negative keeps the piece's X voice and borrows Y from another piece
/// chosen uniformly at random; both voices are then cut at the earlier of
/// their final note onsets.
pub fn build_pairs(corpus: &[Piece], seed: u64) -> Result<PairSet> {
    let mut skipped = Vec::new();
    let mut eligible: Vec<(&str, &Track, &Track)> = Vec::new();
    for piece in corpus {
        match piece.split_tracks() {
            Ok((x, y)) => eligible.push((&piece.source_id, x, y)),
            Err(Error::IneligiblePiece { source_id, reason }) => skipped.push(Skipped { source_id, reason }),
            Err(e) => return Err(e),
        }
    }
    if eligible.len() < 2 {
        return Err(Error::CorpusTooSmall(format!(
            "{} eligible piece(s); pairing needs at least 2",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = eligible.len();
    let mut pairs = Vec::with_capacity(2 * n);
    for (i, &(id, x, y)) in eligible.iter().enumerate() {
        pairs.push(Pair {
            piece_id: id.to_string(),
            label: Label::Positive,
            donor_id: None,
            x: x.clone(),
            y: y.clone(),
        });
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (donor_id, _, donor_y) = eligible[j];
        let grid = corpus[0].grid;
        let cut = x.last_onset(&grid).min(donor_y.last_onset(&grid)).unwrap_or(0);
        pairs.push(Pair {
            piece_id: id.to_string(),
            label: Label::Negative,
            donor_id: Some(donor_id.to_string()),
            x: x.truncated(cut, &grid),
            y: donor_y.truncated(cut, &grid),
        });
    }
    Ok(PairSet { seed, pairs, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; zero for fewer than two values.
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let n = values.len();
        if n == 0 {
            return Stats {
                mean: f64::NAN,
                median: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stats { mean, median, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub label: Label,
    pub count: usize,
    pub total_flow: Stats,
    pub flow: PerField<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub piece_id: String,
    pub label: Label,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub label: Label,
    pub donor_id: Option<String>,
    pub report: FlowReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub rows: Vec<ScoredPair>,
    pub failures: Vec<PairFailure>,
    pub skipped: Vec<Skipped>,
    pub summaries: Vec<LabelSummary>,
    /// Welch t-statistic of positive minus negative mean total flow.
    pub t_statistic: Option<f64>,
}

/// The part of a [`BatchReport`] worth printing: everything but the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub scored: usize,
    pub t_statistic: Option<f64>,
    pub summaries: Vec<LabelSummary>,
    pub failures: Vec<PairFailure>,
    pub skipped: Vec<Skipped>,
}

/// Welch's t for `mean(a) - mean(b)`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (sa, sb) = (Stats::of(a), Stats::of(b));
    let se = (sa.std.powi(2) / a.len() as f64 + sb.std.powi(2) / b.len() as f64).sqrt();
    Some((sa.mean - sb.mean) / se)
}

impl BatchReport {
    pub fn total_flows(&self, label: Label) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.report.total_flow)
            .collect()
    }

    pub fn summary(&self) -> BatchSummary {
        BatchSummary {
            scored: self.rows.len(),
            t_statistic: self.t_statistic,
            summaries: self.summaries.clone(),
            failures: self.failures.clone(),
            skipped: self.skipped.clone(),
        }
    }

    /// One row per (pair, field).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["piece_id", "label", "field", "H_X", "H_Y", "H_XY", "flow", "mode", "context_len"])
            .map_err(csv_err)?;
        for row in &self.rows {
            let r = &row.report;
            let mode = match r.mode {
                crate::flow::EntropyMode::Nll => "nll",
                crate::flow::EntropyMode::Predictive => "predictive",
            };
            for f in Field::ALL {
                w.write_record([
                    r.piece_id.clone(),
                    row.label.as_str().to_string(),
                    f.name().to_string(),
                    r.h_x[f].to_string(),
                    r.h_y[f].to_string(),
                    r.h_xy[f].to_string(),
                    r.flow[f].to_string(),
                    mode.to_string(),
                    r.context_len.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores every pair; failures are recorded rather than aborting the batch.
pub fn batch_score(model: &ContextModel, pairs: &PairSet, params: &FlowParams) -> BatchReport {
    let results: Vec<_> = pairs
        .pairs
        .par_iter()
        .map(|p| (p, information_flow(model, &p.piece_id, &p.x, &p.y, params)))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (pair, result) in results {
        match result {
            Ok(report) => rows.push(ScoredPair {
                label: pair.label,
                donor_id: pair.donor_id.clone(),
                report,
            }),
            Err(e) => failures.push(PairFailure {
                piece_id: pair.piece_id.clone(),
                label: pair.label,
                error: e.to_string(),
            }),
        }
    }
    let summaries = [Label::Positive, Label::Negative]
        .into_iter()
        .map(|label| {
            let mine: Vec<&FlowReport> = rows.iter().filter(|r| r.label == label).map(|r| &r.report).collect();
            let totals: Vec<f64> = mine.iter().map(|r| r.total_flow).collect();
            LabelSummary {
                label,
                count: mine.len(),
                total_flow: Stats::of(&totals),
                flow: PerField::from_fn(|f| {
                    let values: Vec<f64> = mine.iter().map(|r| r.flow[f]).collect();
                    Stats::of(&values)
                }),
            }
        })
        .collect();
    let mut report = BatchReport {
        rows,
        failures,
        skipped: pairs.skipped.clone(),
        summaries,
        t_statistic: None,
    };
    report.t_statistic = welch_t(&report.total_flows(Label::Positive), &report.total_flows(Label::Negative));
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub pieces: usize,
    /// Mean squared difference of flow(X, Y) and flow(Y, X), per field.
    pub mse: PerField<f64>,
    pub mse_total: f64,
    pub failures: Vec<PairFailure>,
}

/// Compares each piece's flow with the flow after swapping its voices.
pub fn positional_bias(model: &ContextModel, pieces: &[Piece], params: &FlowParams) -> BiasReport {
    let results: Vec<_> = pieces
        .par_iter()
        .map(|piece| {
            let (x, y) = piece.split_tracks()?;
            let xy = information_flow(model, &piece.source_id, x, y, params)?;
            let yx = information_flow(model, &piece.source_id, y, x, params)?;
            Ok((xy, yx))
        })
        .collect::<Vec<Result<_>>>();
    let mut sums = PerField([0.0; 6]);
    let mut total = 0.0;
    let mut scored = 0;
    let mut failures = Vec::new();
    for (piece, result) in pieces.iter().zip(results) {
        match result {
            Ok((xy, yx)) => {
                for f in Field::ALL {
                    sums[f] += (xy.flow[f] - yx.flow[f]).powi(2);
                }
                total += (xy.total_flow - yx.total_flow).powi(2);
                scored += 1;
            }
            Err(e) => failures.push(PairFailure {
                piece_id: piece.source_id.clone(),
                label: Label::Positive,
                error: e.to_string(),
            }),
        }
    }
    let n = scored.max(1) as f64;
    BiasReport {
        pieces: scored,
        mse: sums.map(|_, s| s / n),
        mse_total: total / n,
        failures,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfEnhancementReport {
    /// `matrix[scorer][generator]`: mean total flow of the generator's
    /// continuations as judged by the scorer. Index 0 is model A.
    pub matrix: [[f64; 2]; 2],
    /// Whether each scorer rates its own generations above the other's.
    pub prefers_own: [bool; 2],
    pub primes_used: usize,
    pub skipped: Vec<Skipped>,
    pub failures: Vec<PairFailure>,
}

/// Each model continues each prime; every (prime, continuation) pair is
/// scored by both models.
pub fn self_enhancement(
    model_a: &ContextModel,
    model_b: &ContextModel,
    primes: &[Track],
    steps: usize,
    params: &FlowParams,
    seed: u64,
) -> Result<SelfEnhancementReport> {
    if model_a.grid() != model_b.grid() {
        return Err(Error::VocabMismatch("the two models use different grids".into()));
    }
    let grid = model_a.grid();
    let models = [model_a, model_b];
    let mut skipped = Vec::new();
    let mut usable = Vec::new();
    for (i, prime) in primes.iter().enumerate() {
        if prime.len() <= params.burn_in {
            skipped.push(Skipped {
                source_id: format!("prime-{i}"),
                reason: format!("{} notes, burn-in needs more than {}", prime.len(), params.burn_in),
            });
        } else {
            usable.push((i, prime));
        }
    }
    let scored: Vec<Result<[[f64; 2]; 2]>> = usable
        .par_iter()
        .map(|&(i, prime)| {
            let prime_seq = encode(&[prime], grid)?;
            let mut cell = [[0.0; 2]; 2];
            for (g, generator) in models.iter().enumerate() {
                let gen_seed = seed.wrapping_add(2 * i as u64 + g as u64);
                let sampled = sample_notes(generator, prime_seq.without_end(), steps, gen_seed)?;
                let continuation: Track = sampled.iter().filter_map(|e| e.to_note()).collect();
                for (s, scorer) in models.iter().enumerate() {
                    let id = format!("prime-{i}-gen{g}");
                    cell[s][g] = information_flow(scorer, &id, prime, &continuation, params)?.total_flow;
                }
            }
            Ok(cell)
        })
        .collect();
    let mut sums = [[0.0; 2]; 2];
    let mut used = 0;
    let mut failures = Vec::new();
    for (&(i, _), result) in usable.iter().zip(scored) {
        match result {
            Ok(cell) => {
                for s in 0..2 {
                    for g in 0..2 {
                        sums[s][g] += cell[s][g];
                    }
                }
                used += 1;
            }
            Err(e) => failures.push(PairFailure {
                piece_id: format!("prime-{i}"),
                label: Label::Positive,
                error: e.to_string(),
            }),
        }
    }
    let n = used.max(1) as f64;
    let matrix = sums.map(|row| row.map(|v| v / n));
    Ok(SelfEnhancementReport {
        prefers_own: [matrix[0][0] > matrix[0][1], matrix[1][1] > matrix[1][0]],
        matrix,
        primes_used: used,
        skipped,
        failures,
    })
}
