//! Sampling continuations from a [`ContextModel`].

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{validate, Event, EventKind, EventSequence, Field};
use crate::model::ContextModel;

/// Samples `steps` note events after `prime`, field by field, at temperature 1.
///
/// The type field is forced to "note" and durations are drawn from the
/// note-valid range `1..=max_dur`. Events are returned in sampling order.
pub fn sample_notes(model: &ContextModel, prime: &[Event], steps: usize, seed: u64) -> Result<Vec<Event>> {
    let grid = model.grid();
    validate(prime, &grid, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = prime.to_vec();
    let mut sampled = Vec::with_capacity(steps);
    for _ in 0..steps {
        let window = &history[history.len().saturating_sub(model.order())..];
        let dists = model.predict_next(window);
        let mut draw = |field: Field| -> u32 {
            let mut weights = dists.get(field).to_vec();
            if field == Field::Duration {
                weights[0] = 0.0;
            }
            WeightedIndex::new(&weights)
                .expect("smoothed distributions have positive mass")
                .sample(&mut rng) as u32
        };
        let event = Event {
            kind: EventKind::Note,
            beat: draw(Field::Beat),
            position: draw(Field::Position),
            pitch: draw(Field::Pitch),
            duration: draw(Field::Duration),
            instrument: draw(Field::Instrument),
        };
        history.push(event);
        sampled.push(event);
    }
    Ok(sampled)
}

/// Continues `prime` by `steps` sampled notes and closes the sequence.
///
/// The result is canonicalized: notes sorted and any newly sampled
/// instruments added to the header. With `steps = 0` it is the prime plus
/// an end event.
pub fn generate(model: &ContextModel, prime: &[Event], steps: usize, seed: u64) -> Result<EventSequence> {
    let sampled = sample_notes(model, prime, steps, seed)?;
    let header: Vec<u8> = prime
        .iter()
        .filter(|e| e.kind == EventKind::Instrument)
        .map(|e| e.instrument as u8)
        .collect();
    let notes: Vec<_> = prime.iter().chain(&sampled).filter_map(Event::to_note).collect();
    EventSequence::from_parts(&header, &notes, model.grid()).map_err(|e| match e {
        Error::Structure { index, reason } => Error::Structure {
            index,
            reason: format!("generated sequence: {reason}"),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Grid;
    use crate::event::encode;
    use crate::piece::{QuantNote, Track};

    fn alternating(len: usize) -> EventSequence {
        let notes = (0..len)
            .map(|i| QuantNote {
                beat: (i / 2) as u32,
                position: (i % 2) as u32 * 6,
                pitch: if i % 2 == 0 { 60 } else { 67 },
                duration: 6,
                program: 0,
            })
            .collect();
        encode(&[&Track::new(notes)], Grid::default()).unwrap()
    }

    #[test]
    fn zero_steps_returns_prime_and_end() {
        let model = ContextModel::train(&[alternating(20)], 2, 1.0).unwrap();
        let seq = alternating(8);
        let out = generate(&model, seq.without_end(), 0, 1).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn same_seed_same_output() {
        let model = ContextModel::train(&[alternating(200)], 3, 1.0).unwrap();
        let prime = alternating(6);
        let a = generate(&model, prime.without_end(), 50, 9).unwrap();
        let b = generate(&model, prime.without_end(), 50, 9).unwrap();
        let c = generate(&model, prime.without_end(), 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.note_count(), 56);
    }

    #[test]
    fn rejects_incomplete_header() {
        let model = ContextModel::new(2, 1.0, Grid::default()).unwrap();
        assert!(sample_notes(&model, &[Event::start()], 3, 0).is_err());
    }

    #[test]
    fn pitch_bigrams_follow_model_conditionals() {
        // A two-note alternation: after 60 comes 67 and vice versa. Sampled
        // transition frequencies must match the model's own conditional
        // probability of the alternation.
        let corpus: Vec<_> = (0..8).map(|_| alternating(500)).collect();
        let model = ContextModel::train(&corpus, 2, 1.0).unwrap();
        let prime = alternating(4);
        let sampled = sample_notes(&model, prime.without_end(), 10_000, 42).unwrap();

        let mut history = prime.without_end().to_vec();
        let mut expected = 0.0;
        let mut observed = 0usize;
        let mut pairs = 0usize;
        for e in &sampled {
            let last = *history.last().unwrap();
            if last.is_note() && (last.pitch == 60 || last.pitch == 67) {
                let window = &history[history.len() - 2..];
                let other = if last.pitch == 60 { 67 } else { 60 };
                expected += model.predict_next(window).get(Field::Pitch)[other as usize];
                observed += (e.pitch == other) as usize;
                pairs += 1;
            }
            history.push(*e);
        }
        let expected = expected / pairs as f64;
        let observed = observed as f64 / pairs as f64;
        assert!(pairs > 5000);
        assert!((observed - expected).abs() <= 0.05 * expected, "observed {observed}, expected {expected}");
        // The training data alternates every time.
        assert!(observed >= 0.95, "observed alternation rate {observed}");
    }
}
