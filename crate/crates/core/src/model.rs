//! Count-based back-off context model over six-field events.
//!
//! Given the events preceding a position, the model predicts one
//! distribution per field for the next event. The six outputs are
//! conditionally independent given the context.
//!
//! # Estimation
//!
//! Counts are kept for every context of the last `j` events, `j = 0..=k`.
//! The prediction interpolates from the shortest context outwards:
//!
//! ```text
//! P_{-1}(v) = 1 / |V_f|
//! P_j(v)    = (c_j(v) + λ · P_{j-1}(v)) / (n_j + λ)
//! ```
//!
//! where `c_j(v)` is how often value `v` of field `f` followed the length-`j`
//! context and `n_j` is how often the context was seen. The recursion stops
//! at the longest context that occurred in training. Every value keeps
//! positive mass.
//!
//! # Relative beats
//!
//! Absolute beat indices never repeat within a piece, so the model works
//! with beats relative to the most recent context event: context events
//! are keyed by how many beats before it they lie, and the beat field is
//! predicted as an offset from it. Offsets are taken modulo `max_beat`,
//! which makes the mapping to absolute beats a bijection and keeps the
//! beat distribution over the full `[0, max_beat)` vocabulary.
//!
//! Context keys are 64-bit FNV-1a hashes; collisions are possible and
//! accepted.

use std::hash::Hasher;
use std::sync::OnceLock;

use fnv::{FnvHashMap, FnvHasher};

use crate::config::Grid;
use crate::error::{Error, Result};
use crate::event::{Event, EventSequence, Field, PerField};

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_LAMBDA: f64 = 1.0;

const MAGIC: &[u8; 4] = b"IFCM";
const FORMAT_VERSION: u16 = 1;

/// Next-event distributions, one per field, over absolute field values.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDistributions {
    probs: [Vec<f64>; 6],
}

impl FieldDistributions {
    pub fn get(&self, field: Field) -> &[f64] {
        &self.probs[field.index()]
    }

    pub fn entropy(&self, field: Field) -> f64 {
        self.get(field)
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }

    pub fn entropies(&self) -> PerField<f64> {
        PerField::from_fn(|f| self.entropy(f))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    /// (field, value, count), sorted by (field, value).
    observations: Vec<(u8, u32, u64)>,
}

impl ContextCounts {
    fn count(&self, field: Field, value: u32) -> u64 {
        let key = (field as u8, value);
        self.observations
            .binary_search_by_key(&key, |o| (o.0, o.1))
            .map(|i| self.observations[i].2)
            .unwrap_or(0)
    }

    fn field(&self, field: Field) -> &[(u8, u32, u64)] {
        let f = field as u8;
        let lo = self.observations.partition_point(|o| o.0 < f);
        let hi = self.observations.partition_point(|o| o.0 <= f);
        &self.observations[lo..hi]
    }

    fn add(&mut self, targets: &[u32; 6]) {
        self.total += 1;
        for (f, &value) in targets.iter().enumerate() {
            let key = (f as u8, value);
            match self.observations.binary_search_by_key(&key, |o| (o.0, o.1)) {
                Ok(i) => self.observations[i].2 += 1,
                Err(i) => self.observations.insert(i, (f as u8, value, 1)),
            }
        }
    }
}

#[derive(Debug)]
pub struct ContextModel {
    order: usize,
    lambda: f64,
    grid: Grid,
    trained_events: u64,
    table: FnvHashMap<u64, ContextCounts>,
    id: OnceLock<String>,
}

impl Clone for ContextModel {
    fn clone(&self) -> Self {
        ContextModel {
            order: self.order,
            lambda: self.lambda,
            grid: self.grid,
            trained_events: self.trained_events,
            table: self.table.clone(),
            id: OnceLock::new(),
        }
    }
}

impl PartialEq for ContextModel {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.lambda.to_bits() == other.lambda.to_bits()
            && self.grid == other.grid
            && self.trained_events == other.trained_events
            && self.table == other.table
    }
}

impl ContextModel {
    /// An untrained model: every prediction is uniform.
    pub fn new(order: usize, lambda: f64, grid: Grid) -> Result<Self> {
        grid.validate()?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        Ok(ContextModel {
            order,
            lambda,
            grid,
            trained_events: 0,
            table: FnvHashMap::default(),
            id: OnceLock::new(),
        })
    }

    /// Trains on every event of every sequence. Deterministic.
    pub fn train(corpus: &[EventSequence], order: usize, lambda: f64) -> Result<Self> {
        let first = corpus
            .first()
            .ok_or_else(|| Error::CorpusTooSmall("training corpus is empty".into()))?;
        let grid = first.grid();
        let mut model = ContextModel::new(order, lambda, grid)?;
        for (i, seq) in corpus.iter().enumerate() {
            if seq.grid() != grid {
                return Err(Error::VocabMismatch(format!(
                    "sequence {i} uses {:?}, corpus started with {:?}",
                    seq.grid(),
                    grid
                )));
            }
            model.observe(seq.events())?;
        }
        Ok(model)
    }

    /// Adds one run of events. Each event is counted under every context
    /// length from 0 up to `min(k, position)`.
    pub fn observe(&mut self, events: &[Event]) -> Result<()> {
        for (i, e) in events.iter().enumerate() {
            for field in Field::ALL {
                if e.get(field) as usize >= field.vocab_size(&self.grid) {
                    return Err(Error::VocabMismatch(format!(
                        "event {i}: {field} value {} outside vocabulary",
                        e.get(field)
                    )));
                }
            }
        }
        self.id = OnceLock::new();
        let mut keys = Vec::with_capacity(self.order + 1);
        for t in 0..events.len() {
            let context = &events[t - t.min(self.order)..t];
            self.context_keys(context, &mut keys);
            let targets = self.targets(context, &events[t]);
            for key in &keys {
                self.table.entry(*key).or_default().add(&targets);
            }
            self.trained_events += 1;
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn trained_events(&self) -> u64 {
        self.trained_events
    }

    pub fn context_count(&self) -> usize {
        self.table.len()
    }

    /// Content hash of the serialized model, as 16 hex digits.
    pub fn id(&self) -> &str {
        self.id.get_or_init(|| {
            let mut h = FnvHasher::default();
            h.write(&self.to_bytes());
            format!("{:016x}", h.finish())
        })
    }

    fn anchor(context: &[Event]) -> u32 {
        context.last().map_or(0, |e| e.beat)
    }

    fn wrap(&self, value: i64) -> u32 {
        value.rem_euclid(self.grid.max_beat as i64) as u32
    }

    /// Keys for the last 0..=min(k, len) context events, shortest first.
    fn context_keys(&self, context: &[Event], keys: &mut Vec<u64>) {
        keys.clear();
        let anchor = Self::anchor(context) as i64;
        let mut h = FnvHasher::default();
        h.write_u8(0xC7);
        keys.push(h.finish());
        for e in context.iter().rev().take(self.order) {
            let mut fields = e.fields();
            fields[Field::Beat.index()] = self.wrap(anchor - e.beat as i64);
            for v in fields {
                h.write_u32(v);
            }
            keys.push(h.finish());
        }
    }

    /// Field values the model predicts for `next`, with the beat made relative.
    fn targets(&self, context: &[Event], next: &Event) -> [u32; 6] {
        let mut t = next.fields();
        t[Field::Beat.index()] = self.wrap(next.beat as i64 - Self::anchor(context) as i64);
        t
    }

    /// Matched count tables, shortest context first.
    fn chain<'a>(&'a self, context: &[Event]) -> Vec<&'a ContextCounts> {
        let mut keys = Vec::with_capacity(self.order + 1);
        self.context_keys(context, &mut keys);
        keys.iter()
            .map_while(|k| self.table.get(k).filter(|c| c.total > 0))
            .collect()
    }

    fn interpolate(&self, chain: &[&ContextCounts], field: Field, value: u32) -> f64 {
        let mut p = 1.0 / field.vocab_size(&self.grid) as f64;
        for c in chain {
            p = (c.count(field, value) as f64 + self.lambda * p) / (c.total as f64 + self.lambda);
        }
        p
    }

    /// Natural-log probability of each field of `next` given `context`.
    pub fn log_probs(&self, context: &[Event], next: &Event) -> PerField<f64> {
        let chain = self.chain(context);
        let targets = self.targets(context, next);
        PerField::from_fn(|f| self.interpolate(&chain, f, targets[f.index()]).ln())
    }

    /// Full next-event distributions given `context` (which may be empty).
    pub fn predict_next(&self, context: &[Event]) -> FieldDistributions {
        let chain = self.chain(context);
        let probs = Field::ALL.map(|field| {
            let size = field.vocab_size(&self.grid);
            let mut p = vec![1.0 / size as f64; size];
            for c in &chain {
                let denom = c.total as f64 + self.lambda;
                let keep = self.lambda / denom;
                p.iter_mut().for_each(|x| *x *= keep);
                for &(_, value, count) in c.field(field) {
                    p[value as usize] += count as f64 / denom;
                }
            }
            if field == Field::Beat {
                let anchor = Self::anchor(context) as usize;
                p.rotate_right(anchor % size);
            }
            p
        });
        FieldDistributions { probs }
    }

    /// Versioned little-endian binary form. Identical models give identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut keys: Vec<u64> = self.table.keys().copied().collect();
        keys.sort_unstable();
        let mut body = Vec::new();
        for key in &keys {
            let c = &self.table[key];
            body.extend_from_slice(&key.to_le_bytes());
            body.extend_from_slice(&c.total.to_le_bytes());
            body.extend_from_slice(&(c.observations.len() as u32).to_le_bytes());
            for &(field, value, count) in &c.observations {
                body.push(field);
                body.extend_from_slice(&value.to_le_bytes());
                body.extend_from_slice(&count.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(body.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.order as u32).to_le_bytes());
        out.extend_from_slice(&self.lambda.to_le_bytes());
        out.extend_from_slice(&self.grid.r.to_le_bytes());
        out.extend_from_slice(&self.grid.max_beat.to_le_bytes());
        out.extend_from_slice(&self.grid.max_dur.to_le_bytes());
        out.extend_from_slice(&self.trained_events.to_le_bytes());
        out.extend_from_slice(&(keys.len() as u64).to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let order = u32::from_le_bytes(r.array()?) as usize;
        let lambda = f64::from_le_bytes(r.array()?);
        let grid = Grid {
            r: u32::from_le_bytes(r.array()?),
            max_beat: u32::from_le_bytes(r.array()?),
            max_dur: u32::from_le_bytes(r.array()?),
        };
        let trained_events = u64::from_le_bytes(r.array()?);
        let context_count = u64::from_le_bytes(r.array()?);
        let body_len = u64::from_le_bytes(r.array()?) as usize;
        if r.bytes.len() - r.pos != body_len {
            return Err(Error::ModelFormat(format!(
                "body length {body_len} does not match {} remaining bytes",
                r.bytes.len() - r.pos
            )));
        }
        let mut model = ContextModel::new(order, lambda, grid)
            .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
        model.trained_events = trained_events;
        let mut previous_key: Option<u64> = None;
        for _ in 0..context_count {
            let key = u64::from_le_bytes(r.array()?);
            if previous_key.is_some_and(|p| p >= key) {
                return Err(Error::ModelFormat("context keys not ascending".into()));
            }
            previous_key = Some(key);
            let total = u64::from_le_bytes(r.array()?);
            let n = u32::from_le_bytes(r.array()?) as usize;
            let mut observations = Vec::with_capacity(n.min(1 << 16));
            let mut sums = [0u64; 6];
            for _ in 0..n {
                let field = r.take(1)?[0];
                let value = u32::from_le_bytes(r.array()?);
                let count = u64::from_le_bytes(r.array()?);
                let f = *Field::ALL
                    .get(field as usize)
                    .ok_or_else(|| Error::ModelFormat(format!("field index {field}")))?;
                if value as usize >= f.vocab_size(&grid) || count == 0 {
                    return Err(Error::ModelFormat(format!("bad {f} observation {value}x{count}")));
                }
                if observations.last().is_some_and(|&(pf, pv, _)| (pf, pv) >= (field, value)) {
                    return Err(Error::ModelFormat("observations not ascending".into()));
                }
                sums[field as usize] += count;
                observations.push((field, value, count));
            }
            if sums.iter().any(|s| *s != total) {
                return Err(Error::ModelFormat(format!("counts under context {key:016x} do not sum to its total")));
            }
            model.table.insert(key, ContextCounts { total, observations });
        }
        if r.pos != r.bytes.len() {
            return Err(Error::ModelFormat("trailing bytes".into()));
        }
        Ok(model)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::ModelFormat(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{encode, EventKind};
    use crate::piece::{QuantNote, Track};
    use proptest::prelude::*;

    fn note_event(beat: u32, pitch: u32) -> Event {
        Event {
            kind: EventKind::Note,
            beat,
            position: 0,
            pitch,
            duration: 12,
            instrument: 0,
        }
    }

    fn melody(pitches: &[u8]) -> EventSequence {
        let notes = pitches
            .iter()
            .enumerate()
            .map(|(i, &p)| QuantNote {
                beat: i as u32,
                position: 0,
                pitch: p,
                duration: 12,
                program: 0,
            })
            .collect();
        encode(&[&Track::new(notes)], Grid::default()).unwrap()
    }

    #[test]
    fn untrained_is_uniform() {
        let model = ContextModel::new(3, 1.0, Grid::default()).unwrap();
        let d = model.predict_next(&[note_event(5, 60)]);
        for field in Field::ALL {
            let size = field.vocab_size(&Grid::default());
            assert!(d.get(field).iter().all(|p| (p - 1.0 / size as f64).abs() < 1e-15));
        }
        assert!((d.entropy(Field::Pitch) - 128f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unigram_counts_total_training_events() {
        let corpus = vec![melody(&[60, 62, 64]), melody(&[60, 60])];
        let model = ContextModel::train(&corpus, 2, 1.0).unwrap();
        let unigram = model.table.values().find(|c| c.total == model.trained_events).unwrap();
        assert_eq!(model.trained_events, (corpus[0].len() + corpus[1].len()) as u64);
        for field in Field::ALL {
            let sum: u64 = unigram.field(field).iter().map(|o| o.2).sum();
            assert_eq!(sum, model.trained_events);
        }
    }

    #[test]
    fn degenerate_corpus_has_single_value_per_field() {
        let e = note_event(0, 64);
        let mut model = ContextModel::new(2, 1.0, Grid::default()).unwrap();
        model.observe(&vec![e; 50]).unwrap();
        let mut h = FnvHasher::default();
        h.write_u8(0xC7);
        let unigram = &model.table[&h.finish()];
        for field in Field::ALL {
            assert_eq!(unigram.field(field).len(), 1);
        }
    }

    #[test]
    fn repeated_event_concentrates_mass() {
        // After N observations the smoothing formula leaves at least N/(N+1)
        // on the observed value at every back-off level.
        let n = 200;
        let e = note_event(0, 67);
        let mut model = ContextModel::new(4, 1.0, Grid::default()).unwrap();
        model.observe(&vec![e; n]).unwrap();
        let d = model.predict_next(&[e; 6]);
        let bound = n as f64 / (n as f64 + 1.0);
        assert!(d.get(Field::Pitch)[67] >= bound);
        assert!(model.log_probs(&[e; 6], &e)[Field::Pitch].exp() >= bound);
    }

    #[test]
    fn unseen_context_falls_back_to_unigram() {
        let model = ContextModel::train(&[melody(&[60, 62, 64, 65, 67])], 3, 1.0).unwrap();
        let unseen = [note_event(3, 20), note_event(4, 21)];
        assert_eq!(model.predict_next(&unseen).get(Field::Pitch), model.predict_next(&[]).get(Field::Pitch));
        let manual: Vec<f64> = {
            let c = model.chain(&[]);
            assert_eq!(c.len(), 1);
            (0..128).map(|v| model.interpolate(&c, Field::Pitch, v)).collect()
        };
        for (a, b) in model.predict_next(&unseen).get(Field::Pitch).iter().zip(&manual) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn beat_distribution_is_relative_to_last_event() {
        let model = ContextModel::train(&[melody(&[60; 30])], 2, 1.0).unwrap();
        let context = [note_event(10, 60), note_event(11, 60)];
        let d = model.predict_next(&context);
        let beat = d.get(Field::Beat);
        let argmax = (0..beat.len()).max_by(|&a, &b| beat[a].total_cmp(&beat[b])).unwrap();
        assert_eq!(argmax, 12);
        let lp = model.log_probs(&context, &note_event(12, 60))[Field::Beat];
        assert!((lp.exp() - beat[12]).abs() < 1e-12);
    }

    #[test]
    fn dense_and_pointwise_agree() {
        let corpus = vec![melody(&[60, 62, 64, 62, 60, 67, 65, 64, 62, 60])];
        let model = ContextModel::train(&corpus, 3, 0.5).unwrap();
        let events = corpus[0].events();
        for t in 1..events.len() {
            let context = &events[..t];
            let d = model.predict_next(context);
            let lp = model.log_probs(context, &events[t]);
            for field in Field::ALL {
                let value = events[t].get(field) as usize;
                assert!((d.get(field)[value].ln() - lp[field]).abs() < 1e-12, "t={t} {field}");
            }
        }
    }

    #[test]
    fn training_rejects_mixed_grids() {
        let a = melody(&[60]);
        let b = encode(
            &[&Track::new(vec![QuantNote { beat: 0, position: 0, pitch: 60, duration: 4, program: 0 }])],
            Grid::new(4, 64, 16).unwrap(),
        )
        .unwrap();
        assert!(matches!(ContextModel::train(&[a, b], 2, 1.0), Err(Error::VocabMismatch(_))));
        assert!(ContextModel::train(&[], 2, 1.0).is_err());
    }

    #[test]
    fn serialization_is_deterministic_and_lossless() {
        let corpus = vec![melody(&[60, 62, 64, 65]), melody(&[72, 71, 69])];
        let a = ContextModel::train(&corpus, 3, 1.0).unwrap();
        let b = ContextModel::train(&corpus, 3, 1.0).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.id(), b.id());
        let loaded = ContextModel::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(loaded, a);
        let context = &corpus[0].events()[..5];
        assert_eq!(loaded.predict_next(context), a.predict_next(context));
    }

    #[test]
    fn corrupt_model_files_rejected() {
        let bytes = ContextModel::train(&[melody(&[60, 62])], 2, 1.0).unwrap().to_bytes();
        assert!(ContextModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(ContextModel::from_bytes(&bad_magic).is_err());
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(ContextModel::from_bytes(&bad_version).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ContextModel::from_bytes(&extra).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn distributions_normalized_with_full_support(
            pitches in prop::collection::vec(0u8..128, 1..30),
            order in 0usize..5,
            lambda in 0.05f64..4.0,
            probe in prop::collection::vec((0u32..1024, 0u32..128), 0..6),
        ) {
            let model = ContextModel::train(&[melody(&pitches)], order, lambda).unwrap();
            let mut context: Vec<Event> = probe.iter().map(|&(b, p)| note_event(b, p)).collect();
            context.sort_by_key(|e| (e.beat, e.pitch));
            let d = model.predict_next(&context);
            for field in Field::ALL {
                let sum: f64 = d.get(field).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9, "{} sums to {}", field, sum);
                prop_assert!(d.get(field).iter().all(|p| *p > 0.0));
            }
        }

        #[test]
        fn more_observations_never_lower_the_observed_value(extra in 1usize..40) {
            let e = note_event(0, 50);
            let mut model = ContextModel::new(2, 1.0, Grid::default()).unwrap();
            model.observe(&[e; 5]).unwrap();
            let before = model.log_probs(&[e, e], &e);
            model.observe(&vec![e; extra]).unwrap();
            let after = model.log_probs(&[e, e], &e);
            for field in Field::ALL {
                prop_assert!(after[field] >= before[field] - 1e-15);
            }
        }
    }
}
